"""Shared quadrature rules: Gauss-Legendre segments, log-graded radial rules,
and product rules on spheres and hemispheres.

All rules return plain (nodes, weights) ndarrays so callers can evaluate
vectorized integrands.  Radial rules for annular integrands use a log
substitution, which makes power-law integrands smooth and keeps relative
errors near machine precision with a few dozen nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class QuadConfig:
    """Resolution of the per-ball product rules."""
    n_r: int = 48        # radial nodes (log-graded across annuli)
    n_mu: int = 16       # polar nodes per azimuth
    n_az: int = 24       # azimuthal nodes
    n_z: int = 10        # nodes across graph slivers
    n_sample_r: int = 24       # sampling radii for sup-type reports
    n_sample_dirs: int = 200


DEFAULT_QUAD = QuadConfig()


def gauss_segment(a: float, b: float, order: int):
    """Gauss-Legendre nodes/weights on [a, b]."""
    if not b > a:
        raise ValueError(f"empty segment [{a}, {b}]")
    x, w = np.polynomial.legendre.leggauss(order)
    nodes = 0.5 * (b - a) * x + 0.5 * (a + b)
    weights = 0.5 * (b - a) * w
    return nodes, weights


def gauss_log_segment(a: float, b: float, order: int):
    """Gauss-Legendre in log(rho) on [a, b], a > 0.

    Returns nodes rho_i and weights w_i with sum w_i f(rho_i) ~ int_a^b f drho.
    Power-law integrands rho^k become exponentials in the log variable, so
    this converges spectrally even when b/a spans orders of magnitude.
    """
    if not 0 < a < b:
        raise ValueError(f"log rule needs 0 < a < b, got [{a}, {b}]")
    t, wt = gauss_segment(np.log(a), np.log(b), order)
    rho = np.exp(t)
    return rho, wt * rho


def sphere_rule(n_mu: int, n_az: int, hemisphere: bool = False):
    """Product rule on the unit sphere in R^3 (or its upper half).

    Gauss-Legendre in mu = cos(theta), uniform (trapezoid) in azimuth;
    azimuthal periodicity makes the trapezoid rule spectrally accurate.
    Returns directions (m, 3) and weights summing to 4*pi (2*pi on the
    hemisphere z >= 0).
    """
    lo = 0.0 if hemisphere else -1.0
    mu, wmu = gauss_segment(lo, 1.0, n_mu)
    phi = 2.0 * np.pi * np.arange(n_az) / n_az
    wphi = 2.0 * np.pi / n_az
    s = np.sqrt(1.0 - mu**2)
    dirs = np.empty((n_mu * n_az, 3))
    dirs[:, 0] = np.outer(s, np.cos(phi)).ravel()
    dirs[:, 1] = np.outer(s, np.sin(phi)).ravel()
    dirs[:, 2] = np.repeat(mu, n_az)
    weights = np.repeat(wmu * wphi, n_az)
    return dirs, weights


def polar_chart_rule(r_in: float, r_out: float, n_r: int, n_az: int,
                     log_graded: bool | None = None):
    """Polar product rule on a chart annulus/disk {r_in <= |x'| <= r_out}.

    Weights include the polar Jacobian, so sum w_i f(x_i) ~ int f dx' over
    the planar region.  Annuli (r_in > 0) are log-graded in radius by
    default, which handles integrands singular at the chart origin.
    """
    if r_in < 0 or not r_out > r_in:
        raise ValueError(f"degenerate chart region [{r_in}, {r_out}]")
    if log_graded is None:
        log_graded = r_in > 0
    if log_graded:
        r, wr = gauss_log_segment(r_in, r_out, n_r)
    else:
        r, wr = gauss_segment(r_in, r_out, n_r)
    phi = 2.0 * np.pi * np.arange(n_az) / n_az
    wphi = 2.0 * np.pi / n_az
    pts = np.empty((n_r * n_az, 2))
    pts[:, 0] = np.outer(r, np.cos(phi)).ravel()
    pts[:, 1] = np.outer(r, np.sin(phi)).ravel()
    weights = np.repeat(wr * r * wphi, n_az)
    return pts, weights


def unit_sphere_area(n: int) -> float:
    """Surface area of the unit sphere S^{n-1} in R^n."""
    from scipy.special import gamma
    return float(2.0 * np.pi ** (n / 2.0) / gamma(n / 2.0))


def unit_ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n."""
    from scipy.special import gamma
    return float(np.pi ** (n / 2.0) / gamma(n / 2.0 + 1.0))
