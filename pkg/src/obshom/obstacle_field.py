"""Obstacle sets on the contact face, their capacity-weighted densities,
lattice limit densities, and weak-convergence diagnostics.

Each obstacle carries a per-site weight gamma = capacity / eps^{n-1}.  The
raw density spreads gamma_k / eps over the support ball B_eps(site); the
effective density divides by the unit-ball volume, a normalization chosen
so that the per-ball corrector energy equals the per-ball effective mass
in the small-eps limit and the limit boundary penalty needs no extra
dimensional constant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .capacity import (CapacitySolverParams, PatchSpec, compute_capacity,
                       unit_sphere_area)
from .geometry import DomainSpec, SiteBallQuadrature, SiteLayout
from .quadrature import DEFAULT_QUAD, QuadConfig, unit_ball_volume

OBSTACLE_KINDS = ("model_balls", "surface_patches")

# session cache of unit-size patch capacities, keyed by (shape, aspect)
_UNIT_CAP_CACHE: dict = {}


@dataclass
class ObstacleSet:
    """Model balls T_eps or surface patches S_eps across the contact face."""

    kind: str
    epsilon: float
    layout: SiteLayout
    domain: DomainSpec
    gamma: np.ndarray                  # per-site capacity weights
    r_tilde: np.ndarray                # per-site scaled (equivalent) radii
    patches: list | None = None        # per-site PatchSpec for patch kind

    @property
    def radii(self) -> np.ndarray:
        n = self.domain.dim
        return self.r_tilde * self.epsilon ** ((n - 1.0) / (n - 2.0))

    def membership(self, pts) -> np.ndarray:
        """Exact membership for balls, chart-exact for surface patches."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(len(pts), dtype=bool)
        if self.kind == "model_balls":
            for k, site in enumerate(self.layout.points):
                d2 = np.sum((pts - site) ** 2, axis=-1)
                out |= d2 <= self.radii[k] ** 2 * (1 + 1e-12)
            # the model set is the union of balls intersected with the domain
            out &= pts[:, 2] >= -1e-12
        else:
            for patch in self.patches:
                out |= patch.membership(pts, plane_tol=1e-9)
        return out

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind,
            "epsilon": self.epsilon,
            "gamma": self.gamma.tolist(),
            "r_tilde": self.r_tilde.tolist(),
            "sites": self.layout.points.tolist(),
            "scheme": self.layout.scheme,
            "seed": self.layout.seed,
        })


def build_obstacle(kind: str, layout: SiteLayout, domain: DomainSpec,
                   r_tilde=1.0, patch_shape: str = "flat_disk",
                   patch_scaled_size=0.02, r_tilde_bounds=(0.05, 20.0),
                   capacity_params: CapacitySolverParams | None = None) -> ObstacleSet:
    """Assemble an obstacle set with capacity-normalized weights.

    Model kind: gamma_k = (n-2)|S^{n-1}| r_tilde_k^{n-2}, the capacity of
    the ball of radius r_k divided by eps^{n-1}.  Patch kind: each site
    carries a patch of size patch_scaled_size * eps^{(n-1)/(n-2)}; its
    capacity comes from the exterior solver (computed once per shape at
    unit size and rescaled, since capacity scales like size^{n-2}).
    """
    if kind not in OBSTACLE_KINDS:
        raise ValueError(f"unknown obstacle kind {kind!r}")
    n = domain.dim
    eps = layout.epsilon
    K = layout.count
    crit = eps ** ((n - 1.0) / (n - 2.0))

    if kind == "model_balls":
        rt = np.broadcast_to(np.asarray(r_tilde, dtype=float), (K,)).copy()
        if rt.min() < r_tilde_bounds[0] or rt.max() > r_tilde_bounds[1]:
            raise ValueError(f"r_tilde outside configured bounds {r_tilde_bounds}")
        gamma = (n - 2) * unit_sphere_area(n) * rt ** (n - 2)
        return ObstacleSet(kind, eps, layout, domain, gamma, rt)

    if n != 3:
        raise ValueError("surface patches use the 3-D capacity solver")
    scaled = patch_scaled_size
    aspect = None
    if patch_shape == "flat_ellipse":
        aspect = scaled[1] / scaled[0]
        key = (patch_shape, round(aspect, 12))
        unit_size = (1.0, aspect)
    else:
        key = (patch_shape, None)
        unit_size = 1.0
    if key not in _UNIT_CAP_CACHE:
        res, _ = compute_capacity(PatchSpec(patch_shape, unit_size), capacity_params)
        _UNIT_CAP_CACHE[key] = res.cap
    unit_cap = _UNIT_CAP_CACHE[key]

    patches = []
    gamma = np.empty(K)
    for k, site in enumerate(layout.points):
        if patch_shape == "flat_ellipse":
            size = (scaled[0] * crit, scaled[1] * crit)
            lead = scaled[0]
        else:
            size = scaled * crit
            lead = scaled
        patch = PatchSpec(patch_shape, size, center=site, epsilon=eps,
                          containment_m=2.0 * lead, dim=n)
        patches.append(patch)
        # capacity scales like size^{n-2} under dilation
        lam = patch.extent / PatchSpec(patch_shape, unit_size).extent
        gamma[k] = unit_cap * lam ** (n - 2) / eps ** (n - 1)
    rt = np.array([
        (g * eps ** (n - 1) / ((n - 2) * unit_sphere_area(n))) ** (1.0 / (n - 2)) / crit
        for g in gamma])
    if rt.min() < r_tilde_bounds[0] or rt.max() > r_tilde_bounds[1]:
        raise ValueError(f"equivalent r_tilde outside configured bounds {r_tilde_bounds}")
    return ObstacleSet(kind, eps, layout, domain, gamma, rt, patches)


@dataclass
class DensityField:
    """Per-site weights spread over the support balls B_eps(site) cap D.

    normalization "effective" gives weight gamma / (omega_n * eps) per
    site; "raw" gives gamma / eps.
    """

    epsilon: float
    layout: SiteLayout
    domain: DomainSpec
    gamma: np.ndarray
    normalization: str = "effective"

    @property
    def site_weights(self) -> np.ndarray:
        n = self.domain.dim
        scale = unit_ball_volume(n) if self.normalization == "effective" else 1.0
        return self.gamma / (scale * self.epsilon)

    def value(self, pts) -> np.ndarray:
        """Pointwise density (sum of indicator-ball contributions)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(len(pts))
        cw = self.site_weights
        for k, site in enumerate(self.layout.points):
            d2 = np.sum((pts - site) ** 2, axis=-1)
            out += np.where(d2 <= self.epsilon**2, cw[k], 0.0)
        return out

    def pair(self, fn, quad: QuadConfig = DEFAULT_QUAD) -> float:
        """Integral of fn against the density, by per-ball quadrature."""
        total = 0.0
        cw = self.site_weights
        for k, site in enumerate(self.layout.points):
            geom = SiteBallQuadrature(self.domain, site, quad)
            pts, w = geom.shell_volume_rule(0.0, self.epsilon)
            total += cw[k] * float(np.sum(w * fn(pts)))
        return total

    def total_mass(self) -> float:
        """Exact total mass for flat domains (half-ball supports)."""
        n = self.domain.dim
        if not self.domain.is_flat:
            return self.pair(lambda x: np.ones(len(x)))
        half_ball = 0.5 * unit_ball_volume(n) * self.epsilon**n
        return float(np.sum(self.site_weights) * half_ball)

    def to_json(self) -> str:
        return json.dumps({
            "epsilon": self.epsilon,
            "gamma": self.gamma.tolist(),
            "sites": self.layout.points.tolist(),
            "normalization": self.normalization,
        })


def density_field(obs: ObstacleSet, normalization: str = "effective") -> DensityField:
    if normalization not in ("effective", "raw"):
        raise ValueError(f"unknown normalization {normalization!r}")
    return DensityField(obs.epsilon, obs.layout, obs.domain, obs.gamma,
                        normalization)


def pair_density(df: DensityField, test_fn, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """Integral of a smooth test function against the density."""
    return df.pair(test_fn, quad=quad)


def analytic_limit_density(spacing_factor: float, gamma: float, n: int = 3) -> float:
    """Limit surface density of a flat lattice layout with uniform gamma.

    Each pitch-(s*eps) cell carries effective mass (gamma/2) eps^{n-1} on
    area (s*eps)^{n-1}, so the limit is gamma / (2 s^{n-1}).
    """
    return gamma / (2.0 * spacing_factor ** (n - 1))


def hminus_proxy(df: DensityField, limit_density: float, grid) -> float:
    """Energy-norm distance proxy between the eps-density and its limit.

    Solves the Poisson problem -Lap v = (volume density) - (limit surface
    density lumped onto the node layer adjacent to the contact face) with
    v = 0 on the box boundary, and returns ||grad v||_{L2}.  The load pair
    has matching total mass for lattice layouts, so the proxy measures
    only the eps-scale redistribution and shrinks as eps -> 0.
    """
    from . import pde
    h = grid.h
    if df.epsilon < 4.0 * h:
        raise ValueError(f"grid too coarse: eps = {df.epsilon} < 4h = {4*h}")

    load = np.zeros(grid.shape)
    xs, ys, zs = grid.axes()
    cw = df.site_weights
    eps = df.epsilon
    for k, site in enumerate(df.layout.points):
        dx = xs - site[0]
        dy = ys - site[1]
        dz = zs - site[2]
        if grid.periodic:
            dx = dx - np.round(dx)
            dy = dy - np.round(dy)
        d2 = dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2
        load += np.where(d2 <= eps**2, cw[k], 0.0)
    nodal = load * grid.volume_weights()

    # limit measure on the layer one node above the contact face
    area = grid.face_weights()
    nodal[:, :, 1] -= limit_density * area

    v = pde.solve_poisson_dirichlet(grid, nodal)
    return float(np.sqrt(pde.dirichlet_energy(grid, v)))
