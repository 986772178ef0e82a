"""Corrector fields for shrinking boundary obstacles, and the quadrature
engines that verify their limit behavior.

The model corrector is, per site, a truncation of the rescaled fundamental
solution: it equals 1 on the obstacle ball of radius r, interpolates
radially as (|x|^{2-n} - eps^{2-n})/(r^{2-n} - eps^{2-n}) across the
annulus r < |x| < eps, and vanishes beyond.  Supporting fields:

* a quadratic auxiliary field whose normal flux on the eps-sphere matches
  the corrector's (it converts sphere flux terms into volume terms),
* a quintic radial bridge switching between two fields across the
  intermediate scale a = eps^{(n-3/2)/(n-2)},
* the stitched corrector, which follows a patch's capacitary potential
  inside the bridge and the model corrector outside it.

All site-scale integrals are evaluated per ball in flat or graph mode;
graph mode clips spheres and volumes against the local height profile.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .capacity import PotentialField
from .geometry import DomainSpec, SiteBallQuadrature, SiteLayout
from .quadrature import (DEFAULT_QUAD, QuadConfig, gauss_log_segment,
                         sphere_rule, unit_ball_volume, unit_sphere_area)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrectorField:
    """Sum of per-site truncated fundamental solutions.

    Per-site inner radii are r_k = r_tilde_k * eps^{(n-1)/(n-2)}, the
    critical scaling at which the total capacity of the obstacle set stays
    finite.  Supports are the disjoint balls B_eps(site).
    """

    epsilon: float
    sites: np.ndarray          # (K, n)
    r_tilde: np.ndarray        # (K,)
    dim: int = 3
    r_tilde_bounds: tuple = (0.01, 100.0)

    def __post_init__(self):
        object.__setattr__(self, "sites", np.atleast_2d(np.asarray(self.sites, dtype=float)))
        rt = np.broadcast_to(np.asarray(self.r_tilde, dtype=float), (len(self.sites),)).copy()
        object.__setattr__(self, "r_tilde", rt)
        c1, c2 = self.r_tilde_bounds
        if len(rt) and (rt.min() < c1 or rt.max() > c2):
            raise ValueError(f"r_tilde outside configured bounds [{c1}, {c2}]")
        if len(rt) and np.any(self.radii >= self.epsilon):
            raise ValueError("degenerate annulus: inner radius reached eps")
        if len(self.sites) > 1:
            d2 = np.sum((self.sites[:, None] - self.sites[None, :]) ** 2, axis=-1)
            np.fill_diagonal(d2, np.inf)
            if d2.min() < (2 * self.epsilon) ** 2 * (1 - 1e-12):
                raise ValueError("site separation below 2*eps: supports overlap")

    @classmethod
    def from_layout(cls, layout: SiteLayout, r_tilde, dim: int = 3,
                    r_tilde_bounds=(0.01, 100.0)) -> "CorrectorField":
        return cls(epsilon=layout.epsilon, sites=layout.points, r_tilde=r_tilde,
                   dim=dim, r_tilde_bounds=r_tilde_bounds)

    @property
    def radii(self) -> np.ndarray:
        n = self.dim
        return self.r_tilde * self.epsilon ** ((n - 1.0) / (n - 2.0))

    def _profile(self, k: int):
        """Radial value/derivative callables for site k."""
        n, eps = self.dim, self.epsilon
        r = self.radii[k]
        denom = r ** (2 - n) - eps ** (2 - n)

        def w(rho):
            rho = np.asarray(rho, dtype=float)
            out = np.zeros_like(rho)
            out[rho <= r] = 1.0
            ann = (rho > r) & (rho < eps)
            out[ann] = (rho[ann] ** (2 - n) - eps ** (2 - n)) / denom
            return out

        def dw(rho):
            rho = np.asarray(rho, dtype=float)
            out = np.zeros_like(rho)
            ann = (rho > r) & (rho < eps)
            out[ann] = (2 - n) * rho[ann] ** (1 - n) / denom
            return out

        return w, dw

    def value_and_grad(self, x):
        """Corrector value and exact radial gradient at x, (m, n) or (n,)."""
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        val = np.zeros(len(pts))
        grad = np.zeros_like(pts)
        for k in range(len(self.sites)):
            q = pts - self.sites[k]
            rho = np.linalg.norm(q, axis=-1)
            near = rho < self.epsilon
            if not near.any():
                continue
            w, dw = self._profile(k)
            val[near] += w(rho[near])
            rr = np.maximum(rho[near], 1e-300)
            grad[near] += (dw(rho[near]) / rr)[:, None] * q[near]
        if x.ndim == 1:
            return float(val[0]), grad[0]
        return val, grad

    def value(self, x):
        return self.value_and_grad(x)[0]


def eval_corrector(field: CorrectorField, x):
    """Value and exact radial gradient of the corrector at x."""
    return field.value_and_grad(x)


@dataclass(frozen=True)
class FluxAuxiliary:
    """Quadratic auxiliary field matching the corrector flux on each
    eps-sphere.

    Per site, q(x) = kappa * (|x - x_k|^2 - eps^2) / (2 eps) inside
    B_eps(x_k) and 0 outside, with kappa = (2-n)/(r_tilde^{2-n} - eps).
    kappa equals the corrector's radial derivative on the eps-sphere, so
    the normal fluxes agree there, while Delta q = kappa * n / eps spreads
    the sphere flux into a volume density.
    """

    field: CorrectorField

    @property
    def kappa(self) -> np.ndarray:
        n = self.field.dim
        return (2.0 - n) / (self.field.r_tilde ** (2 - n) - self.field.epsilon)

    def value_grad_laplacian(self, x):
        f = self.field
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        val = np.zeros(len(pts))
        grad = np.zeros_like(pts)
        lap = np.zeros(len(pts))
        eps, n = f.epsilon, f.dim
        kap = self.kappa
        for k in range(len(f.sites)):
            q = pts - f.sites[k]
            rho2 = np.sum(q**2, axis=-1)
            inside = rho2 <= eps**2
            if not inside.any():
                continue
            val[inside] += kap[k] * (rho2[inside] - eps**2) / (2.0 * eps)
            grad[inside] += (kap[k] / eps) * q[inside]
            lap[inside] += kap[k] * n / eps
        if x.ndim == 1:
            return float(val[0]), grad[0], float(lap[0])
        return val, grad, lap


def eval_flux_aux(aux: FluxAuxiliary, x):
    return aux.value_grad_laplacian(x)


def _smoothstep5(t):
    """Quintic step, 0 -> 1 on [0, 1], two vanishing end derivatives."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def _smoothstep5_d1(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30.0 * t**2 * (t - 1.0) ** 2, 0.0)


def _smoothstep5_d2(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    return np.where(inside, 60.0 * t * (2.0 * t - 1.0) * (t - 1.0), 0.0)


@dataclass(frozen=True)
class BridgeProfile:
    """Radial cut profile: 1 on B_a, 0 outside B_2a, quintic in between.

    The matching radius a = eps^{(n-3/2)/(n-2)} sits between the patch
    scale and eps.  Constants measured by dense 1-D sampling at
    construction: sup|profile'| * a, sup|profile''| * a^2, and the full
    n-dimensional Laplacian bound sup|Delta eta| * a^2.
    """

    epsilon: float
    dim: int = 3
    a: float = field(default=0.0)
    grad_bound: float = field(default=0.0)
    curv_bound: float = field(default=0.0)
    laplacian_bound: float = field(default=0.0)

    def __post_init__(self):
        n = self.dim
        object.__setattr__(self, "a", self.epsilon ** ((n - 1.5) / (n - 2.0)))
        t = np.linspace(0.0, 1.0, 20001)
        d1, d2 = _smoothstep5_d1(t), _smoothstep5_d2(t)
        object.__setattr__(self, "grad_bound", float(np.abs(d1).max()))
        object.__setattr__(self, "curv_bound", float(np.abs(d2).max()))
        lap = -d2 - (n - 1) / (1.0 + t) * d1   # (eta'' + (n-1)/rho eta') * a^2 at rho = a(1+t)
        object.__setattr__(self, "laplacian_bound", float(np.abs(lap).max()))

    def profile(self, rho):
        return 1.0 - _smoothstep5((np.asarray(rho, dtype=float) - self.a) / self.a)

    def profile_d1(self, rho):
        return -_smoothstep5_d1((np.asarray(rho, dtype=float) - self.a) / self.a) / self.a

    def profile_d2(self, rho):
        return -_smoothstep5_d2((np.asarray(rho, dtype=float) - self.a) / self.a) / self.a**2

    def eval(self, x, site):
        """(value, gradient, laplacian) of the bridge centered on site."""
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        q = pts - np.asarray(site, dtype=float)
        rho = np.linalg.norm(q, axis=-1)
        val = self.profile(rho)
        d1 = self.profile_d1(rho)
        rr = np.maximum(rho, 1e-300)
        grad = (d1 / rr)[:, None] * q
        lap = self.profile_d2(rho) + (self.dim - 1) / rr * d1
        lap = np.where((rho > self.a) & (rho < 2 * self.a), lap, 0.0)
        if x.ndim == 1:
            return float(val[0]), grad[0], float(lap[0])
        return val, grad, lap


def eval_bridge(profile: BridgeProfile, x, site):
    return profile.eval(x, site)


@dataclass
class StitchedCorrector:
    """Capacitary potential inside the bridge, model corrector outside.

    Per site, w_hat = eta * psi + (1 - eta) * w where psi is the patch's
    capacitary potential translated to the site, w the model corrector at
    the equivalent radius, and eta the bridge profile.
    """

    field: CorrectorField
    potentials: Sequence[PotentialField]
    bridge: BridgeProfile
    caps: np.ndarray = None    # per-site capacities; default from r_tilde

    def __post_init__(self):
        if len(self.potentials) != len(self.field.sites):
            raise ValueError("need one potential per site")
        if self.caps is None:
            n = self.field.dim
            self.caps = (n - 2) * unit_sphere_area(n) * self.field.radii ** (n - 2)
        self.caps = np.asarray(self.caps, dtype=float)

    def eval(self, x):
        """(value, gradient) of the stitched corrector at x."""
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        val = np.zeros(len(pts))
        grad = np.zeros_like(pts)
        f, br = self.field, self.bridge
        for k in range(len(f.sites)):
            q = pts - f.sites[k]
            rho = np.linalg.norm(q, axis=-1)
            near = rho < f.epsilon
            if not near.any():
                continue
            w, dw = f._profile(k)
            wv = w(rho[near])
            rr = np.maximum(rho[near], 1e-300)
            wg = (dw(rho[near]) / rr)[:, None] * q[near]
            in_bridge = rho[near] < 2 * br.a
            vloc = wv.copy()
            gloc = wg.copy()
            if in_bridge.any():
                sub = pts[near][in_bridge]
                psi = self.potentials[k].value(sub)
                dpsi = self.potentials[k].grad(sub)
                ev, eg, _ = br.eval(sub, f.sites[k])
                vloc[in_bridge] = ev * psi + (1 - ev) * wv[in_bridge]
                gloc[in_bridge] = (ev[:, None] * dpsi + (1 - ev)[:, None] * wg[in_bridge]
                                   + (psi - wv[in_bridge])[:, None] * eg)
            val[near] += vloc
            grad[near] += gloc
        if x.ndim == 1:
            return float(val[0]), grad[0]
        return val, grad


def eval_stitched(sc: StitchedCorrector, x):
    return sc.eval(x)


def _const_one(x):
    return np.ones(len(np.atleast_2d(x)))


# ---------------------------------------------------------------------------
# norms and lemma-level integrals
# ---------------------------------------------------------------------------

@dataclass
class CorrectorNorms:
    l2_sq: float
    energy: float
    weighted_energy: float


def corrector_norms(field: CorrectorField, domain: DomainSpec | None = None,
                    window: Callable | None = None,
                    quad: QuadConfig = DEFAULT_QUAD) -> CorrectorNorms:
    """Integrals of w^2, |grad w|^2 and window * |grad w|^2 over the
    corrector's support intersected with the domain.

    ``domain=None`` integrates over full balls.  Without a window the
    radial structure is integrated exactly in any dimension; a window adds
    angular quadrature and requires n = 3 in clipped modes.
    """
    n, eps = field.dim, field.epsilon
    sigma = unit_sphere_area(n)
    omega = unit_ball_volume(n)
    mode = "full" if domain is None else domain.mode
    half = 0.5 if mode != "full" else 1.0

    l2 = energy = weighted = 0.0
    for k in range(len(field.sites)):
        r = field.radii[k]
        w, dw = field._profile(k)
        rho, wr = gauss_log_segment(r, eps, quad.n_r)
        ang = sigma * half
        l2_k = ang * np.sum(wr * rho ** (n - 1) * w(rho) ** 2) + half * omega * r**n
        en_k = ang * np.sum(wr * rho ** (n - 1) * dw(rho) ** 2)
        if mode == "graph":
            geom = SiteBallQuadrature(domain, field.sites[k], quad)
            sp, sw = geom.sliver_rule(0.0, eps)
            if len(sp):
                rho3 = np.linalg.norm(sp - field.sites[k], axis=-1)
                l2_k += float(np.sum(sw * w(rho3) ** 2))
                en_k += float(np.sum(sw * dw(rho3) ** 2))
        l2 += l2_k
        energy += en_k
        if window is None:
            weighted += en_k
        else:
            geom = SiteBallQuadrature(domain, field.sites[k], quad)
            pts, wv = geom.shell_volume_rule(r, eps)
            rho3 = np.linalg.norm(pts - field.sites[k], axis=-1)
            weighted += float(np.sum(wv * window(pts) * dw(rho3) ** 2))
    return CorrectorNorms(l2_sq=float(l2), energy=float(energy),
                          weighted_energy=float(weighted))


@dataclass
class BoundaryTerms:
    """Flux integrals of window * v * d_nu(w) over the three boundary
    pieces of one site's clipped annulus: the inner patch sphere, the
    domain wall, and the outer eps-sphere."""
    patch_term: float
    wall_term: float
    shell_term: float


def boundary_terms(field: CorrectorField, domain: DomainSpec | None,
                   window: Callable | None, v: Callable | None, k: int,
                   quad: QuadConfig = DEFAULT_QUAD) -> BoundaryTerms:
    """Split the integration-by-parts boundary of site k's annulus.

    Normals point out of the annular region (B_eps \\ B_r) cap D: into the
    patch ball on the inner sphere, out of the domain on the wall, and
    radially outward on the eps-sphere.  With v >= 0 on the patch the
    patch term is nonnegative; in flat mode the wall term vanishes because
    the corrector is radial about a point of the wall plane.
    """
    window = window or _const_one
    v = v or _const_one
    n, eps = field.dim, field.epsilon
    r = field.radii[k]
    _, dw = field._profile(k)
    geom = SiteBallQuadrature(domain, field.sites[k], quad)

    pts, wgt = geom.sphere_rule(r)
    flux_in = (2 - n) * r ** (1 - n) / (r ** (2 - n) - eps ** (2 - n))
    patch = float(np.sum(wgt * window(pts) * v(pts)) * (-flux_in))

    pts, vec = geom.wall_rule(r, eps)
    if len(pts):
        q = pts - field.sites[k]
        rho = np.linalg.norm(q, axis=-1)
        gradw = (dw(rho) / np.maximum(rho, 1e-300))[:, None] * q
        wall = float(np.sum(window(pts) * v(pts) * np.sum(gradw * vec, axis=-1)))
    else:
        wall = 0.0

    pts, wgt = geom.sphere_rule(eps)
    flux_out = (2 - n) * eps ** (1 - n) / (r ** (2 - n) - eps ** (2 - n))
    shell = float(np.sum(wgt * window(pts) * v(pts)) * flux_out)
    return BoundaryTerms(patch_term=patch, wall_term=wall, shell_term=shell)


@dataclass
class WallRateReport:
    eps: list
    totals: list
    slope: float | None       # None when the totals vanish identically


def wall_term_rate(domain: DomainSpec, window: Callable | None, v: Callable | None,
                   eps_list: Sequence[float], r_tilde: float = 1.0,
                   spacing_factor: float = 2.0,
                   quad: QuadConfig = DEFAULT_QUAD) -> WallRateReport:
    """Total wall-term magnitude across an eps sweep and its log-log slope.

    For each eps a full lattice layout is built and sum_k |wall_term(k)|
    recorded.  On a flat wall the totals are exactly zero and the slope is
    undefined; on a graph wall they decay like eps^alpha.
    """
    from .geometry import place_sites
    if len(eps_list) < 3:
        raise ValueError("rate estimate needs at least 3 sweep points")
    totals = []
    for eps in eps_list:
        layout = place_sites(domain, eps, "grid", spacing_factor)
        fld = CorrectorField.from_layout(layout, r_tilde, dim=domain.dim)
        tot = 0.0
        for k in range(layout.count):
            tot += abs(boundary_terms(fld, domain, window, v, k, quad).wall_term)
        totals.append(tot)
    totals_arr = np.asarray(totals)
    if np.all(totals_arr < 1e-13):
        return WallRateReport(list(eps_list), totals, None)
    slope = float(np.polyfit(np.log(eps_list), np.log(totals_arr), 1)[0])
    return WallRateReport(list(eps_list), totals, slope)


@dataclass
class ShellReduction:
    lhs: float      # sum of eps-sphere flux terms
    rhs: float      # -integral of window * v against the effective density
    gap: float


def shell_term_vs_density(field: CorrectorField, domain: DomainSpec,
                          window: Callable | None, v: Callable | None,
                          density, quad: QuadConfig = DEFAULT_QUAD) -> ShellReduction:
    """Compare the summed eps-sphere flux terms with the volume pairing
    against the effective obstacle density.

    The flux-matching auxiliary field turns each sphere term into a volume
    term up to an O(eps) factor in flat mode (O(eps^alpha) on graphs), so
    lhs tracks rhs = -int window * v d(density).
    """
    window = window or _const_one
    v = v or _const_one
    lhs = 0.0
    for k in range(len(field.sites)):
        lhs += boundary_terms(field, domain, window, v, k, quad).shell_term
    rhs = -density.pair(lambda x: window(x) * v(x), quad=quad)
    return ShellReduction(lhs=float(lhs), rhs=float(rhs), gap=abs(lhs - rhs))


# ---------------------------------------------------------------------------
# stitched corrector diagnostics
# ---------------------------------------------------------------------------

@dataclass
class StitchGapReport:
    sup_gap: float
    sup_grad_gap: float
    sup_gap_over_eps: float
    grad_gap_scaled: float    # sup_grad_gap * eps^{1/(2(n-2))}


def stitch_gap(sc: StitchedCorrector, site: int = 0,
               quad: QuadConfig = DEFAULT_QUAD) -> StitchGapReport:
    """Sup of |psi - w| and |grad psi - grad w| over the bridge annulus
    B_2a \\ B_a around one site, with the normalizations that stay bounded
    across an eps sweep."""
    f, br = sc.field, sc.bridge
    eps, n = f.epsilon, f.dim
    radii = np.geomspace(br.a, 2 * br.a, quad.n_sample_r)
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(quad.n_sample_dirs, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = (f.sites[site] + radii[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    psi = sc.potentials[site].value(pts)
    dpsi = sc.potentials[site].grad(pts)
    w, dw = f._profile(site)
    q = pts - f.sites[site]
    rho = np.linalg.norm(q, axis=-1)
    wv = w(rho)
    wg = (dw(rho) / rho)[:, None] * q
    gap = float(np.abs(psi - wv).max())
    ggap = float(np.linalg.norm(dpsi - wg, axis=-1).max())
    return StitchGapReport(sup_gap=gap, sup_grad_gap=ggap,
                           sup_gap_over_eps=gap / eps,
                           grad_gap_scaled=ggap * eps ** (1.0 / (2.0 * (n - 2))))


@dataclass
class StitchedReport:
    energy: float
    laplacian_sup: float
    laplacian_scaled: float    # laplacian_sup * a^2 / eps
    wall_bridge_term: float
    wall_cap_term: float


def stitched_diagnostics(sc: StitchedCorrector, domain: DomainSpec | None,
                         window: Callable | None = None, v: Callable | None = None,
                         quad: QuadConfig = DEFAULT_QUAD) -> StitchedReport:
    """Energy, bridge-annulus Laplacian sup, and the two wall flux terms
    of the stitched corrector.

    The energy core inside the cut radius uses the flux identity
    int_{|x|>rho} |grad psi|^2 = -oint_{|x|=rho} psi d_rho(psi), which
    avoids quadrature against the patch edge singularity.  The wall
    capacitary term integrates |window * v * eta * d_nu(psi)| over the
    wall outside the patch; the capacitary mass carried by the patch
    itself belongs to the nonnegative patch-side term.
    """
    window = window or _const_one
    v = v or _const_one
    f, br = sc.field, sc.bridge
    eps = f.epsilon
    energy = 0.0
    lap_sup = 0.0
    wall_bridge = 0.0
    wall_cap = 0.0
    half = 0.5 if domain is not None else 1.0

    for k in range(len(f.sites)):
        geom = SiteBallQuadrature(domain, f.sites[k], quad)
        pot = sc.potentials[k]
        patch = pot.patch
        w, dw = f._profile(k)

        rho_cut = 1.5 * patch.extent
        if rho_cut >= br.a:
            raise ValueError("patch too large for the bridge scale")
        if patch.shape == "ball":
            # radial and smooth: integrate |grad psi|^2 directly
            rr, wr = gauss_log_segment(patch.extent, br.a, quad.n_r)
            gpsi2 = ((f.dim - 2) * patch.extent ** (f.dim - 2) * rr ** (1 - f.dim)) ** 2
            energy += half * unit_sphere_area(f.dim) * np.sum(wr * rr ** (f.dim - 1) * gpsi2)
        else:
            dirs, wd = sphere_rule(quad.n_mu, quad.n_az)
            spts = f.sites[k] + rho_cut * dirs
            psi = pot.value(spts)
            dpsi = pot.grad(spts)
            flux = float(np.sum(wd * rho_cut**2 * psi * np.sum(dpsi * dirs, axis=-1)))
            energy += half * (sc.caps[k] + flux)
            pts, wv = geom.shell_volume_rule(rho_cut, br.a)
            energy += float(np.sum(wv * np.sum(pot.grad(pts) ** 2, axis=-1)))

        # bridge annulus: full product-rule gradient
        pts, wv = geom.shell_volume_rule(br.a, 2 * br.a)
        _, gsc = sc.eval(pts)
        energy += float(np.sum(wv * np.sum(gsc**2, axis=-1)))

        # outer shell: plain corrector energy
        rr, wr = gauss_log_segment(2 * br.a, eps, quad.n_r)
        en = unit_sphere_area(f.dim) * half * np.sum(wr * rr ** (f.dim - 1) * dw(rr) ** 2)
        if domain is not None and domain.mode == "graph":
            sp, sw = geom.sliver_rule(2 * br.a, eps)
            if len(sp):
                rho3 = np.linalg.norm(sp - f.sites[k], axis=-1)
                en += float(np.sum(sw * dw(rho3) ** 2))
        energy += float(en)

        # Laplacian on the bridge annulus (psi and w are harmonic there)
        radii = np.geomspace(br.a * 1.0001, 2 * br.a * 0.9999, quad.n_sample_r)
        rng = np.random.default_rng(k + 1)
        dirs = rng.normal(size=(quad.n_sample_dirs, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        spts = (f.sites[k] + radii[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
        psi = pot.value(spts)
        dpsi = pot.grad(spts)
        q = spts - f.sites[k]
        rho = np.linalg.norm(q, axis=-1)
        wv_ = w(rho)
        wg = (dw(rho) / rho)[:, None] * q
        _, eg, el = br.eval(spts, f.sites[k])
        lap = el * (psi - wv_) + 2.0 * np.sum(eg * (dpsi - wg), axis=-1)
        lap_sup = max(lap_sup, float(np.abs(lap).max()))

        if domain is not None:
            pts, vec = geom.wall_rule(0.5 * br.a, min(2 * br.a, eps))
            if len(pts):
                psi = pot.value(pts)
                q = pts - f.sites[k]
                rho = np.linalg.norm(q, axis=-1)
                ev, eg, _ = br.eval(pts, f.sites[k])
                dnu_eta = np.sum(eg * vec, axis=-1)
                wall_bridge += float(np.sum(window(pts) * v(pts) * (psi - w(rho)) * dnu_eta))
            s_in = max(patch.extent * 1.02, 1e-6 * br.a)
            pts, vec = geom.wall_rule(s_in, min(2 * br.a, eps))
            if len(pts):
                dpsi = pot.grad(pts)
                ev, _, _ = br.eval(pts, f.sites[k])
                wall_cap += float(np.sum(np.abs(window(pts) * v(pts) * ev
                                                * np.sum(dpsi * vec, axis=-1))))

    return StitchedReport(energy=float(energy), laplacian_sup=lap_sup,
                          laplacian_scaled=lap_sup * br.a**2 / eps,
                          wall_bridge_term=float(wall_bridge),
                          wall_cap_term=float(wall_cap))
