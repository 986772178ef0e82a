"""Experiment driver: corrector-lemma suites, density-limit checks,
homogenization sweeps, and CSV/JSON report emission.

Configs are plain dataclasses with JSON round-tripping.  Boundary data,
obstacle functions and windows come from a named menu so that a config
echo reproduces a run exactly.  Sweep rows that violate the resolution
rule h <= r_eps/3 are marked rejected, never silently dropped.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import corrector as co
from . import obstacle_field as of
from . import pde
from .capacity import ball_potential, disk_potential, disk_capacity
from .geometry import make_domain, place_sites
from .quadrature import QuadConfig


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


# ---------------------------------------------------------------------------
# named field menus (boundary data g, obstacle phi, window)
# ---------------------------------------------------------------------------

def _smooth_cut(z, z0, z1):
    """1 below z0, 0 above z1, quintic in between."""
    t = np.clip((z - z0) / (z1 - z0), 0.0, 1.0)
    return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


G_MENU = {
    "const0": lambda x: np.zeros(len(x)),
    "const1": lambda x: np.ones(len(x)),
    "linz": lambda x: 1.0 - x[:, 2],
    "bumpxy": lambda x: (1.0 - x[:, 2]) * (1.0 + 0.25 * np.cos(2 * np.pi * x[:, 0])
                                           * np.cos(2 * np.pi * x[:, 1])),
}

PHI_MENU = {
    "const1": lambda x: np.ones(len(x)),
    "const0": lambda x: np.zeros(len(x)),
    "half": lambda x: 0.5 * np.ones(len(x)),
    "cosx": lambda x: 1.0 + 0.1 * np.cos(2 * np.pi * x[:, 0]),
}

WINDOW_MENU = {
    "one": lambda x: np.ones(len(x)),
    "sigma_window": lambda x: _smooth_cut(x[:, 2], 0.3, 0.7),
}


def _lookup(menu: dict, name: str, what: str):
    if name not in menu:
        raise ConfigError(f"unknown {what} {name!r}; choose from {sorted(menu)}")
    return menu[name]


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    mode: str = "flat"                 # flat | graph
    n: int = 3
    lateral_bc: str = "periodic"
    graph: dict | None = None          # BoundaryGraph parameters
    scheme: str = "grid"
    spacing_factor: float = 2.0
    seed: int = 0
    kind: str = "model_balls"
    r_tilde: float = 1.0
    patch_shape: str = "flat_disk"
    patch_scaled_size: float = 0.02
    eps_list: list = field(default_factory=lambda: [0.1, 0.05, 0.025])
    grid_n: list = field(default_factory=list)   # nodes per axis, one per eps
    g: str = "const0"
    phi: str = "const1"
    window: str = "sigma_window"
    omega: float = 1.5
    tol: float = 1e-9
    max_iter: int = 50000
    serial: bool = False
    quad: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    out_dir: str = "out"

    def __post_init__(self):
        if self.mode not in ("flat", "graph"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.kind not in of.OBSTACLE_KINDS:
            raise ConfigError(f"unknown obstacle kind {self.kind!r}")
        if self.grid_n and len(self.grid_n) != len(self.eps_list):
            raise ConfigError("grid_n must have one entry per eps")
        for name, menu in (("g", G_MENU), ("phi", PHI_MENU), ("window", WINDOW_MENU)):
            _lookup(menu, getattr(self, name), name)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return ExperimentConfig(**data)

    def domain(self):
        return make_domain(self.mode, self.n, self.graph, self.lateral_bc)

    def quad_config(self) -> QuadConfig:
        return QuadConfig(**self.quad) if self.quad else QuadConfig()

    def fields(self):
        return (_lookup(G_MENU, self.g, "g"), _lookup(PHI_MENU, self.phi, "phi"),
                _lookup(WINDOW_MENU, self.window, "window"))


DEFAULT_THRESHOLDS = {
    "l2_slope": (2.7, 3.3),
    "energy_variation": 0.10,
    "weighted_density_rel": 0.05,
    "shell_gap_rel": 0.25,
    "wall_slope_factor": 0.7,     # required slope = factor * alpha
    "stitch_ratio": 3.0,
    "stitched_energy_rel": 0.10,
}


# ---------------------------------------------------------------------------
# corrector suite
# ---------------------------------------------------------------------------

@dataclass
class CorrectorSuiteReport:
    rows: list            # one dict per eps
    checks: dict          # name -> {"value", "threshold", "passed"}

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())


def run_corrector_suite(config: ExperimentConfig) -> CorrectorSuiteReport:
    """Corrector norms, boundary terms, density reduction and stitching
    diagnostics across the configured eps sweep, with pass/fail checks."""
    thr = {**DEFAULT_THRESHOLDS, **config.tolerances}
    domain = config.domain()
    quad = config.quad_config()
    _, _, window = config.fields()
    v_one = WINDOW_MENU["one"]
    rows = []
    checks = {}

    l2s, energies, weighted, gap_rels = [], [], [], []
    gap_norms, grad_norms = [], []
    stitched_ratio_at = {}
    gamma = None
    wall_flat = 0.0
    for eps in config.eps_list:
        layout = place_sites(domain, eps, config.scheme, config.spacing_factor,
                             config.seed)
        fld = co.CorrectorField.from_layout(layout, config.r_tilde, dim=config.n)
        norms = co.corrector_norms(fld, domain, window, quad)
        obs = of.build_obstacle("model_balls", layout, domain, config.r_tilde)
        gamma = obs.gamma[0]
        dens = of.density_field(obs)
        red = co.shell_term_vs_density(fld, domain, window, v_one, dens, quad)
        gap_rel = red.gap / abs(red.rhs) if red.rhs else 0.0
        if config.mode == "flat":
            wall_flat = max(wall_flat, abs(
                co.boundary_terms(fld, domain, window, v_one, 0, quad).wall_term))

        # stitched run with the exact ball potential at the equivalent radius
        bridge = co.BridgeProfile(eps, config.n)
        pots = [ball_potential(fld.radii[k], layout.points[k], config.n)
                for k in range(layout.count)]
        sc = co.StitchedCorrector(fld, pots, bridge)
        sg = co.stitch_gap(sc, 0, quad)

        row = {"eps": eps, "sites": layout.count,
               "l2_sq": norms.l2_sq, "l2_scaled": norms.l2_sq / eps**3,
               "energy": norms.energy, "weighted_energy": norms.weighted_energy,
               "shell_lhs": red.lhs, "shell_rhs": red.rhs, "shell_gap_rel": gap_rel,
               "sup_gap_over_eps": sg.sup_gap_over_eps,
               "grad_gap_scaled": sg.grad_gap_scaled}
        if config.mode == "flat":
            diag = co.stitched_diagnostics(sc, domain, window, v_one, quad)
            row["stitched_energy"] = diag.energy
            row["stitched_ratio"] = diag.energy / norms.energy
            row["laplacian_scaled"] = diag.laplacian_scaled
            stitched_ratio_at[eps] = row["stitched_ratio"]
        rows.append(row)
        l2s.append(norms.l2_sq)
        energies.append(norms.energy)
        weighted.append(norms.weighted_energy)
        gap_rels.append(gap_rel)
        gap_norms.append(sg.sup_gap_over_eps)
        grad_norms.append(sg.grad_gap_scaled)

    eps_arr = np.asarray(config.eps_list, dtype=float)
    slope = float(np.polyfit(np.log(eps_arr), np.log(l2s), 1)[0])
    lo, hi = thr["l2_slope"]
    checks["l2_slope"] = {"value": slope, "threshold": thr["l2_slope"],
                          "passed": lo <= slope <= hi}

    variation = (max(energies) - min(energies)) / min(energies)
    checks["energy_variation"] = {"value": variation,
                                  "threshold": thr["energy_variation"],
                                  "passed": variation <= thr["energy_variation"]}

    mu_hat = of.analytic_limit_density(config.spacing_factor, gamma, config.n)
    target = mu_hat * _window_surface_integral(window)
    rel = abs(weighted[-1] / target - 1.0)
    checks["weighted_vs_limit"] = {"value": rel,
                                   "threshold": thr["weighted_density_rel"],
                                   "passed": rel <= thr["weighted_density_rel"]}

    at_05 = gap_rels[min(range(len(eps_arr)), key=lambda i: abs(eps_arr[i] - 0.05))]
    decreasing = all(a >= b - 1e-12 for a, b in zip(gap_rels, gap_rels[1:]))
    checks["shell_gap"] = {"value": at_05, "threshold": thr["shell_gap_rel"],
                           "passed": at_05 <= thr["shell_gap_rel"] and decreasing}

    for name, vals in (("stitch_gap_ratio", gap_norms),
                       ("stitch_grad_ratio", grad_norms)):
        ratio = max(vals) / min(vals) if min(vals) > 0 else np.inf
        checks[name] = {"value": ratio, "threshold": thr["stitch_ratio"],
                        "passed": ratio <= thr["stitch_ratio"]}

    if config.mode == "graph":
        rate = co.wall_term_rate(domain, window, v_one, config.eps_list,
                                 config.r_tilde, config.spacing_factor, quad)
        need = thr["wall_slope_factor"] * domain.graph.alpha
        checks["wall_slope"] = {"value": rate.slope, "threshold": need,
                                "passed": rate.slope is not None and rate.slope >= need}
        for row, tot in zip(rows, rate.totals):
            row["wall_total"] = tot
    else:
        checks["wall_flat_zero"] = {"value": wall_flat, "threshold": 1e-12,
                                    "passed": wall_flat <= 1e-12}
        if stitched_ratio_at:
            eps_near = min(stitched_ratio_at, key=lambda e: abs(e - 0.05))
            dev = abs(stitched_ratio_at[eps_near] - 1.0)
            checks["stitched_energy"] = {"value": dev,
                                         "threshold": thr["stitched_energy_rel"],
                                         "passed": dev <= thr["stitched_energy_rel"]}
    return CorrectorSuiteReport(rows=rows, checks=checks)


def _window_surface_integral(window, m: int = 200) -> float:
    """Integral of the window over the flat contact face by midpoint rule."""
    t = (np.arange(m) + 0.5) / m
    X, Y = np.meshgrid(t, t, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), np.zeros(m * m)], axis=1)
    return float(np.mean(window(pts)))


# ---------------------------------------------------------------------------
# homogenization sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    eps: float
    n_nodes: int
    status: str = "ok"          # ok | rejected | failed
    l2_dist: float = np.nan
    j_eps: float = np.nan
    j_mu: float = np.nan
    gap: float = np.nan
    sandwich_rhs: float = np.nan
    trace_mean_eps: float = np.nan
    trace_mean_limit: float = np.nan
    hminus: float = np.nan
    secs: float = 0.0
    note: str = ""


@dataclass
class SweepReport:
    rows: list
    limit_trace: float = np.nan
    limit_norm: float = np.nan
    mu_hat: float = np.nan

    def ok_rows(self):
        return [r for r in self.rows if r.status == "ok"]


def _pu_hat(t, i: int, m: int):
    """Member i of an m-piece partition of unity on [0, 1] (flat-topped
    hats at the ends, triangles inside; they sum to 1 exactly)."""
    if m == 1:
        return np.ones_like(t)
    s = m * np.asarray(t, dtype=float)
    if i == 0:
        return np.clip(1.5 - s, 0.0, 1.0)
    if i == m - 1:
        return np.clip(s - (m - 1.5), 0.0, 1.0)
    return np.clip(1.0 - np.abs(s - (i + 0.5)), 0.0, 1.0)


def estimate_limit_density(dens: of.DensityField, tiles: int = 3,
                           quad: QuadConfig | None = None) -> float:
    """Least-squares constant fit of the limit surface density from
    pairings with a partition-of-unity test set on the contact face."""
    quad = quad or QuadConfig()
    masses, areas = [], []
    t = (np.arange(400) + 0.5) / 400
    X, Y = np.meshgrid(t, t, indexing="ij")
    face = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    for ix in range(tiles):
        for iy in range(tiles):
            def fn(pts, ix=ix, iy=iy):
                return _pu_hat(pts[:, 0], ix, tiles) * _pu_hat(pts[:, 1], iy, tiles)
            masses.append(dens.pair(fn, quad=quad))
            areas.append(float(np.mean(fn(face))))
    masses = np.asarray(masses)
    areas = np.asarray(areas)
    return float(np.sum(masses * areas) / np.sum(areas**2))


def run_sweep(config: ExperimentConfig) -> SweepReport:
    """Solve the obstacle problem across the eps sweep, the penalty limit
    problem on each row's grid, and record the convergence metrics."""
    domain = config.domain()
    if config.mode != "flat":
        raise ConfigError("sweeps use the flat-contact grid solver")
    g_fn, phi_fn, _ = config.fields()
    ordering = "lex" if config.serial else "redblack"
    quad = config.quad_config()
    n = config.n
    if not config.grid_n:
        raise ConfigError("sweep needs grid_n (nodes per axis, one per eps)")

    report = SweepReport(rows=[])
    for eps, N in zip(config.eps_list, config.grid_n):
        row = SweepRow(eps=eps, n_nodes=N)
        report.rows.append(row)
        t0 = time.perf_counter()
        layout = place_sites(domain, eps, config.scheme, config.spacing_factor,
                             config.seed)
        if config.kind == "model_balls":
            obs = of.build_obstacle("model_balls", layout, domain, config.r_tilde)
        else:
            obs = of.build_obstacle("surface_patches", layout, domain,
                                    patch_shape=config.patch_shape,
                                    patch_scaled_size=config.patch_scaled_size)
        r_eps = obs.radii.min()
        grid = pde.build_grid(N, domain)
        if grid.h > r_eps / 3.0 + 1e-12:
            row.status = "rejected"
            row.note = f"resolution rule violated: h={grid.h:.4g} > r/3={r_eps/3:.4g}"
            continue
        try:
            dens = of.density_field(obs)
            if config.scheme == "grid":
                mu_hat = of.analytic_limit_density(config.spacing_factor,
                                                   obs.gamma[0], n)
            else:
                mu_hat = estimate_limit_density(dens, quad=quad)
            report.mu_hat = mu_hat

            limit_prob = pde.make_penalty_problem(grid, g_fn, phi_fn, mu_hat)
            u_lim, rep_lim = pde.solve_limit(limit_prob, config.tol,
                                             config.max_iter, config.omega,
                                             ordering)
            vi_prob = pde.make_vi_problem(grid, g_fn, phi_fn, obs.membership)
            u_eps, rep_eps = pde.solve_vi(vi_prob, config.tol, config.max_iter,
                                          config.omega, ordering, u0=u_lim)

            row.l2_dist = pde.l2_distance(u_eps, u_lim)
            row.j_eps = rep_eps.dirichlet_energy
            row.j_mu = rep_lim.dirichlet_energy + rep_lim.penalty_energy
            row.gap = abs(row.j_eps - row.j_mu)
            row.trace_mean_eps = rep_eps.trace_mean
            row.trace_mean_limit = rep_lim.trace_mean
            report.limit_trace = rep_lim.trace_mean
            zero = pde.GridFunction(grid, np.zeros(grid.shape))
            report.limit_norm = pde.l2_distance(u_lim, zero)

            # energy sandwich: the nodal interpolant of v + (v-phi)_- w is
            # admissible, so the discrete minimizer can only do better
            fld = co.CorrectorField.from_layout(layout, obs.r_tilde, dim=n)
            pts = grid.points()
            w_nodes = fld.value(pts).reshape(grid.shape)
            vphi = np.minimum(u_lim.values - vi_prob.phi, 0.0)
            cand = u_lim.values - vphi * w_nodes
            row.sandwich_rhs = pde.dirichlet_energy(grid, cand)

            row.hminus = of.hminus_proxy(dens, mu_hat, grid)
        except Exception as exc:           # keep the sweep alive; record why
            row.status = "failed"
            row.note = f"{type(exc).__name__}: {exc}"
        finally:
            row.secs = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# output emission
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ["eps", "N", "l2_dist", "J_eps", "J_mu", "gap", "trace_mean",
                 "hminus", "secs"]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit_outputs(report, out_dir: str, config: ExperimentConfig | None = None) -> list:
    """Write sweep.csv / corrector.csv, a config echo, and a long-format
    CSV.  In serial mode the secs column is zeroed so that re-runs are
    byte-identical."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    serial = bool(config and config.serial)

    def long_rows():
        if isinstance(report, SweepReport):
            for r in report.rows:
                for key in ("l2_dist", "j_eps", "j_mu", "gap", "hminus"):
                    yield r.eps, key, getattr(r, key)
        else:
            for r in report.rows:
                for key, val in r.items():
                    if key != "eps" and isinstance(val, float):
                        yield r["eps"], key, val

    if isinstance(report, SweepReport):
        path = os.path.join(out_dir, "sweep.csv")
        with open(path, "w") as f:
            f.write(",".join(SWEEP_COLUMNS) + "\n")
            for r in report.rows:
                secs = 0.0 if serial else r.secs
                f.write(",".join(_fmt(v) for v in [
                    r.eps, r.n_nodes, r.l2_dist, r.j_eps, r.j_mu, r.gap,
                    r.trace_mean_eps, r.hminus, secs]) + "\n")
        written.append(path)
    else:
        path = os.path.join(out_dir, "corrector.csv")
        cols = sorted({k for r in report.rows for k in r})
        with open(path, "w") as f:
            f.write(",".join(cols) + "\n")
            for r in report.rows:
                f.write(",".join(_fmt(r.get(c, "")) for c in cols) + "\n")
        written.append(path)

    path = os.path.join(out_dir, "long.csv")
    with open(path, "w") as f:
        f.write("eps,metric,value\n")
        for eps, key, val in long_rows():
            f.write(f"{_fmt(eps)},{key},{_fmt(val)}\n")
    written.append(path)

    if config is not None:
        path = os.path.join(out_dir, "config.json")
        with open(path, "w") as f:
            f.write(config.to_json() + "\n")
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# stock configurations
# ---------------------------------------------------------------------------

def slab_config(**overrides) -> ExperimentConfig:
    """Slab benchmark: periodic lateral box, zero top data, unit obstacle,
    r_tilde = 2 lattice so the limit density is pi."""
    base = dict(mode="flat", lateral_bc="periodic", kind="model_balls",
                r_tilde=2.0, spacing_factor=2.0, scheme="grid",
                eps_list=[1/4, 1/6, 1/8], grid_n=[33, 73, 129],
                g="const0", phi="const1", window="sigma_window",
                omega=1.9, tol=1e-9)
    base.update(overrides)
    return ExperimentConfig(**base)


def corrector_config(**overrides) -> ExperimentConfig:
    base = dict(mode="flat", lateral_bc="periodic", kind="model_balls",
                r_tilde=1.0, eps_list=[0.1, 0.05, 0.025],
                g="const0", phi="const1", window="sigma_window")
    base.update(overrides)
    return ExperimentConfig(**base)
