"""Uniform-grid discretization (n = 3) of the microscale obstacle problem
and the homogenized boundary-penalty problem.

Everything is derived from one discrete Dirichlet energy: gradient
components are sampled on edge midpoints with trapezoid transverse
weights, so the energy, the 7-point stencil, the one-sided contact-face
stencil and the penalty term are variationally consistent.  The obstacle
solver is projected SOR (red-black or lexicographic); the penalty solver
is nonlinear Gauss-Seidel with an exact per-node branch solve; a dense
active-set enumeration serves as a brute-force oracle on small instances.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .geometry import DomainSpec

FREE, SIGMA, DIRICHLET = _kernels.FREE, _kernels.SIGMA, _kernels.DIRICHLET


@dataclass(frozen=True)
class Grid:
    """Vertex-centered grid on the unit box, h = 1/(N-1).

    Periodic lateral mode identifies the x = 1 and y = 1 node planes with
    x = 0 and y = 0 (an involution on the closed lattice) and computes on
    the reduced (N-1, N-1, N) array; Dirichlet mode keeps all N^3 nodes.
    """

    n_nodes: int
    lateral_bc: str = "dirichlet"

    def __post_init__(self):
        if self.n_nodes < 5:
            raise ValueError(f"need at least 5 nodes per axis, got {self.n_nodes}")
        if self.lateral_bc not in ("dirichlet", "periodic"):
            raise ValueError(f"unknown lateral_bc {self.lateral_bc!r}")
        if self.periodic and (self.n_nodes - 1) % 2 != 0:
            raise ValueError("periodic mode needs an even number of cells "
                             "for consistent red-black coloring")

    @property
    def periodic(self) -> bool:
        return self.lateral_bc == "periodic"

    @property
    def h(self) -> float:
        return 1.0 / (self.n_nodes - 1)

    @property
    def shape(self) -> tuple:
        m = self.n_nodes - 1 if self.periodic else self.n_nodes
        return (m, m, self.n_nodes)

    def axes(self):
        nx, ny, nz = self.shape
        return (self.h * np.arange(nx), self.h * np.arange(ny),
                self.h * np.arange(nz))

    def points(self) -> np.ndarray:
        """(m, 3) coordinates of all computational nodes, C-ordered."""
        xs, ys, zs = self.axes()
        X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def kind_array(self, bottom: int = SIGMA) -> np.ndarray:
        """Node classification; ``bottom`` sets the z = 0 face role."""
        nx, ny, nz = self.shape
        kind = np.full(self.shape, FREE, dtype=np.uint8)
        kind[:, :, -1] = DIRICHLET
        kind[:, :, 0] = bottom
        if not self.periodic:
            kind[0, :, :] = DIRICHLET
            kind[-1, :, :] = DIRICHLET
            kind[:, 0, :] = DIRICHLET
            kind[:, -1, :] = DIRICHLET
        return kind

    def _trapz_1d(self, n: int) -> np.ndarray:
        w = np.ones(n)
        w[0] = w[-1] = 0.5
        return w

    def lateral_weights(self):
        nx, ny, _ = self.shape
        if self.periodic:
            return np.ones(nx), np.ones(ny)
        return self._trapz_1d(nx), self._trapz_1d(ny)

    def volume_weights(self) -> np.ndarray:
        wx, wy = self.lateral_weights()
        wz = self._trapz_1d(self.shape[2])
        return self.h**3 * wx[:, None, None] * wy[None, :, None] * wz[None, None, :]

    def face_weights(self) -> np.ndarray:
        """Area weights of the z = 0 face nodes."""
        wx, wy = self.lateral_weights()
        return self.h**2 * wx[:, None] * wy[None, :]

    def node_counts(self) -> dict:
        """Classification counts over the full closed N^3 lattice."""
        n = self.n_nodes
        if self.periodic:
            return {"total": n**3, "sigma_face": n * n,
                    "paired_lateral": n**3 - (n - 1) ** 2 * n,
                    "dirichlet": n * n, "h": self.h}
        interior = (n - 2) ** 3
        sigma = (n - 2) ** 2
        return {"total": n**3, "interior": interior, "sigma_face": n * n,
                "sigma_free": sigma, "dirichlet": n**3 - interior - sigma,
                "h": self.h}

    def pairing(self, i: int, j: int, k: int):
        """Periodic partner of a closed-lattice node (identity otherwise)."""
        n = self.n_nodes - 1
        if not self.periodic:
            return (i, j, k)
        return (0 if i == n else (n if i == 0 else i),
                0 if j == n else (n if j == 0 else j), k)


def build_grid(N: int, domain: DomainSpec | None = None,
               lateral_bc: str | None = None) -> Grid:
    """Grid for the solvers; the domain (if given) must be flat."""
    if domain is not None:
        if not domain.is_flat:
            raise ValueError("the grid solver handles flat contact faces only")
        if domain.dim != 3:
            raise ValueError("the grid solver is 3-D")
        lateral_bc = lateral_bc or domain.lateral_bc
    return Grid(n_nodes=N, lateral_bc=lateral_bc or "dirichlet")


@dataclass
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match "
                             f"grid shape {self.grid.shape}")

    def closed_values(self) -> np.ndarray:
        """Values on the full closed N^3 lattice (wrap periodic planes)."""
        v = self.values
        if not self.grid.periodic:
            return v.copy()
        v = np.concatenate([v, v[:1, :, :]], axis=0)
        v = np.concatenate([v, v[:, :1, :]], axis=1)
        return v

    def trace_mean(self) -> float:
        w = self.grid.face_weights()
        return float(np.sum(w * self.values[:, :, 0]) / np.sum(w))

    def to_binary(self, path):
        """Flat binary export: magic, N, h, ordering tag, C-ordered data."""
        with open(path, "wb") as f:
            f.write(b"OBSHGRF1")
            nx, ny, nz = self.values.shape
            f.write(struct.pack("<iiii", nx, ny, nz, 1 if self.grid.periodic else 0))
            f.write(struct.pack("<d", self.grid.h))
            f.write(b"C-xyz   ")
            f.write(np.ascontiguousarray(self.values).tobytes())

    @staticmethod
    def from_binary(path) -> "GridFunction":
        with open(path, "rb") as f:
            if f.read(8) != b"OBSHGRF1":
                raise ValueError("not a grid-function file")
            nx, ny, nz, per = struct.unpack("<iiii", f.read(16))
            (h,) = struct.unpack("<d", f.read(8))
            f.read(8)
            data = np.frombuffer(f.read(), dtype=np.float64).reshape(nx, ny, nz)
        grid = Grid(nz, "periodic" if per else "dirichlet")
        if abs(grid.h - h) > 1e-12:
            raise ValueError("header spacing inconsistent with node count")
        return GridFunction(grid, data.copy())

    def to_csv_slice(self, path, z_index: int = 0):
        np.savetxt(path, self.values[:, :, z_index], delimiter=",")


@dataclass
class VIProblem:
    """Obstacle problem data: Dirichlet values g, obstacle phi, and the
    constrained-node mask (bulk ball nodes or contact-face patch nodes)."""
    grid: Grid
    g: np.ndarray
    phi: np.ndarray
    constrained: np.ndarray

    def __post_init__(self):
        kind = self.grid.kind_array()
        if np.any(self.constrained & (kind == DIRICHLET)):
            raise ValueError("constrained nodes must be free nodes")


@dataclass
class PenaltyProblem:
    """Homogenized problem data: Dirichlet values g, obstacle phi on the
    contact face, and the nonnegative surface density mu there."""
    grid: Grid
    g: np.ndarray
    phi: np.ndarray
    mu: np.ndarray            # (nx, ny) surface density on the contact face

    def __post_init__(self):
        if np.any(self.mu < 0):
            raise ValueError("surface density must be nonnegative")


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    final_residual: float
    dirichlet_energy: float
    penalty_energy: float | None
    kkt_residual: float | None
    trace_mean: float
    seconds: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


def make_vi_problem(grid: Grid, g_fn: Callable, phi_fn: Callable,
                    member_fn: Callable) -> VIProblem:
    """Rasterize callables onto the grid: g on Dirichlet nodes, phi and the
    membership-based constrained mask on free nodes."""
    pts = grid.points()
    g = np.asarray(g_fn(pts), dtype=float).reshape(grid.shape)
    phi = np.asarray(phi_fn(pts), dtype=float).reshape(grid.shape)
    cons = np.asarray(member_fn(pts)).reshape(grid.shape).astype(bool)
    cons &= grid.kind_array() != DIRICHLET
    return VIProblem(grid, g, phi, cons)


def make_penalty_problem(grid: Grid, g_fn: Callable, phi_fn: Callable,
                         mu) -> PenaltyProblem:
    pts = grid.points()
    g = np.asarray(g_fn(pts), dtype=float).reshape(grid.shape)
    phi = np.asarray(phi_fn(pts), dtype=float).reshape(grid.shape)
    nx, ny, _ = grid.shape
    if callable(mu):
        xs, ys, _ = grid.axes()
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        face = np.stack([X.ravel(), Y.ravel(), np.zeros(nx * ny)], axis=1)
        mu_arr = np.asarray(mu(face), dtype=float).reshape(nx, ny)
    else:
        mu_arr = np.full((nx, ny), float(mu))
    return PenaltyProblem(grid, g, phi, mu_arr)


# ---------------------------------------------------------------------------
# energies and norms
# ---------------------------------------------------------------------------

def dirichlet_energy(grid: Grid, values: np.ndarray) -> float:
    """Edge-midpoint discrete Dirichlet energy with trapezoid transverse
    weights (exactly the quadratic form the solvers minimize)."""
    h = grid.h
    v = np.asarray(values, dtype=float)
    wx, wy = grid.lateral_weights()
    wz = grid._trapz_1d(grid.shape[2])

    e = 0.0
    dz = v[:, :, 1:] - v[:, :, :-1]
    e += h * np.sum(dz**2 * wx[:, None, None] * wy[None, :, None])
    if grid.periodic:
        dx = np.roll(v, -1, axis=0) - v
        e += h * np.sum(dx**2 * wz[None, None, :])
        dy = np.roll(v, -1, axis=1) - v
        e += h * np.sum(dy**2 * wz[None, None, :])
    else:
        dx = v[1:, :, :] - v[:-1, :, :]
        e += h * np.sum(dx**2 * wy[None, :, None] * wz[None, None, :])
        dy = v[:, 1:, :] - v[:, :-1, :]
        e += h * np.sum(dy**2 * wx[:, None, None] * wz[None, None, :])
    return float(e)


def penalty_energy(grid: Grid, values: np.ndarray, phi: np.ndarray,
                   mu: np.ndarray) -> float:
    """Contact-face penalty: sum of area weights * mu * (u - phi)_-^2."""
    neg = np.minimum(values[:, :, 0] - phi[:, :, 0], 0.0)
    return float(np.sum(grid.face_weights() * mu * neg**2))


def l2_distance(u: GridFunction, v: GridFunction) -> float:
    """Trapezoid-weighted L2 distance of two grid functions.

    Accepts matching grids, or injects the finer one onto the coarser when
    their cell counts nest.
    """
    if u.grid.shape != v.grid.shape:
        nu, nv = u.grid.n_nodes, v.grid.n_nodes
        if nu == nv:
            raise ValueError("incompatible grids: same N, different modes")
        fine, coarse = (u, v) if nu > nv else (v, u)
        fine_inj = inject(fine, coarse.grid)
        u, v = fine_inj, coarse
    w = u.grid.volume_weights()
    return float(np.sqrt(np.sum(w * (u.values - v.values) ** 2)))


def inject(fine: GridFunction, coarse: Grid) -> GridFunction:
    """Exact nodal restriction from a nested finer grid."""
    if (fine.grid.n_nodes - 1) % (coarse.n_nodes - 1) != 0:
        raise ValueError("incompatible grids: cell counts do not nest")
    if fine.grid.lateral_bc != coarse.lateral_bc:
        raise ValueError("incompatible grids: different lateral modes")
    step = (fine.grid.n_nodes - 1) // (coarse.n_nodes - 1)
    closed = fine.closed_values()[::step, ::step, ::step]
    nx, ny, nz = coarse.shape
    return GridFunction(coarse, closed[:nx, :ny, :nz])


def energy_report(u: GridFunction, problem) -> dict:
    """Energy terms and (for obstacle problems) the KKT residual."""
    grid = u.grid
    out = {"dirichlet_energy": dirichlet_energy(grid, u.values)}
    if isinstance(problem, PenaltyProblem):
        out["penalty_energy"] = penalty_energy(grid, u.values, problem.phi, problem.mu)
        out["total_energy"] = out["dirichlet_energy"] + out["penalty_energy"]
    elif isinstance(problem, VIProblem):
        kind = grid.kind_array()
        rhs = np.zeros(grid.shape)
        feas, neg, comp = _kernels.kkt_stats(
            u.values, kind, problem.constrained, problem.phi, rhs, grid.periodic)
        out["kkt_residual"] = max(feas, neg, comp)
        out["kkt_parts"] = {"feasibility": feas, "multiplier": neg,
                            "complementarity": comp}
    return out


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def _relax_loop(u, kind, cons, phi, mu_h, rhs, periodic, tol, max_iter,
                omega, ordering, check_every=8):
    res0 = _kernels.residual_max(u, kind, cons, phi, mu_h, rhs, periodic)
    if res0 <= 1e-300:
        return 0, 0.0, True
    target = max(tol * res0, 1e-16)
    it = 0
    res = res0
    while it < max_iter:
        if ordering == "redblack":
            _kernels.sweep_redblack(u, kind, cons, phi, mu_h, rhs, omega, 0, periodic)
            _kernels.sweep_redblack(u, kind, cons, phi, mu_h, rhs, omega, 1, periodic)
        elif ordering == "lex":
            _kernels.sweep_lex(u, kind, cons, phi, mu_h, rhs, omega, periodic)
        else:
            raise ValueError(f"unknown ordering {ordering!r}")
        it += 1
        if it % check_every == 0 or it >= max_iter:
            res = _kernels.residual_max(u, kind, cons, phi, mu_h, rhs, periodic)
            if res <= target:
                return it, res, True
    return it, res, False


def _init_values(grid: Grid, g: np.ndarray, u0) -> np.ndarray:
    if u0 is not None:
        u = np.array(u0.values if isinstance(u0, GridFunction) else u0,
                     dtype=float, copy=True)
    else:
        # harmonic-ish start: interpolate the top Dirichlet data downward
        zs = grid.axes()[2]
        u = g[:, :, -1][:, :, None] * zs[None, None, :]
    kind = grid.kind_array()
    u[kind == DIRICHLET] = g[kind == DIRICHLET]
    return u


def solve_vi(problem: VIProblem, tol: float = 1e-9, max_iter: int = 50000,
             omega: float = 1.5, ordering: str = "redblack",
             u0=None) -> tuple[GridFunction, SolveReport]:
    """Projected SOR for the discrete obstacle problem.

    Plain SOR sweeps at unconstrained nodes; constrained nodes clip the
    relaxed value at the obstacle.  The iterate stays feasible and the
    energy decreases monotonically for 0 < omega < 2.  On success the
    converged iterate satisfies discrete complementarity to the requested
    tolerance.
    """
    t0 = time.perf_counter()
    grid = problem.grid
    kind = grid.kind_array()
    u = _init_values(grid, problem.g, u0)
    u[problem.constrained] = np.maximum(u[problem.constrained],
                                        problem.phi[problem.constrained])
    mu_h = np.zeros(grid.shape)
    rhs = np.zeros(grid.shape)
    it, res, ok = _relax_loop(u, kind, problem.constrained, problem.phi, mu_h,
                              rhs, grid.periodic, tol, max_iter, omega, ordering)
    gf = GridFunction(grid, u)
    feas, neg, comp = _kernels.kkt_stats(u, kind, problem.constrained,
                                         problem.phi, rhs, grid.periodic)
    report = SolveReport(
        iterations=it, converged=ok, final_residual=res,
        dirichlet_energy=dirichlet_energy(grid, u), penalty_energy=None,
        kkt_residual=max(feas, neg, comp), trace_mean=gf.trace_mean(),
        seconds=time.perf_counter() - t0)
    return gf, report


def solve_limit(problem: PenaltyProblem, tol: float = 1e-9,
                max_iter: int = 50000, omega: float = 1.5,
                ordering: str = "redblack", u0=None) -> tuple[GridFunction, SolveReport]:
    """Nonlinear Gauss-Seidel/SOR for the boundary-penalty problem.

    Contact-face nodes solve their piecewise-quadratic nodal problem in
    closed form (penalty active iff the unpenalized value falls below
    phi); other nodes get plain SOR.  The converged discrete system
    encodes the natural condition d_nu(u) = mu (u - phi)_- on the face.
    """
    t0 = time.perf_counter()
    grid = problem.grid
    kind = grid.kind_array()
    u = _init_values(grid, problem.g, u0)
    mu_h = np.zeros(grid.shape)
    # nodal penalty weight: face area * mu / h
    mu_h[:, :, 0] = grid.face_weights() * problem.mu / grid.h
    mu_h[kind == DIRICHLET] = 0.0
    cons = np.zeros(grid.shape, dtype=bool)
    rhs = np.zeros(grid.shape)
    it, res, ok = _relax_loop(u, kind, cons, problem.phi, mu_h, rhs,
                              grid.periodic, tol, max_iter, omega, ordering)
    gf = GridFunction(grid, u)
    report = SolveReport(
        iterations=it, converged=ok, final_residual=res,
        dirichlet_energy=dirichlet_energy(grid, u),
        penalty_energy=penalty_energy(grid, u, problem.phi, problem.mu),
        kkt_residual=None, trace_mean=gf.trace_mean(),
        seconds=time.perf_counter() - t0)
    return gf, report


def solve_poisson_dirichlet(grid: Grid, nodal_load: np.ndarray,
                            tol: float = 1e-10, max_iter: int = 50000,
                            omega: float = 1.8) -> np.ndarray:
    """Poisson solve with zero Dirichlet data on the whole box boundary;
    ``nodal_load`` carries lumped loads (density times nodal volume)."""
    kind = grid.kind_array(bottom=DIRICHLET)
    u = np.zeros(grid.shape)
    cons = np.zeros(grid.shape, dtype=bool)
    phi = np.zeros(grid.shape)
    mu_h = np.zeros(grid.shape)
    rhs = np.asarray(nodal_load, dtype=float) / grid.h
    rhs = np.where(kind == DIRICHLET, 0.0, rhs)
    it, res, ok = _relax_loop(u, kind, cons, phi, mu_h, rhs, grid.periodic,
                              tol, max_iter, omega, "redblack")
    if not ok:
        raise RuntimeError(f"poisson solve stalled at residual {res:.2e}")
    return u


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

def _edge_quadratic_form(grid: Grid):
    """Dense edge Laplacian A with E(u) = u^T A u, assembled directly from
    the edge list (independent of the sweep kernels)."""
    nx, ny, nz = grid.shape
    h = grid.h
    wx, wy = grid.lateral_weights()
    wz = grid._trapz_1d(nz)
    size = nx * ny * nz
    A = np.zeros((size, size))
    idx = np.arange(size).reshape(nx, ny, nz)

    def add(p, q, w):
        A[p, p] += w
        A[q, q] += w
        A[p, q] -= w
        A[q, p] -= w

    for i in range(nx):
        for j in range(ny):
            for k in range(nz - 1):
                add(idx[i, j, k], idx[i, j, k + 1], h * wx[i] * wy[j])
    xr = range(nx) if grid.periodic else range(nx - 1)
    for i in xr:
        for j in range(ny):
            for k in range(nz):
                add(idx[i, j, k], idx[(i + 1) % nx, j, k], h * wy[j] * wz[k])
    yr = range(ny) if grid.periodic else range(ny - 1)
    for i in range(nx):
        for j in yr:
            for k in range(nz):
                add(idx[i, j, k], idx[i, (j + 1) % ny, k], h * wx[i] * wz[k])
    return A


def solve_vi_oracle(problem: VIProblem, kkt_tol: float = 1e-10) -> GridFunction:
    """Active-set enumeration oracle for small obstacle instances.

    Enumerates all 2^m active sets; for each, solves the equality-
    constrained system directly, keeps the KKT-feasible candidates
    (nonnegative multipliers on the active set, feasibility off it), and
    returns the energy minimizer.  Exact up to dense-solver roundoff.
    """
    grid = problem.grid
    if np.prod(grid.shape) > 8**3:
        raise ValueError("oracle is for grids up to 7^3 nodes")
    m = int(problem.constrained.sum())
    if m > 12:
        raise ValueError(f"oracle is for <= 12 constrained nodes, got {m}")

    A = _edge_quadratic_form(grid)
    kind = grid.kind_array().ravel()
    gvals = problem.g.ravel()
    phi = problem.phi.ravel()
    cons_idx = np.flatnonzero(problem.constrained.ravel())
    free = np.flatnonzero(kind != DIRICHLET)
    fixed = np.flatnonzero(kind == DIRICHLET)

    best_u, best_e = None, np.inf
    feasible_fallback, fallback_e = None, np.inf
    for mask in range(2**m):
        active = cons_idx[[bool(mask >> b & 1) for b in range(m)]]
        solve_set = np.setdiff1d(free, active)
        u = np.zeros(A.shape[0])
        u[fixed] = gvals[fixed]
        u[active] = phi[active]
        pinned = np.concatenate([fixed, active])
        b = -A[np.ix_(solve_set, pinned)] @ u[pinned]
        try:
            u[solve_set] = np.linalg.solve(A[np.ix_(solve_set, solve_set)], b)
        except np.linalg.LinAlgError:
            continue
        grad = 2.0 * (A @ u)
        lam = grad[active]
        inactive = np.setdiff1d(cons_idx, active)
        feas_ok = np.all(u[inactive] >= phi[inactive] - kkt_tol)
        kkt_ok = feas_ok and np.all(lam >= -kkt_tol)
        energy = float(u @ A @ u)
        if feas_ok and energy < fallback_e:
            feasible_fallback, fallback_e = u, energy
        if kkt_ok and energy < best_e:
            best_u, best_e = u, energy
    if best_u is None:
        best_u = feasible_fallback
    if best_u is None:
        raise RuntimeError("oracle found no feasible candidate")
    return GridFunction(grid, best_u.reshape(grid.shape))
