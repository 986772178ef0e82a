"""Numba relaxation kernels for the uniform-grid solvers.

One sweep family serves all three problems: the nodal equation at a free
node p is c_p u_p - sum_q w_pq u_q = rhs_p, with c = 6 at interior nodes
and c = 3 at contact-face nodes (one-sided stencil from the trapezoid
edge weights).  Constrained nodes clip the relaxed value at the obstacle;
penalty nodes solve the piecewise-quadratic nodal problem exactly by
testing both branches.  Red-black sweeps write each color while reading
only the other, so parallel execution is race-free and deterministic.
"""

import numba
import numpy as np

FREE, SIGMA, DIRICHLET = 0, 1, 2


@numba.njit(cache=True, inline="always")
def _node_terms(u, kind, i, j, k, nx, ny, nz, periodic):
    """(c, neighbor sum) of the nodal equation at a free node (i, j, k)."""
    if periodic:
        im, ip = (i - 1) % nx, (i + 1) % nx
        jm, jp = (j - 1) % ny, (j + 1) % ny
    else:
        im, ip = i - 1, i + 1
        jm, jp = j - 1, j + 1
    lat = u[im, j, k] + u[ip, j, k] + u[i, jm, k] + u[i, jp, k]
    if k == 0:
        return 3.0, 0.5 * lat + u[i, j, 1]
    return 6.0, lat + u[i, j, k - 1] + u[i, j, k + 1]


@numba.njit(cache=True, inline="always")
def _relax_node(u, kind, cons, phi, mu_h, rhs, i, j, k, nx, ny, nz,
                periodic, omega):
    c, nb = _node_terms(u, kind, i, j, k, nx, ny, nz, periodic)
    target = (nb + rhs[i, j, k]) / c
    m = mu_h[i, j, k]
    if m > 0.0:
        # penalty node: the nodal problem is piecewise quadratic; test both
        # branches and take the exact minimizer (unrelaxed, which keeps the
        # nonlinear update monotone in energy)
        if target < phi[i, j, k]:
            target = (nb + rhs[i, j, k] + m * phi[i, j, k]) / (c + m)
        u[i, j, k] = target
        return
    val = u[i, j, k] + omega * (target - u[i, j, k])
    if cons[i, j, k] and val < phi[i, j, k]:
        val = phi[i, j, k]
    u[i, j, k] = val


@numba.njit(cache=True, parallel=True)
def sweep_redblack(u, kind, cons, phi, mu_h, rhs, omega, color, periodic):
    nx, ny, nz = u.shape
    for i in numba.prange(nx):
        for j in range(ny):
            for k in range(nz):
                if (i + j + k) % 2 != color:
                    continue
                if kind[i, j, k] == DIRICHLET:
                    continue
                _relax_node(u, kind, cons, phi, mu_h, rhs, i, j, k,
                            nx, ny, nz, periodic, omega)


@numba.njit(cache=True)
def sweep_lex(u, kind, cons, phi, mu_h, rhs, omega, periodic):
    nx, ny, nz = u.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if kind[i, j, k] == DIRICHLET:
                    continue
                _relax_node(u, kind, cons, phi, mu_h, rhs, i, j, k,
                            nx, ny, nz, periodic, omega)


@numba.njit(cache=True, parallel=True)
def residual_max(u, kind, cons, phi, mu_h, rhs, periodic):
    """Max-norm of the projected nodal residual.

    Unconstrained: |c u - nb - rhs (+ penalty term)|.  Constrained:
    |min(u - phi, lambda)| with lambda the plain nodal residual, the
    natural complementarity residual.
    """
    nx, ny, nz = u.shape
    worst = 0.0
    for i in numba.prange(nx):
        local = 0.0
        for j in range(ny):
            for k in range(nz):
                if kind[i, j, k] == DIRICHLET:
                    continue
                c, nb = _node_terms(u, kind, i, j, k, nx, ny, nz, periodic)
                lam = c * u[i, j, k] - nb - rhs[i, j, k]
                m = mu_h[i, j, k]
                if m > 0.0:
                    gap = u[i, j, k] - phi[i, j, k]
                    if gap < 0.0:
                        lam = lam + m * gap
                    r = abs(lam)
                elif cons[i, j, k]:
                    gap = u[i, j, k] - phi[i, j, k]
                    r = abs(min(gap, lam))
                else:
                    r = abs(lam)
                local = max(local, r)
        worst = max(worst, local)
    return worst


@numba.njit(cache=True)
def kkt_stats(u, kind, cons, phi, rhs, periodic):
    """(max feasibility violation, max negative multiplier, max
    complementarity product) over constrained nodes."""
    nx, ny, nz = u.shape
    feas = 0.0
    neg = 0.0
    comp = 0.0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not cons[i, j, k] or kind[i, j, k] == DIRICHLET:
                    continue
                c, nb = _node_terms(u, kind, i, j, k, nx, ny, nz, periodic)
                lam = c * u[i, j, k] - nb - rhs[i, j, k]
                gap = u[i, j, k] - phi[i, j, k]
                if -gap > feas:
                    feas = -gap
                if -lam > neg:
                    neg = -lam
                if abs(lam * gap) > comp:
                    comp = abs(lam * gap)
    return feas, neg, comp
