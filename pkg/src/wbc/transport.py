"""Wasserstein distances, optimal couplings, and displacement interpolation.

Solvers
-------
``w2_gaussian``      closed form (Bures) for Gaussian pairs
``wp_1d``            exact quantile-function solution for discrete measures on R
``wp_discrete_exact`` exact LP via a transportation simplex (Bland pivoting),
                     with an assignment fast path for uniform equal-size inputs
``sinkhorn``         entropic approximation, log-domain with epsilon scaling
                     and symmetric debiasing

All solvers are pure functions: no global state, deterministic outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import CapacityError, ConfigError, ConvergenceError
from .measures import DiscreteMeasure, GaussianMeasure, Measure, check_same_kind

_METHODS = ("exact_lp", "sinkhorn", "closed_form")


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the iterative and LP solvers.

    ``sinkhorn_epsilon`` is in squared-distance units and its default assumes
    data roughly normalized to a unit bounding box.
    """

    method: str = "exact_lp"
    sinkhorn_epsilon: float = 1e-3
    sinkhorn_max_iters: int = 10_000
    sinkhorn_tolerance: float = 1e-8
    fixed_point_tolerance: float = 1e-12
    fixed_point_max_iters: int = 1_000
    lp_max_entries: int = 1_000_000

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ConfigError(f"unknown solver method {self.method!r}")
        for name in ("sinkhorn_epsilon", "sinkhorn_tolerance", "fixed_point_tolerance"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("sinkhorn_max_iters", "fixed_point_max_iters", "lp_max_entries"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass(frozen=True)
class TransportPlan:
    """Coupling between two discrete measures plus its attained raw cost.

    ``cost_p`` is the transport integral ``sum_ij coupling_ij |x_i - y_j|^p``
    (not the distance, which is ``cost_p ** (1/p)``).
    """

    coupling: np.ndarray
    cost_p: float
    p: float

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        return self.coupling.sum(axis=1), self.coupling.sum(axis=0)


MARGINAL_TOL = 1e-8
ENTRY_TOL = -1e-12


def _check_plan(coupling: np.ndarray, a: np.ndarray, b: np.ndarray,
                tol: float = MARGINAL_TOL) -> None:
    if float(coupling.min(initial=0.0)) < ENTRY_TOL:
        raise RuntimeError(f"coupling has entry {coupling.min():.3e} below {ENTRY_TOL}")
    row_gap = float(np.max(np.abs(coupling.sum(axis=1) - a)))
    col_gap = float(np.max(np.abs(coupling.sum(axis=0) - b)))
    if max(row_gap, col_gap) > tol:
        raise RuntimeError(f"coupling marginal gap {max(row_gap, col_gap):.3e} exceeds {tol}")


def matrix_sqrt_psd(S: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition with eigenvalue
    clamping at zero. Rejects non-symmetric input and eigenvalues that are
    negative beyond round-off."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    scale = float(np.max(np.abs(S), initial=0.0))
    if float(np.max(np.abs(S - S.T), initial=0.0)) > 1e-10 * (1.0 + scale):
        raise ValueError("matrix_sqrt_psd requires a symmetric matrix")
    S = (S + S.T) / 2.0
    w, V = np.linalg.eigh(S)
    if w[0] < -1e-10 * (1.0 + scale):
        raise ValueError(f"matrix is not PSD (eigenvalue {w[0]:.3e})")
    R = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return (R + R.T) / 2.0


def w2_gaussian(mu: GaussianMeasure, nu: GaussianMeasure) -> float:
    """Bures closed form:
    ``sqrt(|m1-m2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2))``.

    Evaluated as ``|m1-m2|^2 + min_U ||R1 - R2 U||_F^2`` over orthogonal U
    (the polar factor of ``R2 R1``), which is the same quantity but avoids
    the trace cancellation that otherwise floods small distances with
    round-off.
    """
    check_same_kind(mu, nu)
    r1 = matrix_sqrt_psd(mu.cov)
    r2 = matrix_sqrt_psd(nu.cov)
    P, _, Qt = np.linalg.svd(r2 @ r1)
    diff = r1 - r2 @ (P @ Qt)
    dm = mu.mean - nu.mean
    return float(np.sqrt(dm @ dm + np.sum(diff * diff)))


def _positive_support(mu: DiscreteMeasure) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    keep = np.flatnonzero(mu.weights > 0.0)
    return mu.atoms[keep], mu.weights[keep], keep


def wp_1d(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0) -> float:
    """Exact W_p on R via the quantile-function formula: integrate
    ``|F_mu^-1(u) - F_nu^-1(u)|^p`` over the merged cumulative-weight grid."""
    check_same_kind(mu, nu)
    if mu.dim != 1:
        raise ValueError("wp_1d requires dimension 1")
    if p < 1.0:
        raise ValueError("p must be >= 1")
    xa, wa, _ = _positive_support(mu)
    xb, wb, _ = _positive_support(nu)
    ia = np.argsort(xa[:, 0], kind="stable")
    ib = np.argsort(xb[:, 0], kind="stable")
    xa, wa = xa[ia, 0], wa[ia]
    xb, wb = xb[ib, 0], wb[ib]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    grid = np.unique(np.concatenate([ca, cb]))
    qa = xa[np.minimum(np.searchsorted(ca, grid, side="left"), len(xa) - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, grid, side="left"), len(xb) - 1)]
    du = np.diff(np.concatenate([[0.0], grid]))
    return float(np.sum(du * np.abs(qa - qb) ** p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# Exact discrete LP
# ---------------------------------------------------------------------------


def _cost_matrix(x: np.ndarray, y: np.ndarray, p: float) -> np.ndarray:
    if p == 2.0:
        return cdist(x, y, "sqeuclidean")
    return cdist(x, y, "euclidean") ** p


def _greedy_basis(C: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Deterministic initial basic feasible solution (m + k - 1 tree cells).

    Cells are allocated in increasing cost order (stable ties by flat index);
    each allocation retires exactly one row or column, which makes the
    allocated cells a spanning tree of the bipartite row/column graph and
    keeps the start close to optimal.
    """
    m, k = len(a), len(b)
    ra, rb = a.copy(), b.copy()
    open_rows, open_cols = m, k
    row_closed = np.zeros(m, dtype=bool)
    col_closed = np.zeros(k, dtype=bool)
    cells: list[tuple[int, int]] = []
    flows: list[float] = []
    for flat in np.argsort(C.ravel(), kind="stable"):
        i, j = divmod(int(flat), k)
        if row_closed[i] or col_closed[j]:
            continue
        q = min(ra[i], rb[j])
        cells.append((i, j))
        flows.append(q)
        ra[i] -= q
        rb[j] -= q
        if open_rows + open_cols == 2:
            break
        if ra[i] <= rb[j]:
            if open_rows > 1:
                row_closed[i] = True
                open_rows -= 1
            else:
                col_closed[j] = True
                open_cols -= 1
        else:
            if open_cols > 1:
                col_closed[j] = True
                open_cols -= 1
            else:
                row_closed[i] = True
                open_rows -= 1
    return cells, flows


def _transportation_simplex(C: np.ndarray, a: np.ndarray, b: np.ndarray,
                            max_pivots: Optional[int] = None) -> np.ndarray:
    """Primal transportation simplex with Bland's least-index pivoting.

    Nodes are rows 0..m-1 and columns m..m+k-1; the basis is a spanning tree
    of m + k - 1 cells. Bland's rule on both the entering and leaving choice
    makes the pivot sequence (and hence the returned vertex) deterministic
    and cycle-free.
    """
    m, k = C.shape
    cells, flows = _greedy_basis(C, a, b)
    basis = {cell: flow for cell, flow in zip(cells, flows)}
    tol = 1e-11 * (1.0 + float(np.max(np.abs(C))))
    if max_pivots is None:
        max_pivots = 50 * m * k + 1000

    for _ in range(max_pivots):
        # adjacency of the basis tree
        adj: list[list[tuple[int, int, int]]] = [[] for _ in range(m + k)]
        for (i, j) in basis:
            adj[i].append((m + j, i, j))
            adj[m + j].append((i, i, j))

        # duals from the tree: u_i + v_j = c_ij, rooted at u_0 = 0
        u = np.zeros(m)
        v = np.zeros(k)
        seen = np.zeros(m + k, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            node = stack.pop()
            for nbr, i, j in adj[node]:
                if not seen[nbr]:
                    seen[nbr] = True
                    if nbr >= m:
                        v[j] = C[i, j] - u[i]
                    else:
                        u[i] = C[i, j] - v[j]
                    stack.append(nbr)

        red = C - u[:, None] - v[None, :]
        for (i, j) in basis:
            red[i, j] = 0.0
        negatives = np.flatnonzero(red.ravel() < -tol)
        if negatives.size == 0:
            break
        enter = int(negatives[0])  # Bland: least index
        ei, ej = divmod(enter, k)

        # tree path from row node ei to column node m+ej
        parent = {ei: None}
        stack = [ei]
        while stack:
            node = stack.pop()
            if node == m + ej:
                break
            for nbr, i, j in adj[node]:
                if nbr not in parent:
                    parent[nbr] = (node, (i, j))
                    stack.append(nbr)
        path_cells = []
        node = m + ej
        while parent[node] is not None:
            node, cell = parent[node]
            path_cells.append(cell)
        path_cells.reverse()  # from ei toward ej; first shares row ei -> minus

        minus = path_cells[0::2]
        plus = path_cells[1::2]
        theta = min(basis[c] for c in minus)
        leaving = min((c for c in minus if basis[c] == theta), key=lambda c: c[0] * k + c[1])
        for c in minus:
            basis[c] -= theta
        for c in plus:
            basis[c] += theta
        del basis[leaving]
        basis[(ei, ej)] = theta
    else:
        raise ConvergenceError("transportation simplex exceeded its pivot budget")

    plan = np.zeros((m, k))
    for (i, j), flow in basis.items():
        plan[i, j] = flow
    return plan


def wp_discrete_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0,
                      max_entries: int = 1_000_000) -> tuple[float, TransportPlan]:
    """Exact W_p between discrete measures by linear programming.

    Uniform measures with equal atom counts reduce to an assignment problem
    (the optimal vertex is a permutation); everything else goes through the
    transportation simplex. Returns the distance and the optimal plan.
    """
    check_same_kind(mu, nu)
    if p < 1.0:
        raise ValueError("p must be >= 1")
    m_full, k_full = mu.atoms.shape[0], nu.atoms.shape[0]
    if m_full * k_full > max_entries:
        raise CapacityError(
            f"instance has {m_full} x {k_full} = {m_full * k_full} coupling entries, "
            f"above the cap of {max_entries}")
    xa, wa, idx_a = _positive_support(mu)
    xb, wb, idx_b = _positive_support(nu)
    C = _cost_matrix(xa, xb, p)

    m, k = C.shape
    uniform = (
        m == k
        and float(np.max(np.abs(wa - 1.0 / m))) <= 1e-15
        and float(np.max(np.abs(wb - 1.0 / m))) <= 1e-15
    )
    if uniform:
        rows, cols = linear_sum_assignment(C)
        sub = np.zeros((m, k))
        sub[rows, cols] = 1.0 / m
    else:
        sub = _transportation_simplex(C, wa, wb)

    plan = np.zeros((m_full, k_full))
    plan[np.ix_(idx_a, idx_b)] = sub
    _check_plan(plan, mu.weights, nu.weights)
    cost = float(np.sum(sub * C))
    return float(max(cost, 0.0) ** (1.0 / p)), TransportPlan(plan, cost, p)


# ---------------------------------------------------------------------------
# Entropic solver
# ---------------------------------------------------------------------------


def _sinkhorn_potentials(C: np.ndarray, la: np.ndarray, lb: np.ndarray, eps: float,
                         tol: float, budget: int) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Log-domain Sinkhorn with epsilon scaling. Returns potentials at the
    target eps, total iterations used, and the final marginal residual."""
    f = np.zeros(len(la))
    g = np.zeros(len(lb))
    eps_now = max(float(C.max(initial=0.0)), eps)
    used = 0
    err = np.inf
    while True:
        stage_tol = tol if eps_now <= eps else 1e-3
        while used < budget:
            g = -eps_now * logsumexp((f[:, None] - C) / eps_now + la[:, None], axis=0)
            f = -eps_now * logsumexp((g[None, :] - C) / eps_now + lb[None, :], axis=1)
            used += 1
            P = np.exp((f[:, None] + g[None, :] - C) / eps_now + la[:, None] + lb[None, :])
            err = float(np.max(np.abs(P.sum(axis=0) - np.exp(lb))))
            if err < stage_tol:
                break
        if eps_now <= eps:
            break
        eps_now = max(eps, eps_now * 0.5)
    return f, g, used, err


def _sinkhorn_self_cost(C: np.ndarray, la: np.ndarray, eps: float, tol: float, budget: int,
                        return_potential: bool = False):
    """Entropic self-transport cost via the symmetric (averaged) fixed-point
    update, which converges far faster than alternating updates on mu = nu."""
    f = np.zeros(len(la))
    eps_now = max(float(C.max(initial=0.0)), eps)
    used = 0
    while True:
        stage_tol = tol if eps_now <= eps else 1e-3
        while used < budget:
            T = -eps_now * logsumexp((f[None, :] - C) / eps_now + la[None, :], axis=1)
            new_f = 0.5 * (f + T)
            used += 1
            gap = float(np.max(np.abs(new_f - f)))
            f = new_f
            if gap < stage_tol * eps_now:
                break
        if eps_now <= eps:
            break
        eps_now = max(eps, eps_now * 0.5)
    P = np.exp((f[:, None] + f[None, :] - C) / eps + la[:, None] + la[None, :])
    cost = float(np.sum(P * C))
    if return_potential:
        return cost, f
    return cost


def sinkhorn(mu: DiscreteMeasure, nu: DiscreteMeasure,
             cfg: SolverConfig) -> tuple[float, TransportPlan]:
    """Debiased entropic W2 estimate plus the entropic coupling.

    The estimate is ``sqrt(cost(mu,nu) - cost(mu,mu)/2 - cost(nu,nu)/2)``
    where each cost is the transport part of the converged entropic plan; the
    self-terms cancel the entropic blur so the self-distance vanishes exactly.
    """
    check_same_kind(mu, nu)
    if cfg.method != "sinkhorn":
        raise ConfigError("sinkhorn() requires cfg.method == 'sinkhorn'")
    eps = cfg.sinkhorn_epsilon
    tol = cfg.sinkhorn_tolerance
    budget = cfg.sinkhorn_max_iters

    xa, wa, idx_a = _positive_support(mu)
    xb, wb, idx_b = _positive_support(nu)
    la, lb = np.log(wa), np.log(wb)

    # Centering both clouds leaves the optimal entropic coupling unchanged
    # (the quadratic cost splits off a potential-absorbable separable part)
    # while shrinking the cost oscillation that drives the convergence rate.
    xa_c = xa - wa @ xa
    xb_c = xb - wb @ xb
    C_centered = _cost_matrix(xa_c, xb_c, 2.0)

    identical = xa.shape == xb.shape and np.array_equal(xa, xb) and np.array_equal(wa, wb)
    if identical:
        # all three debiasing terms coincide, so the estimate cancels exactly;
        # the plan still comes from the symmetric potentials
        _, f = _sinkhorn_self_cost(C_centered, la, eps, tol, budget, return_potential=True)
        g = f
    else:
        f, g, used, err = _sinkhorn_potentials(C_centered, la, lb, eps, tol, budget)
        if err >= tol:
            raise ConvergenceError(
                f"sinkhorn did not reach marginal tolerance {tol:.1e} in {used} iterations",
                residual=err)
    sub = np.exp((f[:, None] + g[None, :] - C_centered) / eps + la[:, None] + lb[None, :])
    cost_ab = float(np.sum(sub * _cost_matrix(xa, xb, 2.0)))
    if identical:
        estimate = 0.0
    else:
        cost_aa = _sinkhorn_self_cost(_cost_matrix(xa_c, xa_c, 2.0), la, eps, tol, budget)
        cost_bb = _sinkhorn_self_cost(_cost_matrix(xb_c, xb_c, 2.0), lb, eps, tol, budget)
        estimate = float(np.sqrt(max(cost_ab - 0.5 * cost_aa - 0.5 * cost_bb, 0.0)))

    plan = np.zeros((mu.atoms.shape[0], nu.atoms.shape[0]))
    plan[np.ix_(idx_a, idx_b)] = sub
    _check_plan(plan, mu.weights, nu.weights, tol=max(MARGINAL_TOL, tol))
    return estimate, TransportPlan(plan, cost_ab, 2.0)


# ---------------------------------------------------------------------------
# Displacement interpolation
# ---------------------------------------------------------------------------


def displacement_interpolate(mu: Measure, nu: Measure, t: float,
                             cfg: SolverConfig) -> Measure:
    """Point on the W2 geodesic from ``mu`` (t=0) to ``nu`` (t=1).

    Gaussian mode uses the linear optimal map, so the result is the Gaussian
    with mean ``(1-t) m0 + t m1`` and covariance ``M S0 M`` for
    ``M = (1-t) I + t A``. Discrete mode moves each coupling entry to
    ``(1-t) x_i + t y_j``, the standard surrogate when the optimal plan
    splits mass.
    """
    check_same_kind(mu, nu)
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if isinstance(mu, GaussianMeasure):
        d = mu.dim
        w, V = np.linalg.eigh(mu.cov)
        scale = float(max(w.max(initial=0.0), 1.0))
        if w[0] <= 1e-12 * scale:
            raise ValueError(
                "source covariance is singular; add jitter (e.g. 1e-9 * I) before interpolating")
        root = (V * np.sqrt(w)) @ V.T
        inv_root = (V / np.sqrt(w)) @ V.T
        inner = root @ nu.cov @ root
        A = inv_root @ matrix_sqrt_psd((inner + inner.T) / 2.0) @ inv_root
        M = (1.0 - t) * np.eye(d) + t * A
        cov = M @ mu.cov @ M.T
        return GaussianMeasure((1.0 - t) * mu.mean + t * nu.mean, (cov + cov.T) / 2.0)

    _, plan = wp_discrete_exact(mu, nu, 2.0, max_entries=cfg.lp_max_entries)
    rows, cols = np.nonzero(plan.coupling > 0.0)
    atoms = (1.0 - t) * mu.atoms[rows] + t * nu.atoms[cols]
    weights = plan.coupling[rows, cols]
    return DiscreteMeasure(atoms, weights / weights.sum())


def w2(mu: Measure, nu: Measure, cfg: SolverConfig) -> float:
    """W2 through the solver the configuration selects for the representation."""
    check_same_kind(mu, nu)
    if isinstance(mu, GaussianMeasure):
        return w2_gaussian(mu, nu)
    if mu.dim == 1:
        return wp_1d(mu, nu, 2.0)
    if cfg.method == "sinkhorn":
        return sinkhorn(mu, nu, cfg)[0]
    return wp_discrete_exact(mu, nu, 2.0, max_entries=cfg.lp_max_entries)[0]
