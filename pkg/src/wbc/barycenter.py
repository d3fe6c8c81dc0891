"""Weighted W2 barycenter solvers for each measure representation.

The barycenter of ``{(mu_j, lam_j)}`` minimizes ``sum_j lam_j W2^2(mu_j, .)``.
Gaussians use the covariance fixed-point iteration, 1-D discrete inputs use
exact quantile averaging, and general discrete inputs use free-support
alternating minimization over a fixed number of uniformly weighted atoms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .measures import (DiscreteMeasure, GaussianMeasure, Measure,
                       check_same_kind, mean_vector)
from .transport import SolverConfig, matrix_sqrt_psd, sinkhorn, w2, wp_discrete_exact

WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class BarycenterProblem:
    """A nonempty family of same-kind measures with positive weights summing to 1."""

    measures: tuple[Measure, ...]
    weights: np.ndarray

    def __post_init__(self):
        measures = tuple(self.measures)
        if not measures:
            raise ValueError("problem needs at least one measure")
        check_same_kind(*measures)
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if weights.shape != (len(measures),):
            raise ValueError("weights length must match measure count")
        if np.any(weights <= 0.0):
            raise ValueError("weights must be strictly positive")
        if abs(float(weights.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {float(weights.sum())!r}, not 1")
        weights = np.array(weights, copy=True)
        weights.setflags(write=False)
        object.__setattr__(self, "measures", measures)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.measures[0].dim

    @property
    def tag(self) -> str:
        return self.measures[0].tag


def objective(problem: BarycenterProblem, candidate: Measure, cfg: SolverConfig) -> float:
    """``sum_j lam_j W2^2(mu_j, candidate)`` under the configured solver."""
    return float(sum(lam * w2(mu, candidate, cfg) ** 2
                     for mu, lam in zip(problem.measures, problem.weights)))


def bar_gaussian(problem: BarycenterProblem, cfg: SolverConfig,
                 telemetry: dict | None = None) -> GaussianMeasure:
    """Gaussian barycenter: mean is the weighted mean, covariance solves
    ``S = sum_j lam_j (S^1/2 Sigma_j S^1/2)^1/2`` by fixed-point iteration
    started from the linear average of the covariances."""
    if problem.tag != "gaussian":
        raise ValueError("bar_gaussian requires gaussian measures")
    lam = problem.weights
    means = np.stack([mu.mean for mu in problem.measures])
    covs = np.stack([mu.cov for mu in problem.measures])
    mean = lam @ means

    S = np.einsum("j,jab->ab", lam, covs)
    S = (S + S.T) / 2.0
    tol = cfg.fixed_point_tolerance
    residual = np.inf
    for it in range(cfg.fixed_point_max_iters):
        w, V = np.linalg.eigh(S)
        root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
        inner = root @ covs @ root
        inner = (inner + np.transpose(inner, (0, 2, 1))) / 2.0
        iw, iV = np.linalg.eigh(inner)
        roots = (iV * np.sqrt(np.clip(iw, 0.0, None))[:, None, :]) @ np.transpose(iV, (0, 2, 1))
        S_new = np.einsum("j,jab->ab", lam, roots)
        S_new = (S_new + S_new.T) / 2.0
        residual = float(np.linalg.norm(S_new - S))
        if residual <= tol * (1.0 + float(np.linalg.norm(S))):
            if telemetry is not None:
                telemetry.update(iterations=it + 1, residual=residual)
            return GaussianMeasure(mean, S)
        S = S_new
    raise ConvergenceError(
        f"gaussian barycenter fixed point did not converge in {cfg.fixed_point_max_iters} iterations",
        residual=residual)


def bar_1d(problem: BarycenterProblem) -> DiscreteMeasure:
    """Exact 1-D discrete barycenter: the output quantile function is the
    weighted average of the input quantile functions on the merged grid."""
    if problem.tag != "discrete" or problem.dim != 1:
        raise ValueError("bar_1d requires discrete measures on R")
    quantiles = []
    cums = []
    for mu in problem.measures:
        keep = mu.weights > 0.0
        x, wgt = mu.atoms[keep, 0], mu.weights[keep]
        order = np.argsort(x, kind="stable")
        quantiles.append(x[order])
        cums.append(np.cumsum(wgt[order]))
    grid = np.unique(np.concatenate(cums))
    atoms = np.zeros(len(grid))
    for lam, x, c in zip(problem.weights, quantiles, cums):
        atoms += lam * x[np.minimum(np.searchsorted(c, grid, side="left"), len(x) - 1)]
    du = np.diff(np.concatenate([[0.0], grid]))

    # merge consecutive duplicate positions (quantiles are monotone)
    breaks = np.flatnonzero(np.diff(atoms) != 0.0)
    ends = np.concatenate([breaks, [len(atoms) - 1]])
    merged_atoms = atoms[ends]
    merged_w = np.add.reduceat(du, np.concatenate([[0], breaks + 1]))
    return DiscreteMeasure(merged_atoms[:, None], merged_w / merged_w.sum())


def bar_free_support(problem: BarycenterProblem, support_size: int, cfg: SolverConfig,
                     seed, telemetry: dict | None = None) -> DiscreteMeasure:
    """Approximate discrete barycenter over uniform measures on
    ``support_size`` atoms by alternating coupling solves and barycentric
    projection of the atom positions. Deterministic given ``seed``."""
    if problem.tag != "discrete":
        raise ValueError("bar_free_support requires discrete measures")
    if support_size < 1:
        raise ValueError("support_size must be >= 1")
    lam = problem.weights
    rng = np.random.default_rng(seed)

    all_atoms = np.concatenate([mu.atoms for mu in problem.measures])
    mix = np.concatenate([l * mu.weights for l, mu in zip(lam, problem.measures)])
    mix = mix / mix.sum()
    replace = int(np.count_nonzero(mix > 0.0)) < support_size
    idx = rng.choice(len(all_atoms), size=support_size, replace=replace, p=mix)
    x = np.array(all_atoms[idx])

    bw = np.full(support_size, 1.0 / support_size)
    global_mean = np.einsum("j,jd->d", lam, np.stack([mean_vector(mu) for mu in problem.measures]))
    tol = cfg.fixed_point_tolerance
    objectives = []
    restarts = 0
    gap = np.inf
    for it in range(cfg.fixed_point_max_iters):
        nu = DiscreteMeasure(x, bw)
        proj = np.zeros_like(x)
        obj = 0.0
        for l, mu in zip(lam, problem.measures):
            if cfg.method == "sinkhorn":
                _, plan = sinkhorn(nu, mu, cfg)
            else:
                _, plan = wp_discrete_exact(nu, mu, 2.0, max_entries=cfg.lp_max_entries)
            obj += l * plan.cost_p
            received = plan.coupling.sum(axis=1)
            dead = received <= 1e-15
            if np.any(dead):
                # unreachable with marginal-feasible plans; kept as a guard
                restarts += 1
                proj[dead] += l * global_mean
                received = np.where(dead, 1.0, received)
            proj += l * (plan.coupling @ mu.atoms) / received[:, None]
        objectives.append(obj)
        gap = float(np.max(np.abs(proj - x)))
        if gap <= tol * (1.0 + float(np.max(np.abs(x)))):
            if telemetry is not None:
                telemetry.update(iterations=it + 1, residual=gap,
                                 restarts=restarts, objectives=objectives)
            return nu
        x = proj
    raise ConvergenceError(
        f"free-support barycenter did not converge in {cfg.fixed_point_max_iters} iterations",
        residual=gap)


def bar(problem: BarycenterProblem, cfg: SolverConfig, seed=0,
        support_size: int | None = None, telemetry: dict | None = None) -> Measure:
    """Barycenter dispatch over representations.

    Singleton problems return their unique measure unchanged. Discrete
    measures on R use the exact quantile solver unless the configuration asks
    for the entropic route; other discrete inputs use free support with
    ``support_size`` defaulting to the largest input atom count.
    """
    if len(problem.measures) == 1:
        return problem.measures[0]
    if problem.tag == "gaussian":
        return bar_gaussian(problem, cfg, telemetry=telemetry)
    if problem.dim == 1 and cfg.method != "sinkhorn":
        return bar_1d(problem)
    if support_size is None:
        support_size = max(mu.atoms.shape[0] for mu in problem.measures)
    return bar_free_support(problem, support_size, cfg, seed, telemetry=telemetry)
