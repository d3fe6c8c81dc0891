"""Probability measures on R^d with exact moment and pushforward operations.

Two interchangeable representations are supported: Gaussians ``N(mean, cov)``,
which admit closed-form transport quantities, and finitely supported discrete
measures (atom locations plus weights), which exercise the general solvers.
A ``Measure`` is either one; all measures participating in one simulation must
share the representation and the ambient dimension.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np

SYMMETRY_TOL = 1e-12
PSD_EIG_TOL = -1e-10
WEIGHT_SUM_TOL = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussianMeasure:
    """Gaussian measure ``N(mean, cov)`` on R^d.

    The covariance is symmetrized on ingestion (``(S + S.T) / 2``) so that
    values surviving a file round-trip stay valid; inputs with asymmetry above
    ``SYMMETRY_TOL`` or eigenvalues below ``PSD_EIG_TOL`` are rejected.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (d, d):
            raise ValueError(f"mean/cov shape mismatch: {mean.shape} vs {cov.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("gaussian parameters must be finite")
        asym = float(np.max(np.abs(cov - cov.T))) if d else 0.0
        if asym > SYMMETRY_TOL:
            raise ValueError(f"covariance asymmetry {asym:.3e} exceeds {SYMMETRY_TOL}")
        cov = (cov + cov.T) / 2.0
        smallest = float(np.linalg.eigvalsh(cov)[0])
        if smallest < PSD_EIG_TOL:
            raise ValueError(f"covariance has eigenvalue {smallest:.3e} below {PSD_EIG_TOL}")
        object.__setattr__(self, "mean", _freeze(mean))
        object.__setattr__(self, "cov", _freeze(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def tag(self) -> str:
        return "gaussian"


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported measure ``sum_k w_k delta_{x_k}`` on R^d.

    ``atoms`` is an (m, d) array of support points and ``weights`` a length-m
    probability vector (nonnegative, summing to 1 within ``WEIGHT_SUM_TOL``).
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if atoms.ndim != 2 or atoms.shape[0] < 1:
            raise ValueError("atoms must be a nonempty (m, d) array")
        if weights.shape != (atoms.shape[0],):
            raise ValueError("weights length must match atom count")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atom coordinates must be finite")
        if np.any(weights < 0.0):
            raise ValueError("weights must be nonnegative")
        total = float(weights.sum())
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        object.__setattr__(self, "atoms", _freeze(atoms))
        object.__setattr__(self, "weights", _freeze(weights))

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def tag(self) -> str:
        return "discrete"


Measure = Union[GaussianMeasure, DiscreteMeasure]


def check_same_kind(*measures: Measure) -> None:
    """Reject mixed representations or mixed dimensions."""
    tags = {mu.tag for mu in measures}
    dims = {mu.dim for mu in measures}
    if len(tags) > 1:
        raise ValueError(f"mixed measure representations: {sorted(tags)}")
    if len(dims) > 1:
        raise ValueError(f"mixed dimensions: {sorted(dims)}")


def mean_vector(mu: Measure) -> np.ndarray:
    """First moment of the measure."""
    if isinstance(mu, GaussianMeasure):
        return np.array(mu.mean)
    return mu.weights @ mu.atoms


def second_moment(mu: Measure) -> float:
    """Integral of ``|x|^2``: ``|mean|^2 + tr(cov)`` for Gaussians, a weighted
    sum over atoms for discrete measures. Exact in both cases."""
    if isinstance(mu, GaussianMeasure):
        return float(mu.mean @ mu.mean + np.trace(mu.cov))
    return float(mu.weights @ np.einsum("md,md->m", mu.atoms, mu.atoms))


def quadratic_functional(mu: Measure, Q: np.ndarray, b: np.ndarray, c: float) -> float:
    """Exact value of ``integral (x'Qx + b.x + c) d mu`` for symmetric Q.

    Gaussian: ``tr(Q cov) + mean'Q mean + b.mean + c``.
    Discrete: weighted sum of the integrand over atoms.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if np.max(np.abs(Q - Q.T), initial=0.0) > SYMMETRY_TOL:
        raise ValueError("Q must be symmetric")
    if isinstance(mu, GaussianMeasure):
        m = mu.mean
        return float(np.trace(Q @ mu.cov) + m @ (Q @ m) + b @ m + c)
    vals = np.einsum("md,md->m", mu.atoms, mu.atoms @ Q.T) + mu.atoms @ b + c
    return float(mu.weights @ vals)


def sample(mu: Measure, count: int, seed) -> DiscreteMeasure:
    """Uniform-weight empirical measure with ``count`` atoms, deterministic
    given ``seed``.

    Gaussian draws are ``mean + Z @ sqrt(cov).T`` with standard-normal Z, so
    singular covariances are handled without factorization failures.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    if isinstance(mu, GaussianMeasure):
        w, V = np.linalg.eigh(mu.cov)
        root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
        atoms = mu.mean + rng.standard_normal((count, mu.dim)) @ root.T
    else:
        idx = rng.choice(mu.atoms.shape[0], size=count, p=mu.weights)
        atoms = mu.atoms[idx]
    return DiscreteMeasure(atoms, np.full(count, 1.0 / count))


def push_affine(mu: Measure, A: np.ndarray, v: np.ndarray) -> Measure:
    """Pushforward of ``mu`` under ``x -> Ax + v``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if isinstance(mu, GaussianMeasure):
        cov = A @ mu.cov @ A.T
        return GaussianMeasure(A @ mu.mean + v, (cov + cov.T) / 2.0)
    return DiscreteMeasure(mu.atoms @ A.T + v, mu.weights)


def measure_to_dict(mu: Measure) -> dict:
    if isinstance(mu, GaussianMeasure):
        return {"type": "gaussian", "mean": mu.mean.tolist(), "cov": mu.cov.tolist()}
    return {"type": "discrete", "atoms": mu.atoms.tolist(), "weights": mu.weights.tolist()}


def measure_from_dict(doc: dict) -> Measure:
    kind = doc.get("type")
    if kind == "gaussian":
        return GaussianMeasure(np.array(doc["mean"]), np.array(doc["cov"]))
    if kind == "discrete":
        return DiscreteMeasure(np.array(doc["atoms"]), np.array(doc["weights"]))
    raise ValueError(f"unknown measure type {kind!r}")


def measure_to_json(mu: Measure) -> str:
    # json emits shortest round-trip repr for floats, which preserves doubles
    # exactly (beyond the required 17 significant digits).
    return json.dumps(measure_to_dict(mu))


def measure_from_json(text: str) -> Measure:
    return measure_from_dict(json.loads(text))
