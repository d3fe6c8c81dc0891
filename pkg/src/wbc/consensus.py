"""Synchronous barycentric consensus engine.

Each round, every agent replaces its measure with the weighted barycenter of
its neighbors' measures, all agents reading the same round-t snapshot. The
engine records per-round metrics (second moments, pairwise W2 matrix,
diameter, barycenter-inequality residuals) and exposes offline checkers for
the quantities the convergence argument monitors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .barycenter import BarycenterProblem, bar
from .errors import ConvergenceError
from .measures import Measure, check_same_kind, quadratic_functional, second_moment
from .network import GraphSchedule
from .transport import SolverConfig, w2


@dataclass(frozen=True)
class ConsensusState:
    """Round index plus the agents' measures (same representation and d)."""

    t: int
    agents: tuple[Measure, ...]

    def __post_init__(self):
        agents = tuple(self.agents)
        if len(agents) < 2:
            raise ValueError("a consensus run needs at least two agents")
        check_same_kind(*agents)
        object.__setattr__(self, "agents", agents)

    @property
    def n(self) -> int:
        return len(self.agents)


@dataclass(frozen=True)
class StopCriteria:
    max_rounds: int
    diameter_threshold: float = 0.0

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.diameter_threshold < 0.0:
            raise ValueError("diameter_threshold must be nonnegative")


@dataclass(frozen=True)
class MetricsRecord:
    t: int
    v2: np.ndarray
    v2_max: float
    w2_pairwise: np.ndarray
    diameter: float
    jensen_residuals: np.ndarray
    solver_telemetry: dict = field(default_factory=dict)

    @property
    def max_jensen_residual(self) -> float:
        return float(np.max(self.jensen_residuals))


class RunAborted(RuntimeError):
    """A barycenter solve failed mid-run; carries the partial trace."""

    def __init__(self, message: str, trace, round_index: int, agent: int):
        super().__init__(message)
        self.trace = trace
        self.round_index = round_index
        self.agent = agent


def diameter(state: ConsensusState, cfg: SolverConfig) -> float:
    """Maximum pairwise W2 among the agents."""
    best = 0.0
    for i in range(state.n):
        for j in range(i + 1, state.n):
            best = max(best, w2(state.agents[i], state.agents[j], cfg))
    return best


def check_jensen(measures: Sequence[Measure], weights: np.ndarray, bar_out: Measure,
                 k: float = 2.0, cfg: SolverConfig = SolverConfig()) -> float:
    """Residual of the barycentric convexity bound for the second moment:

    ``V2(bar) - sum_j lam_j V2(mu_j) + (k/2) sum_j lam_j W2^2(bar, mu_j)``.

    Nonpositive (within solver tolerance) whenever ``bar_out`` is a true
    barycenter of the inputs; a clearly positive value flags a bogus one.
    """
    weights = np.asarray(weights, dtype=float)
    value = second_moment(bar_out)
    for lam, mu in zip(weights, measures):
        value -= lam * second_moment(mu)
        value += (k / 2.0) * lam * w2(bar_out, mu, cfg) ** 2
    return float(value)


def _metrics(state: ConsensusState, cfg: SolverConfig,
             jensen_residuals: np.ndarray, telemetry: dict) -> MetricsRecord:
    n = state.n
    v2 = np.array([second_moment(mu) for mu in state.agents])
    pairwise = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            pairwise[i, j] = pairwise[j, i] = w2(state.agents[i], state.agents[j], cfg)
    return MetricsRecord(
        t=state.t,
        v2=v2,
        v2_max=float(v2.max()),
        w2_pairwise=pairwise,
        diameter=float(pairwise.max()),
        jensen_residuals=jensen_residuals,
        solver_telemetry=telemetry,
    )


def step(state: ConsensusState, schedule: GraphSchedule, cfg: SolverConfig,
         seed: int = 0) -> ConsensusState:
    """One synchronous round: agent i moves to the barycenter of its round-t
    neighbors weighted by row i of W(t). Rows are already stochastic over the
    neighborhood, so the weights are used as-is."""
    W = schedule.weights(state.t)
    new_agents = []
    for i in range(state.n):
        nbrs = np.flatnonzero(W[i] > 0.0)
        problem = BarycenterProblem(tuple(state.agents[j] for j in nbrs), W[i, nbrs])
        try:
            new_agents.append(bar(problem, cfg, seed=[seed, state.t, i]))
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"round {state.t}, agent {i}: barycenter solve failed: {exc}") from exc
    return ConsensusState(state.t + 1, tuple(new_agents))


def _step_with_metrics(state: ConsensusState, schedule: GraphSchedule, cfg: SolverConfig,
                       seed: int) -> tuple[ConsensusState, MetricsRecord]:
    new_state = step(state, schedule, cfg, seed)
    W = schedule.weights(state.t)
    residuals = np.zeros(state.n)
    for i in range(state.n):
        nbrs = np.flatnonzero(W[i] > 0.0)
        residuals[i] = check_jensen(
            [state.agents[j] for j in nbrs], W[i, nbrs], new_state.agents[i], 2.0, cfg)
    return new_state, _metrics(new_state, cfg, residuals, {})


def run(initial: ConsensusState, schedule: GraphSchedule, cfg: SolverConfig,
        stop: StopCriteria, seed: int = 0) -> list[tuple[ConsensusState, MetricsRecord]]:
    """Iterate rounds until the diameter falls to the threshold or the round
    budget runs out. The trace holds one (state, metrics) entry per recorded
    round, starting with the initial state (whose residual slots are zero
    because no solve produced it)."""
    if schedule.horizon < initial.t + stop.max_rounds:
        raise ValueError(
            f"schedule horizon {schedule.horizon} does not cover {stop.max_rounds} rounds")
    state = initial
    trace = [(state, _metrics(state, cfg, np.zeros(initial.n), {}))]
    for _ in range(stop.max_rounds):
        if trace[-1][1].diameter <= stop.diameter_threshold:
            break
        try:
            state, record = _step_with_metrics(state, schedule, cfg, seed)
        except ConvergenceError as exc:
            raise RunAborted(str(exc), trace, state.t, -1) from exc
        trace.append((state, record))
    return trace


def functional_trace(trace: Sequence[tuple[ConsensusState, MetricsRecord]],
                     Q: np.ndarray, b: np.ndarray, c: float) -> np.ndarray:
    """Per-round, per-agent values of the quadratic functional
    ``integral (x'Qx + b.x + c) d mu_i(t)``.

    Convex (PSD) Q is what the common-limit result covers; a non-PSD Q is
    reported on the warning channel and evaluated anyway.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    eigs = np.linalg.eigvalsh((Q + Q.T) / 2.0)
    if eigs[0] < -1e-10 * (1.0 + float(np.max(np.abs(Q)))):
        warnings.warn(
            f"Q has negative eigenvalue {eigs[0]:.3e}: the functional is not convex "
            "and per-agent limits need not agree", UserWarning, stacklevel=2)
    return np.array([[quadratic_functional(mu, Q, b, c) for mu in state.agents]
                     for state, _ in trace])


# ---------------------------------------------------------------------------
# Trace serialization (CSV contract: 17 significant digits per real)
# ---------------------------------------------------------------------------


def csv_header(n: int) -> str:
    return ",".join(["t"] + [f"v2_{i + 1}" for i in range(n)]
                    + ["v2_max", "diameter", "max_jensen_residual"])


def csv_row(record: MetricsRecord) -> str:
    reals = list(record.v2) + [record.v2_max, record.diameter, record.max_jensen_residual]
    return ",".join([str(record.t)] + [f"{x:.17g}" for x in reals])


def trace_to_csv(trace: Sequence[tuple[ConsensusState, MetricsRecord]]) -> str:
    n = trace[0][0].n
    lines = [csv_header(n)] + [csv_row(rec) for _, rec in trace]
    return "\n".join(lines) + "\n"
