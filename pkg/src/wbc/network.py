"""Time-varying weighted communication graphs.

A schedule holds one row-stochastic weight matrix per round together with a
partition of time into windows; the standing assumptions are that every
positive weight is at least ``delta``, every agent keeps a self-loop, the
positivity pattern is symmetric, window lengths are bounded by ``L``, and the
union graph of every window is connected. ``meets``/``verify_meeting_lemma``
check the pairwise-communication consequence of those assumptions.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError

ROW_SUM_TOL = 1e-12

SCHEDULE_KINDS = ("complete", "ring_rotating", "random_jointly_connected",
                  "leaderless_neighbors")


@dataclass(frozen=True)
class GraphSchedule:
    """Explicit per-round weight matrices plus window bookkeeping.

    ``matrices[t]`` is W(t) for rounds ``0 <= t < horizon``; ``partition``
    holds the window start times ``0 = tau_0 < tau_1 < ...`` covering every
    stored round. ``descriptor`` records generator provenance when present.
    """

    n: int
    matrices: tuple[np.ndarray, ...]
    partition: tuple[int, ...]
    L: int
    delta: float
    descriptor: Optional[dict] = None

    def __post_init__(self):
        mats = tuple(np.asarray(W, dtype=float) for W in self.matrices)
        for W in mats:
            if W.shape != (self.n, self.n):
                raise ValueError(f"weight matrix shape {W.shape} != ({self.n}, {self.n})")
            W.setflags(write=False)
        part = tuple(int(x) for x in self.partition)
        if not part or part[0] != 0 or any(b <= a for a, b in zip(part, part[1:])):
            raise ValueError("partition must be strictly increasing and start at 0")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.L < 1:
            raise ValueError("L must be a positive integer")
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "partition", part)

    @property
    def horizon(self) -> int:
        return len(self.matrices)

    def weights(self, t: int) -> np.ndarray:
        if not 0 <= t < self.horizon:
            raise ValueError(f"round {t} outside stored horizon {self.horizon}")
        return self.matrices[t]

    def adjacency(self, t: int) -> np.ndarray:
        return self.weights(t) > 0.0


@dataclass(frozen=True)
class Violation:
    kind: str
    t: int
    i: int = -1
    j: int = -1
    detail: str = ""

    def __str__(self):
        where = f"t={self.t}"
        if self.i >= 0:
            where += f" i={self.i}"
        if self.j >= 0:
            where += f" j={self.j}"
        return f"[{self.kind}] {where}: {self.detail}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "schedule valid"
        return "\n".join(str(v) for v in self.violations)


def _connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(adj[u]):
            if not seen[v]:
                seen[v] = True
                stack.append(int(v))
    return bool(seen.all())


def validate_schedule(schedule: GraphSchedule, horizon: int) -> ValidationReport:
    """Check every standing assumption for rounds ``t < horizon``.

    Violations become report entries; nothing raises except a horizon that
    does not cover one full window.
    """
    horizon = min(horizon, schedule.horizon)
    if len(schedule.partition) < 2 or horizon < schedule.partition[1]:
        raise ValueError("horizon must cover at least one full partition window")
    report = ValidationReport()
    n = schedule.n

    for t in range(horizon):
        W = schedule.weights(t)
        row_gap = np.abs(W.sum(axis=1) - 1.0)
        for i in np.flatnonzero(row_gap > ROW_SUM_TOL):
            report.violations.append(Violation(
                "row_sum", t, int(i), detail=f"row sums to 1{row_gap[i]:+.3e}"))
        for i in np.flatnonzero(np.diag(W) <= 0.0):
            report.violations.append(Violation(
                "self_loop", t, int(i), detail="diagonal weight is not positive"))
        pattern = W > 0.0
        asym = pattern ^ pattern.T
        for i, j in zip(*np.nonzero(np.triu(asym))):
            report.violations.append(Violation(
                "pattern_asymmetry", t, int(i), int(j),
                detail="w_ij > 0 but w_ji = 0 (or vice versa)"))
        low = pattern & (W < schedule.delta)
        for i, j in zip(*np.nonzero(low)):
            report.violations.append(Violation(
                "delta_bound", t, int(i), int(j),
                detail=f"weight {W[i, j]:.6g} below delta={schedule.delta}"))

    part = schedule.partition
    for k in range(1, len(part)):
        if part[k] - part[k - 1] > schedule.L:
            report.violations.append(Violation(
                "window_length", part[k - 1],
                detail=f"window gap {part[k] - part[k - 1]} exceeds L={schedule.L}"))
    if part[-1] < horizon:
        report.violations.append(Violation(
            "partition_short", part[-1],
            detail=f"partition ends before horizon {horizon}"))

    for k in range(len(part) - 1):
        if part[k + 1] > horizon:
            break
        union = np.zeros((n, n), dtype=bool)
        for t in range(part[k], part[k + 1]):
            union |= schedule.adjacency(t)
        np.fill_diagonal(union, True)
        if not _connected(union):
            report.violations.append(Violation(
                "joint_connectivity", part[k],
                detail=f"window [{part[k]}, {part[k + 1] - 1}] union graph is disconnected"))
    return report


@dataclass(frozen=True)
class MeetingCertificate:
    """A joining sequence ``l_{m1}..l_{m2}`` from i to j: at every round s the
    agent ``l_s`` is a neighbor of ``l_{s+1}`` (``w[l_{s+1}, l_s](s) > 0``)."""

    i: int
    j: int
    window: tuple[int, int]
    sequence: tuple[int, ...]

    def check(self, schedule: GraphSchedule) -> bool:
        m1, m2 = self.window
        if self.sequence[0] != self.i or self.sequence[-1] != self.j:
            return False
        if len(self.sequence) != m2 - m1 + 1:
            return False
        for offset, (prev, nxt) in enumerate(zip(self.sequence, self.sequence[1:])):
            if schedule.weights(m1 + offset)[nxt, prev] <= 0.0:
                return False
        return True


def meets(schedule: GraphSchedule, i: int, j: int, m1: int, m2: int) -> Optional[MeetingCertificate]:
    """Forward reachability from i across rounds ``[m1, m2)``; returns a
    joining-sequence certificate iff one exists."""
    if not 0 <= m1 < m2 <= schedule.horizon:
        raise ValueError(f"need 0 <= m1 < m2 <= horizon, got ({m1}, {m2})")
    n = schedule.n
    reached = np.zeros(n, dtype=bool)
    reached[i] = True
    preds = []
    for s in range(m1, m2):
        mask = schedule.adjacency(s)
        cand = mask & reached[None, :]
        new_reached = cand.any(axis=1)
        pred = np.argmax(cand, axis=1)  # smallest valid predecessor
        preds.append(pred)
        reached = new_reached
        if not reached.any():
            return None
    if not reached[j]:
        return None
    seq = [j]
    for pred in reversed(preds):
        seq.append(int(pred[seq[-1]]))
    seq.reverse()
    return MeetingCertificate(i, j, (m1, m2), tuple(seq))


@dataclass
class MeetingReport:
    failures: list[tuple[int, int, int]] = field(default_factory=list)  # (i, j, k)
    meeting_span: int = 0           # sup_k (t_{k+1} - t_{k-1})
    span_bound: int = 0             # 2 L (n - 1)

    @property
    def ok(self) -> bool:
        return not self.failures and self.meeting_span <= self.span_bound

    def __str__(self):
        lines = [f"meeting span {self.meeting_span} (bound {self.span_bound})"]
        lines += [f"pair ({i}, {j}) fails to meet on window k={k}" for i, j, k in self.failures]
        return "\n".join(lines)


def verify_meeting_lemma(schedule: GraphSchedule, k_max: int) -> MeetingReport:
    """Check that every pair meets on every ``[t_k, t_{k+1}]`` for
    ``t_k = tau_{k(n-1)}`` up to ``k_max``, and that the meeting span honors
    its ``2 L (n-1)`` bound.

    All-pairs reachability is computed with boolean matrix products, the
    batched form of the recursion behind :func:`meets`.
    """
    n = schedule.n
    stride = n - 1
    needed = (k_max + 1) * stride
    if needed > len(schedule.partition) - 1:
        raise ValueError(
            f"partition has {len(schedule.partition) - 1} windows, need {needed} for k_max={k_max}")
    tks = [schedule.partition[k * stride] for k in range(k_max + 2)]
    if tks[-1] > schedule.horizon:
        raise ValueError("schedule horizon does not cover the requested windows")

    report = MeetingReport(span_bound=2 * schedule.L * stride)
    if len(tks) >= 3:
        report.meeting_span = max(tks[k + 1] - tks[k - 1] for k in range(1, len(tks) - 1))
    for k in range(k_max + 1):
        reach = np.eye(n, dtype=bool)
        for s in range(tks[k], tks[k + 1]):
            reach = (reach @ schedule.adjacency(s).T.astype(np.uint8)) > 0
        for i, j in zip(*np.nonzero(~reach)):
            report.failures.append((int(i), int(j), k))
    return report


def leaderless_weights(adjacency: np.ndarray) -> np.ndarray:
    """Uniform neighbor averaging: ``w_ij = 1 / |N_i|`` over the neighborhood
    including the self-loop."""
    adj = np.asarray(adjacency, dtype=bool).copy()
    np.fill_diagonal(adj, True)
    degrees = adj.sum(axis=1)
    return np.where(adj, 1.0 / degrees[:, None], 0.0)


def _random_window_adjacency(rng: np.random.Generator, n: int, length: int) -> list[np.ndarray]:
    """Adjacency patterns for one window: a random spanning tree spread over
    the window's rounds plus random extra edges. Joint connectivity holds by
    construction."""
    adjs = [np.zeros((n, n), dtype=bool) for _ in range(length)]
    perm = rng.permutation(n)
    for idx in range(1, n):
        u = int(perm[idx])
        v = int(perm[rng.integers(0, idx)])
        r = int(rng.integers(0, length))
        adjs[r][u, v] = adjs[r][v, u] = True
    for adj in adjs:
        for _ in range(int(rng.integers(0, n))):
            u, v = rng.integers(0, n, size=2)
            if u != v:
                adj[u, v] = adj[v, u] = True
    return adjs


def _stochastic_rows(rng: np.random.Generator, adj: np.ndarray, delta: float) -> np.ndarray:
    """Random row-stochastic weights on the pattern, every positive entry at
    least delta: ``delta`` floor plus a Dirichlet spread of the slack."""
    n = adj.shape[0]
    W = np.zeros((n, n))
    for i in range(n):
        nbrs = np.flatnonzero(adj[i] | (np.arange(n) == i))
        slack = 1.0 - delta * len(nbrs)
        if slack < 0:
            raise ConfigError(
                f"delta={delta} infeasible for degree {len(nbrs)} (needs delta <= {1.0 / len(nbrs):.4g})")
        W[i, nbrs] = delta + slack * rng.dirichlet(np.ones(len(nbrs)))
    return W


def generate_schedule(kind: str, n: int, L: int, delta: float, seed,
                      horizon: int) -> GraphSchedule:
    """Build a schedule of the given kind covering at least ``horizon``
    rounds with complete windows. Deterministic given ``seed``."""
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(f"unknown schedule kind {kind!r}; choose from {SCHEDULE_KINDS}")
    if n < 2:
        raise ConfigError("need at least two agents")
    if horizon < 1:
        raise ConfigError("horizon must be positive")
    rng = np.random.default_rng(seed)
    descriptor = {"kind": kind, "n": n, "L": L, "delta": delta,
                  "seed": seed, "horizon": horizon}

    if kind == "complete":
        if not 0.0 < delta <= 1.0 / n:
            raise ConfigError(f"complete graph rows need delta <= 1/n = {1.0 / n:.4g}")
        W = np.full((n, n), 1.0 / n)
        return GraphSchedule(n, tuple(W for _ in range(horizon)),
                             tuple(range(horizon + 1)), L, delta, descriptor)

    if kind == "ring_rotating":
        if not 0.0 < delta <= 0.5:
            raise ConfigError("rotating ring rows need delta <= 1/2")
        if L < n - 1:
            raise ConfigError(f"rotating ring needs L >= n - 1 = {n - 1} to stay jointly connected")
        mats = []
        t = 0
        while t < horizon:
            for r in range(n - 1):
                u, v = (t + r) % n, (t + r + 1) % n
                adj = np.zeros((n, n), dtype=bool)
                adj[u, v] = adj[v, u] = True
                mats.append(leaderless_weights(adj))
            t += n - 1
        partition = tuple(range(0, len(mats) + 1, n - 1))
        return GraphSchedule(n, tuple(mats), partition, L, delta, descriptor)

    # random_jointly_connected and leaderless_neighbors share their topology
    if kind == "random_jointly_connected" and not 0.0 < delta <= 1.0 / n:
        raise ConfigError(f"random weights need delta <= 1/n = {1.0 / n:.4g}")
    if kind == "leaderless_neighbors" and not 0.0 < delta <= 1.0 / n:
        raise ConfigError(f"leaderless weights guarantee entries >= 1/n; need delta <= {1.0 / n:.4g}")
    mats: list[np.ndarray] = []
    partition = [0]
    while len(mats) < horizon:
        length = int(rng.integers(1, L + 1))
        for adj in _random_window_adjacency(rng, n, length):
            if kind == "leaderless_neighbors":
                mats.append(leaderless_weights(adj))
            else:
                mats.append(_stochastic_rows(rng, adj, delta))
        partition.append(partition[-1] + length)
    return GraphSchedule(n, tuple(mats), tuple(partition), L, delta, descriptor)


def schedule_to_dict(schedule: GraphSchedule) -> dict:
    doc = {
        "n": schedule.n,
        "L": schedule.L,
        "delta": schedule.delta,
        "partition": list(schedule.partition),
        "rounds": [W.tolist() for W in schedule.matrices],
    }
    if schedule.descriptor is not None:
        doc["descriptor"] = schedule.descriptor
    return doc


def schedule_from_dict(doc: dict) -> GraphSchedule:
    return GraphSchedule(
        n=int(doc["n"]),
        matrices=tuple(np.array(W, dtype=float) for W in doc["rounds"]),
        partition=tuple(doc["partition"]),
        L=int(doc["L"]),
        delta=float(doc["delta"]),
        descriptor=doc.get("descriptor"),
    )


def union_edges_csv(schedule: GraphSchedule) -> str:
    """Per-window union-graph edge lists: window,start,end,i,j rows."""
    out = io.StringIO()
    out.write("window,start,end,i,j\n")
    part = schedule.partition
    for k in range(len(part) - 1):
        if part[k + 1] > schedule.horizon:
            break
        union = np.zeros((schedule.n, schedule.n), dtype=bool)
        for t in range(part[k], part[k + 1]):
            union |= schedule.adjacency(t)
        np.fill_diagonal(union, False)
        for i, j in zip(*np.nonzero(np.triu(union))):
            out.write(f"{k},{part[k]},{part[k + 1] - 1},{i},{j}\n")
    return out.getvalue()
