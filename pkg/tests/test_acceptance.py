"""Acceptance suite.

One test per numbered criterion; each prints a single PASS line with the
measured quantities once its assertions hold (run with ``pytest -s`` to see
them live). Criteria that need the golden scenario share session fixtures so
the trace is computed once.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import random_discrete, random_gaussian
from wbc.barycenter import BarycenterProblem, bar
from wbc.consensus import ConsensusState, StopCriteria, check_jensen, run
from wbc.measures import DiscreteMeasure, GaussianMeasure, sample, second_moment
from wbc.network import generate_schedule, verify_meeting_lemma
from wbc.transport import SolverConfig, sinkhorn, w2, w2_gaussian, wp_1d, wp_discrete_exact

CLOSED_FORM = SolverConfig(method="closed_form")
EXACT_LP = SolverConfig(method="exact_lp")

GOLDEN = {
    "n": 5, "d": 2, "L": 3, "delta": 0.1, "seed": 42,
    "max_rounds": 500, "threshold": 1e-8,
    "mean_box": (-1.0, 1.0), "eig_range": (0.5, 2.0),
}


def report(criterion: int, detail: str) -> None:
    print(f"[criterion {criterion}] PASS {detail}")


def golden_initial_state() -> ConsensusState:
    rng = np.random.default_rng(GOLDEN["seed"])
    agents = tuple(
        random_gaussian(rng, GOLDEN["d"], GOLDEN["mean_box"], GOLDEN["eig_range"])
        for _ in range(GOLDEN["n"]))
    return ConsensusState(0, agents)


@pytest.fixture(scope="session")
def golden_run():
    schedule = generate_schedule("random_jointly_connected", GOLDEN["n"], GOLDEN["L"],
                                 GOLDEN["delta"], GOLDEN["seed"], GOLDEN["max_rounds"] + 20)
    start = time.perf_counter()
    trace = run(golden_initial_state(), schedule, CLOSED_FORM,
                StopCriteria(GOLDEN["max_rounds"], GOLDEN["threshold"]), seed=GOLDEN["seed"])
    elapsed = time.perf_counter() - start
    return schedule, trace, elapsed


@pytest.fixture(scope="session")
def gaussian_scenario_runs():
    """Fifty random Gaussian scenarios (n <= 6, d <= 3), run to consensus."""
    master = np.random.default_rng(777)
    out = []
    for index in range(50):
        n = int(master.integers(2, 7))
        d = int(master.integers(1, 4))
        L = int(master.integers(1, 4))
        rng = np.random.default_rng(1000 + index)
        agents = tuple(random_gaussian(rng, d) for _ in range(n))
        schedule = generate_schedule("random_jointly_connected", n, L, 0.1,
                                     2000 + index, 620)
        trace = run(ConsensusState(0, agents), schedule, CLOSED_FORM,
                    StopCriteria(600, 1e-8), seed=index)
        out.append((schedule, trace))
    return out


def displacement_bound_violations(schedule, trace, slack=1e-6):
    """Max violation of the per-step displacement estimate over a trace."""
    inv_delta = 1.0 / schedule.delta
    worst = -np.inf
    for (prev, _), (curr, _) in zip(trace, trace[1:]):
        v2 = np.array([second_moment(mu) for mu in prev.agents])
        spread = float(np.sum(np.abs(v2[:, None] - v2[None, :])))
        W = schedule.weights(prev.t)
        for i in range(prev.n):
            for l in np.flatnonzero(W[i] > 0.0):
                move = w2(curr.agents[i], prev.agents[l], CLOSED_FORM) ** 2
                worst = max(worst, move - (inv_delta * spread + slack))
    return worst


class TestCriterion1:
    def test_diameter_decay_to_threshold(self, golden_run):
        _, trace, elapsed = golden_run
        diams = np.array([rec.diameter for _, rec in trace])
        crossed = int(np.argmax(diams <= GOLDEN["threshold"]))
        assert diams[-1] <= GOLDEN["threshold"], "diameter never reached 1e-8"
        assert len(trace) - 1 <= GOLDEN["max_rounds"]
        assert elapsed <= 30.0, f"run took {elapsed:.1f}s"
        # monotone-trend decay: fit a decaying exponent over the informative
        # region and require a large head-to-tail drop
        region = diams[diams > 1e-7]
        slope = np.polyfit(np.arange(len(region)), np.log(region), 1)[0]
        assert slope < 0.0
        head = diams[: max(3, len(diams) // 10)].max()
        tail = diams[-max(3, len(diams) // 10):].max()
        assert tail <= head * 1e-3
        report(1, f"diameter {diams[-1]:.2e} at round {crossed} "
                  f"(start {diams[0]:.2f}), {elapsed:.1f}s")


class TestCriterion2:
    def test_v2_max_monotone_and_common_limit(self, gaussian_scenario_runs):
        worst_rise = -np.inf
        worst_spread = 0.0
        for schedule, trace in gaussian_scenario_runs:
            v2max = np.array([rec.v2_max for _, rec in trace])
            if len(v2max) > 1:
                worst_rise = max(worst_rise, float(np.diff(v2max).max()))
            assert np.all(np.diff(v2max) <= 1e-9), "v2_max increased beyond 1e-9"
            final = trace[-1][1]
            assert final.diameter <= 1e-8, "scenario failed to converge in 600 rounds"
            spread = float(final.v2.max() - final.v2.min())
            worst_spread = max(worst_spread, spread)
            assert spread <= 1e-6
        report(2, f"50 runs: worst v2_max rise {worst_rise:.2e} (tol 1e-9), "
                  f"worst final spread {worst_spread:.2e} (tol 1e-6)")


class TestCriterion3:
    def test_gaussian_barycenter_residuals(self):
        rng = np.random.default_rng(31)
        worst = -np.inf
        for _ in range(200):
            N = int(rng.integers(2, 6))
            d = int(rng.integers(1, 4))
            ms = tuple(random_gaussian(rng, d, (-2.0, 2.0), (0.2, 3.0)) for _ in range(N))
            lam = rng.dirichlet(np.ones(N))
            out = bar(BarycenterProblem(ms, lam), CLOSED_FORM)
            worst = max(worst, check_jensen(ms, lam, out, 2.0, CLOSED_FORM))
            assert worst <= 1e-8
        report(3, f"200 gaussian problems: worst residual {worst:.2e} (tol 1e-8)")

    def test_discrete_barycenter_residuals(self):
        rng = np.random.default_rng(32)
        worst = -np.inf
        for index in range(50):
            N = int(rng.integers(2, 5))
            if index % 2 == 0:
                ms = tuple(random_discrete(rng, int(rng.integers(3, 31)), 1) for _ in range(N))
            else:
                ms = tuple(random_discrete(rng, int(rng.integers(3, 13)), 2) for _ in range(N))
            lam = rng.dirichlet(np.ones(N))
            prob = BarycenterProblem(ms, lam)
            out = bar(prob, EXACT_LP, seed=index)
            worst = max(worst, check_jensen(ms, lam, out, 2.0, EXACT_LP))
            assert worst <= 1e-6
        report(3, f"50 discrete problems (exact LP): worst residual {worst:.2e} (tol 1e-6)")


class TestCriterion4:
    def test_meeting_lemma_bulk(self):
        master = np.random.default_rng(4444)
        start = time.perf_counter()
        worst_margin = -np.inf
        for index in range(1000):
            n = int(master.integers(2, 7))
            L = int(master.integers(1, 5))
            k_max = 2
            horizon = (k_max + 1) * (n - 1) * L + 1
            schedule = generate_schedule("random_jointly_connected", n, L,
                                         0.8 / n, index, horizon)
            rep = verify_meeting_lemma(schedule, k_max)
            assert not rep.failures, f"schedule {index}: pairs failed to meet"
            assert rep.meeting_span <= rep.span_bound
            worst_margin = max(worst_margin, rep.meeting_span - rep.span_bound)
        elapsed = time.perf_counter() - start
        assert elapsed <= 10.0, f"took {elapsed:.1f}s"
        report(4, f"1000 schedules, zero meeting failures, span-bound margin "
                  f"{worst_margin} <= 0, {elapsed:.1f}s (limit 10s)")


class TestCriterion5:
    def test_exact_lp_matches_quantile_solver(self):
        rng = np.random.default_rng(51)
        worst = 0.0
        for index in range(100):
            m, k = (int(x) for x in rng.integers(2, 40, 2))
            uniform = index % 2 == 0
            mu = random_discrete(rng, m, 1, uniform=uniform)
            nu = random_discrete(rng, m if uniform else k, 1, uniform=uniform)
            ref = wp_1d(mu, nu, 2.0)
            got, _ = wp_discrete_exact(mu, nu, 2.0)
            worst = max(worst, abs(got - ref) / max(ref, 1e-12))
            assert got == pytest.approx(ref, rel=1e-8, abs=1e-12)
        report(5, f"100 1-D pairs: worst LP-vs-quantile gap {worst:.2e} (tol 1e-8)")

    def test_gaussian_matches_empirical_lp(self):
        # Empirical versions share the sampling seed: the common normal draws
        # cancel the dominant mean-fluctuation term, and 10^3 atoms per side
        # saturate the solver's 10^6-entry cap (10^4 per side would breach it).
        rng = np.random.default_rng(52)
        count = 1000
        worst = 0.0
        for index in range(100):
            d = index % 3 + 1
            mu = random_gaussian(rng, d)
            nu = random_gaussian(rng, d)
            nu = GaussianMeasure(nu.mean + 2.5 * np.eye(d)[0], nu.cov)
            exact = w2_gaussian(mu, nu)
            emp_mu = sample(mu, count, seed=9000 + index)
            emp_nu = sample(nu, count, seed=9000 + index)
            got, _ = wp_discrete_exact(emp_mu, emp_nu, 2.0)
            rel = abs(got - exact) / exact
            worst = max(worst, rel)
            assert rel <= 0.05
        report(5, f"100 gaussian pairs vs {count}-sample empirical LP: "
                  f"worst gap {worst:.3f} (tol 0.05)")

    def test_sinkhorn_matches_quantile_solver(self):
        rng = np.random.default_rng(53)
        cfg = SolverConfig(method="sinkhorn", sinkhorn_epsilon=1e-3,
                           sinkhorn_max_iters=30_000)
        worst = 0.0
        for _ in range(20):
            m, k = (int(x) for x in rng.integers(8, 30, 2))
            mu = random_discrete(rng, m, 1)
            nu = random_discrete(rng, k, 1)
            nu = DiscreteMeasure(nu.atoms + rng.uniform(0.6, 1.4), nu.weights)
            ref = wp_1d(mu, nu, 2.0)
            est, _ = sinkhorn(mu, nu, cfg)
            rel = abs(est - ref) / ref
            worst = max(worst, rel)
            assert rel <= 1e-3
        report(5, f"20 sinkhorn pairs (eps=1e-3): worst gap {worst:.2e} (tol 1e-3)")


class TestCriterion6:
    @pytest.mark.parametrize("d", [1, 2])
    def test_dirac_agents_reproduce_vector_consensus(self, d):
        rng = np.random.default_rng(60 + d)
        n, rounds = 6, 30
        points = rng.uniform(-1.0, 1.0, (n, d))
        schedule = generate_schedule("random_jointly_connected", n, 3, 0.1, 61, rounds + 5)
        state = ConsensusState(0, tuple(DiscreteMeasure(p[None, :], [1.0]) for p in points))
        trace = run(state, schedule, EXACT_LP, StopCriteria(rounds, 0.0), seed=6)
        X = points.copy()
        worst = 0.0
        for t in range(1, len(trace)):
            X = schedule.weights(t - 1) @ X
            for i, agent in enumerate(trace[t][0].agents):
                assert agent.atoms.shape[0] == 1
                worst = max(worst, float(np.abs(agent.atoms[0] - X[i]).max()))
        assert worst <= 1e-10
        report(6, f"d={d}: 6 dirac agents track the vector iteration, "
                  f"worst gap {worst:.2e} (tol 1e-10)")

    def test_single_complete_round_hits_exact_mean(self):
        rng = np.random.default_rng(66)
        n = 6
        points = rng.uniform(-1.0, 1.0, (n, 2))
        schedule = generate_schedule("complete", n, 1, 1.0 / n, 0, 3)
        state = ConsensusState(0, tuple(DiscreteMeasure(p[None, :], [1.0]) for p in points))
        trace = run(state, schedule, EXACT_LP, StopCriteria(1, 0.0), seed=0)
        target = points.mean(axis=0)
        worst = max(float(np.abs(agent.atoms[0] - target).max())
                    for agent in trace[-1][0].agents)
        assert worst <= 1e-12
        report(6, f"single complete-graph round: worst gap to the mean {worst:.2e}")


class TestCriterion7:
    def test_displacement_bound_on_golden_trace(self, golden_run):
        schedule, trace, _ = golden_run
        worst = displacement_bound_violations(schedule, trace)
        assert worst <= 0.0
        report(7, f"golden trace: displacement bound margin {worst:.2e} <= 0")

    def test_displacement_bound_on_random_traces(self, gaussian_scenario_runs):
        worst = -np.inf
        for schedule, trace in gaussian_scenario_runs:
            worst = max(worst, displacement_bound_violations(schedule, trace))
            assert worst <= 0.0
        report(7, f"50 random traces: worst displacement margin {worst:.2e} <= 0")


def _write_two_clique_scenario(tmp: Path) -> Path:
    n = 4
    W = np.zeros((n, n))
    W[:2, :2] = 0.5
    W[2:, 2:] = 0.5
    sched = {"n": n, "L": 1, "delta": 0.4, "partition": list(range(0, 221)),
             "rounds": [W.tolist()] * 220}
    (tmp / "cliques.json").write_text(json.dumps(sched))
    config = {
        "dimension": 2, "agents": n, "seed": 8,
        "initial": {"preset": "gaussian_two_clusters", "seed": 8,
                    "params": {"separation": 1.0, "spread": 0.05, "cov_scale": 0.02}},
        "schedule": {"file": "cliques.json"},
        "solver": {"method": "closed_form"},
        "stop": {"max_rounds": 200, "diameter_threshold": 1e-8},
        "output": {"directory": str(tmp / "out"), "checkpoint_interval": 100},
    }
    path = tmp / "scenario.json"
    path.write_text(json.dumps(config))
    return path


class TestCriterion8:
    def test_disconnected_cliques_plateau(self, tmp_path):
        config = _write_two_clique_scenario(tmp_path)
        proc = subprocess.run(
            [sys.executable, "-m", "wbc.cli", "run", "--config", str(config), "--force"],
            capture_output=True, text=True)
        assert proc.returncode == 2, proc.stderr
        rows = (tmp_path / "out" / "trace.csv").read_text().strip().splitlines()[1:]
        diams = np.array([float(r.split(",")[-2]) for r in rows])
        assert len(diams) == 201
        assert diams.min() >= 0.1, f"diameter dipped to {diams.min():.3f}"
        report(8, f"two-clique control: exit 2, diameter stays >= {diams.min():.3f} "
                  f"over 200 rounds (required >= 0.1)")

    def test_validator_catches_it_without_force(self, tmp_path):
        config = _write_two_clique_scenario(tmp_path)
        proc = subprocess.run(
            [sys.executable, "-m", "wbc.cli", "run", "--config", str(config)],
            capture_output=True, text=True)
        assert proc.returncode == 1


class TestCriterion9:
    def test_golden_csv_byte_identical_across_runs_and_threads(self, tmp_path):
        config = {
            "dimension": GOLDEN["d"], "agents": GOLDEN["n"], "seed": GOLDEN["seed"],
            "initial": {"preset": "gaussian_random", "seed": GOLDEN["seed"],
                        "params": {"mean_box": [-1, 1], "eig_range": [0.5, 2.0]}},
            "schedule": {"kind": "random_jointly_connected", "L": GOLDEN["L"],
                         "delta": GOLDEN["delta"], "seed": GOLDEN["seed"],
                         "horizon": GOLDEN["max_rounds"] + 20},
            "solver": {"method": "closed_form"},
            "stop": {"max_rounds": GOLDEN["max_rounds"],
                     "diameter_threshold": GOLDEN["threshold"]},
            "output": {"directory": "out", "checkpoint_interval": 100},
        }
        path = tmp_path / "golden.json"
        path.write_text(json.dumps(config))
        blobs = []
        for label, threads in (("a", "1"), ("b", "2"), ("c", "1")):
            env = dict(os.environ)
            env.update(OPENBLAS_NUM_THREADS=threads, OMP_NUM_THREADS=threads)
            out_dir = tmp_path / label
            proc = subprocess.run(
                [sys.executable, "-m", "wbc.cli", "run", "--config", str(path),
                 "--out", str(out_dir)],
                capture_output=True, text=True, env=env)
            assert proc.returncode == 0, proc.stderr
            blobs.append((out_dir / "trace.csv").read_bytes())
        assert blobs[0] == blobs[1] == blobs[2]
        report(9, f"golden CSV byte-identical across 3 runs and thread settings "
                  f"({len(blobs[0])} bytes)")
