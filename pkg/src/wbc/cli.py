"""Scenario-driven command line: run, validate, check, generate-schedule.

A scenario is a single JSON document; every runtime flag has a config-file
equivalent and flags win. Exit codes: 0 success/converged, 1 error or failed
validation, 2 run finished without reaching the diameter threshold.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .barycenter import BarycenterProblem, bar
from .consensus import (ConsensusState, RunAborted, StopCriteria, csv_header,
                        csv_row, run, trace_to_csv)
from .errors import ConfigError
from .measures import (DiscreteMeasure, GaussianMeasure, Measure,
                       measure_from_dict, measure_to_dict, second_moment)
from .network import (GraphSchedule, generate_schedule, schedule_from_dict,
                      schedule_to_dict, union_edges_csv, validate_schedule,
                      verify_meeting_lemma)
from .transport import SolverConfig, w2

log = logging.getLogger("wbc")

PRESETS = ("gaussian_random", "gaussian_two_clusters", "dirac_random", "discrete_random")


@dataclass(frozen=True)
class ScenarioConfig:
    dimension: int
    agents: int
    seed: int
    initial: dict
    schedule: dict
    solver: SolverConfig
    stop: StopCriteria
    out_dir: str
    checkpoint_interval: int
    force: bool = False
    base_dir: Path = Path(".")


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise ConfigError(f"{where}: missing required field {key!r}")
    value = doc[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def parse_config(doc: dict, base_dir: Path = Path(".")) -> ScenarioConfig:
    dimension = _require(doc, "dimension", int, "config")
    agents = _require(doc, "agents", int, "config")
    seed = _require(doc, "seed", int, "config")
    if agents < 2:
        raise ConfigError("config.agents: need at least 2 agents")
    if dimension < 1:
        raise ConfigError("config.dimension: need dimension >= 1")

    initial = _require(doc, "initial", dict, "config")
    if "preset" in initial:
        if initial["preset"] not in PRESETS:
            raise ConfigError(f"config.initial.preset: unknown preset {initial['preset']!r}")
    elif "measures" in initial:
        if len(initial["measures"]) != agents:
            raise ConfigError("config.initial.measures: length must equal config.agents")
    else:
        raise ConfigError("config.initial: needs either 'preset' or 'measures'")

    schedule = _require(doc, "schedule", dict, "config")
    if "file" in schedule:
        path = base_dir / schedule["file"]
        if not path.exists():
            raise ConfigError(f"config.schedule.file: {path} does not exist")
    elif "kind" not in schedule:
        raise ConfigError("config.schedule: needs either 'kind' or 'file'")

    solver_doc = doc.get("solver", {})
    try:
        solver = SolverConfig(**solver_doc)
    except TypeError as exc:
        raise ConfigError(f"config.solver: {exc}") from exc

    stop_doc = _require(doc, "stop", dict, "config")
    stop = StopCriteria(
        max_rounds=_require(stop_doc, "max_rounds", int, "config.stop"),
        diameter_threshold=float(stop_doc.get("diameter_threshold", 0.0)),
    )
    output = doc.get("output", {})
    return ScenarioConfig(
        dimension=dimension,
        agents=agents,
        seed=seed,
        initial=initial,
        schedule=schedule,
        solver=solver,
        stop=stop,
        out_dir=str(output.get("directory", "out")),
        checkpoint_interval=int(output.get("checkpoint_interval", 50)),
        force=bool(doc.get("force", False)),
        base_dir=base_dir,
    )


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "dimension": cfg.dimension,
        "agents": cfg.agents,
        "seed": cfg.seed,
        "initial": cfg.initial,
        "schedule": cfg.schedule,
        "solver": {
            "method": cfg.solver.method,
            "sinkhorn_epsilon": cfg.solver.sinkhorn_epsilon,
            "sinkhorn_max_iters": cfg.solver.sinkhorn_max_iters,
            "sinkhorn_tolerance": cfg.solver.sinkhorn_tolerance,
            "fixed_point_tolerance": cfg.solver.fixed_point_tolerance,
            "fixed_point_max_iters": cfg.solver.fixed_point_max_iters,
            "lp_max_entries": cfg.solver.lp_max_entries,
        },
        "stop": {"max_rounds": cfg.stop.max_rounds,
                 "diameter_threshold": cfg.stop.diameter_threshold},
        "output": {"directory": cfg.out_dir, "checkpoint_interval": cfg.checkpoint_interval},
        "force": cfg.force,
    }


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Scenario materialization
# ---------------------------------------------------------------------------


def build_initial_measures(cfg: ScenarioConfig) -> list[Measure]:
    spec = cfg.initial
    if "measures" in spec:
        measures = [measure_from_dict(m) for m in spec["measures"]]
        for idx, mu in enumerate(measures):
            if mu.dim != cfg.dimension:
                raise ConfigError(f"config.initial.measures[{idx}]: dimension {mu.dim} "
                                  f"!= config.dimension {cfg.dimension}")
        return measures

    preset = spec["preset"]
    params = spec.get("params", {})
    rng = np.random.default_rng(spec.get("seed", cfg.seed))
    n, d = cfg.agents, cfg.dimension

    if preset == "gaussian_random":
        lo, hi = params.get("mean_box", [-1.0, 1.0])
        e0, e1 = params.get("eig_range", [0.5, 2.0])
        out = []
        for _ in range(n):
            mean = rng.uniform(lo, hi, d)
            eigs = rng.uniform(e0, e1, d)
            Q = np.linalg.qr(rng.standard_normal((d, d)))[0]
            out.append(GaussianMeasure(mean, (Q * eigs) @ Q.T))
        return out

    if preset == "gaussian_two_clusters":
        separation = float(params.get("separation", 1.0))
        spread = float(params.get("spread", 0.1))
        cov_scale = float(params.get("cov_scale", 0.05))
        out = []
        for i in range(n):
            base = np.zeros(d)
            if i >= n // 2:
                base[0] = separation
            out.append(GaussianMeasure(base + rng.uniform(-spread, spread, d),
                                       cov_scale * np.eye(d)))
        return out

    if preset == "dirac_random":
        lo, hi = params.get("box", [-1.0, 1.0])
        return [DiscreteMeasure(rng.uniform(lo, hi, (1, d)), np.array([1.0])) for _ in range(n)]

    if preset == "discrete_random":
        m = int(params.get("atoms", 10))
        lo, hi = params.get("box", [0.0, 1.0])
        return [DiscreteMeasure(rng.uniform(lo, hi, (m, d)), rng.dirichlet(np.ones(m)))
                for _ in range(n)]

    raise ConfigError(f"config.initial.preset: unknown preset {preset!r}")


def build_schedule(cfg: ScenarioConfig) -> GraphSchedule:
    spec = cfg.schedule
    if "file" in spec:
        doc = json.loads((cfg.base_dir / spec["file"]).read_text())
        if "rounds" in doc:
            schedule = schedule_from_dict(doc)
        elif "kind" in doc:  # generator-descriptor file
            schedule = generate_schedule(
                kind=doc["kind"], n=int(doc.get("n", cfg.agents)),
                L=int(doc.get("L", 3)), delta=float(doc.get("delta", 0.1)),
                seed=doc.get("seed", cfg.seed),
                horizon=int(doc.get("horizon", cfg.stop.max_rounds)))
        else:
            raise ConfigError(f"config.schedule.file: {spec['file']} has neither "
                              "'rounds' nor 'kind'")
    else:
        schedule = generate_schedule(
            kind=spec["kind"],
            n=int(spec.get("n", cfg.agents)),
            L=int(spec.get("L", 3)),
            delta=float(spec.get("delta", 0.1)),
            seed=spec.get("seed", cfg.seed),
            horizon=int(spec.get("horizon", cfg.stop.max_rounds)),
        )
    if schedule.n != cfg.agents:
        raise ConfigError(f"config.schedule: schedule is for {schedule.n} agents, "
                          f"config.agents is {cfg.agents}")
    return schedule


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _write_checkpoint(out: Path, state: ConsensusState) -> None:
    doc = {"t": state.t, "agents": [measure_to_dict(mu) for mu in state.agents]}
    (out / f"checkpoint_{state.t:06d}.json").write_text(json.dumps(doc))


def cmd_run(config_path: str, overrides: dict | None = None) -> int:
    try:
        cfg = load_config(config_path)
        cfg = _apply_overrides(cfg, overrides or {})
        measures = build_initial_measures(cfg)
        schedule = build_schedule(cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1

    first_window_end = schedule.partition[1] if len(schedule.partition) > 1 else schedule.horizon
    report = validate_schedule(
        schedule, min(schedule.horizon, max(cfg.stop.max_rounds, first_window_end)))
    if not report.ok:
        if cfg.force:
            log.warning("schedule validation bypassed (--force): %d violations",
                        len(report.violations))
        else:
            log.error("schedule invalid:\n%s", report)
            return 1

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        initial = ConsensusState(0, tuple(measures))
        trace = run(initial, schedule, cfg.solver, cfg.stop, seed=cfg.seed)
        aborted = False
    except RunAborted as exc:
        log.error("run aborted: %s", exc)
        trace = exc.trace
        aborted = True
    except ValueError as exc:
        log.error("run rejected: %s", exc)
        return 1

    (out / "trace.csv").write_text(trace_to_csv(trace))
    for state, _ in trace:
        if state.t % cfg.checkpoint_interval == 0 or state is trace[-1][0]:
            _write_checkpoint(out, state)
    if aborted:
        return 1

    final_state, final_rec = trace[-1]
    converged = final_rec.diameter <= cfg.stop.diameter_threshold
    limit = bar(BarycenterProblem(final_state.agents,
                                  np.full(final_state.n, 1.0 / final_state.n)),
                cfg.solver, seed=cfg.seed)
    summary = {
        "converged": bool(converged),
        "rounds": final_state.t,
        "final_diameter": final_rec.diameter,
        "final_v2_max": final_rec.v2_max,
        "limit_estimate": measure_to_dict(limit),
    }
    (out / "summary.json").write_text(json.dumps(summary))
    log.info("finished after %d rounds, diameter %.3e", final_state.t, final_rec.diameter)
    return 0 if converged else 2


def cmd_validate(config_path: str) -> int:
    try:
        cfg = load_config(config_path)
        schedule = build_schedule(cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1
    report = validate_schedule(schedule, schedule.horizon)
    print(report)
    stride = schedule.n - 1
    k_max = (len(schedule.partition) - 1) // stride - 1
    if k_max >= 0:
        meeting = verify_meeting_lemma(schedule, k_max)
        print(meeting)
        if not meeting.ok:
            return 1
    else:
        print("warning: horizon too short to test pairwise meetings")
    return 0 if report.ok else 1


def _ladder(method: str, scale: float) -> tuple[float, float]:
    """(monotonicity slack, residual bound) per solver accuracy class."""
    if method == "closed_form":
        return 1e-9, 1e-8
    if method == "exact_lp":
        return 1e-6, 1e-6
    return 0.02 * max(scale, 1.0), 0.02 * max(scale, 1.0)


def cmd_check(config_path: str, trace_path: str) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1
    trace_file = Path(trace_path)
    if not trace_file.exists():
        log.error("trace file %s does not exist", trace_file)
        return 1
    lines = trace_file.read_text().strip().splitlines()
    header = lines[0].split(",")
    n = len(header) - 4  # t, v2_1..n, v2_max, diameter, max_jensen_residual
    rows = [[float(x) for x in line.split(",")] for line in lines[1:]]
    failures: list[str] = []

    v2 = np.array([row[1:1 + n] for row in rows])
    v2_max = np.array([row[1 + n] for row in rows])
    diam = np.array([row[2 + n] for row in rows])
    jensen = np.array([row[3 + n] for row in rows])

    mono_tol, jensen_tol = _ladder(cfg.solver.method, float(v2_max.max(initial=0.0)))
    if np.any(np.abs(v2.max(axis=1) - v2_max) > 1e-9):
        failures.append("v2_max column disagrees with max over v2 columns")
    bad = np.flatnonzero(np.diff(v2_max) > mono_tol)
    for t in bad:
        failures.append(f"v2_max rises at t={t + 1} by {v2_max[t + 1] - v2_max[t]:.3e} "
                        f"(allowed {mono_tol:.1e})")
    if np.any(diam < 0.0):
        failures.append("negative diameter entry")
    bad = np.flatnonzero(jensen[1:] > jensen_tol)
    for t in bad:
        failures.append(f"barycenter residual {jensen[t + 1]:.3e} above {jensen_tol:.1e} at t={t + 1}")

    # checkpoint-based re-verification
    ckpt_dir = trace_file.parent
    ckpts = sorted(ckpt_dir.glob("checkpoint_*.json"))
    if not ckpts:
        log.warning("no checkpoints next to %s: skipping state re-verification", trace_file)
    states = {}
    for path in ckpts:
        doc = json.loads(path.read_text())
        states[doc["t"]] = [measure_from_dict(m) for m in doc["agents"]]
    for t, agents in states.items():
        if t >= len(rows):
            failures.append(f"checkpoint t={t} beyond trace length {len(rows)}")
            continue
        v2_re = np.array([second_moment(mu) for mu in agents])
        if np.max(np.abs(v2_re - v2[t])) > 1e-9 * (1.0 + np.max(np.abs(v2_re))):
            failures.append(f"checkpoint t={t}: recomputed v2 disagrees with trace")
        best = 0.0
        for i in range(len(agents)):
            for j in range(i + 1, len(agents)):
                best = max(best, w2(agents[i], agents[j], cfg.solver))
        if abs(best - diam[t]) > 1e-9 * (1.0 + best):
            failures.append(f"checkpoint t={t}: recomputed diameter {best:.6e} != {diam[t]:.6e}")

    # The per-step displacement estimate holds for exact barycenter updates
    # (gaussian closed form, 1-D quantile); entropic and restricted-support
    # solves miss it at their approximation scale, so it is skipped for them.
    consecutive = [t for t in states if t + 1 in states]
    exact_route = (cfg.solver.method != "sinkhorn" and consecutive and
                   (states[consecutive[0]][0].tag == "gaussian"
                    or states[consecutive[0]][0].dim == 1))
    if consecutive and exact_route:
        try:
            schedule = build_schedule(cfg)
        except ConfigError:
            schedule = None
        if schedule is not None:
            inv_delta = 1.0 / schedule.delta
            for t in consecutive:
                v2_t = np.array([second_moment(mu) for mu in states[t]])
                spread = float(np.sum(np.abs(v2_t[:, None] - v2_t[None, :])))
                W = schedule.weights(t)
                for i in range(len(states[t])):
                    for l in np.flatnonzero(W[i] > 0.0):
                        move = w2(states[t + 1][i], states[t][l], cfg.solver) ** 2
                        if move > inv_delta * spread + 1e-6:
                            failures.append(
                                f"displacement bound broken at t={t}, agent {i}, neighbor {l}: "
                                f"{move:.3e} > {inv_delta * spread + 1e-6:.3e}")
    elif consecutive:
        log.warning("approximate barycenter route: skipping per-step displacement check")
    else:
        log.warning("no consecutive checkpoints: skipping per-step displacement check")

    for line in failures:
        print(f"FAIL {line}")
    print(f"check: {len(failures)} failure(s) over {len(rows)} rounds")
    return 0 if not failures else 1


def cmd_generate_schedule(args) -> int:
    try:
        schedule = generate_schedule(args.kind, args.agents, args.L, args.delta,
                                     args.seed, args.horizon)
    except ConfigError as exc:
        log.error("%s", exc)
        return 1
    Path(args.out).write_text(json.dumps(schedule_to_dict(schedule)))
    if args.edges_csv:
        Path(args.edges_csv).write_text(union_edges_csv(schedule))
    print(f"wrote {args.out} ({schedule.horizon} rounds, {len(schedule.partition) - 1} windows)")
    return 0


def _apply_overrides(cfg: ScenarioConfig, overrides: dict) -> ScenarioConfig:
    if overrides.get("seed") is not None:
        cfg = replace(cfg, seed=overrides["seed"])
    if overrides.get("max_rounds") is not None:
        cfg = replace(cfg, stop=replace(cfg.stop, max_rounds=overrides["max_rounds"]))
    if overrides.get("threshold") is not None:
        cfg = replace(cfg, stop=replace(cfg.stop, diameter_threshold=overrides["threshold"]))
    if overrides.get("out") is not None:
        cfg = replace(cfg, out_dir=overrides["out"])
    if overrides.get("force"):
        cfg = replace(cfg, force=True)
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="wbc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a consensus scenario")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--max-rounds", type=int, dest="max_rounds")
    p_run.add_argument("--threshold", type=float)
    p_run.add_argument("--out")
    p_run.add_argument("--force", action="store_true",
                       help="run even if schedule validation fails")

    p_val = sub.add_parser("validate", help="validate a scenario's schedule")
    p_val.add_argument("--config", required=True)

    p_chk = sub.add_parser("check", help="re-verify invariants on a stored trace")
    p_chk.add_argument("--config", required=True)
    p_chk.add_argument("--trace", required=True)

    p_gen = sub.add_parser("generate-schedule", help="write a schedule JSON file")
    p_gen.add_argument("--kind", required=True)
    p_gen.add_argument("--agents", type=int, required=True)
    p_gen.add_argument("--L", type=int, default=3)
    p_gen.add_argument("--delta", type=float, default=0.1)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--horizon", type=int, default=100)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--edges-csv", dest="edges_csv")

    sub.add_parser("version", help="print the package version")

    args = parser.parse_args(argv)
    level = {"error": logging.ERROR, "warn": logging.WARNING,
             "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("WBC_LOG_LEVEL", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "run":
        overrides = {"seed": args.seed, "max_rounds": args.max_rounds,
                     "threshold": args.threshold, "out": args.out, "force": args.force}
        return cmd_run(args.config, overrides)
    if args.command == "validate":
        return cmd_validate(args.config)
    if args.command == "check":
        return cmd_check(args.config, args.trace)
    if args.command == "generate-schedule":
        return cmd_generate_schedule(args)
    if args.command == "version":
        print(__version__)
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
