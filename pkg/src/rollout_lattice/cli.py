"""Command-line entry point.

Subcommands: gen-maps (procedural benchmark maps + problem sets), plan
(single-shot planning with trace output), sweep (lookahead / expansion
experiment families) and report (box-stat summaries + failure tables).

Exit codes: 0 ok, 2 config error, 3 map-generation failure, 4 plan failure.
All randomized behavior flows from --seed; with --timing deterministic,
reruns into the same output directory overwrite with identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import experiment
from .ara_search import PlanFailure, SearchConfig, Solution, plan
from .controller_rollout import ControllerConfig
from .experiment import (
    DEFAULT_LOOKAHEADS,
    DEFAULT_RADII,
    read_records_csv,
    summarize,
    write_failure_table,
    write_records_csv,
    write_summary_csv,
)
from .problems import ProblemRef, load_problem_set, save_problem_set
from .strategies import Strategy
from .world_map import (
    Footprint,
    PerlinMapConfig,
    UnreachableGoals,
    generate_perlin_map,
    inflate_obstacles,
    load_map,
    make_ring_problem_set,
    save_map,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GENERATION = 3
EXIT_PLAN_FAILURE = 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _out_dir(args) -> Path:
    root = args.out or os.environ.get("ROLLOUT_LATTICE_OUT") or "out"
    path = Path(root)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output directory {path} is not writable: {exc}")
    return path


def _write_manifest(out: Path, args, extra=None) -> None:
    payload = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    payload["command"] = args.command
    if extra:
        payload.update(extra)
    with open(out / "manifest.json", "w", newline="\n") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")


def _search_config(args) -> SearchConfig:
    controller = ControllerConfig(
        lookahead=args.lookahead,
        sigma_v=args.sigma_v,
        sigma_w=args.sigma_w,
    )
    try:
        return SearchConfig(
            budget_s=args.budget_s,
            strategy=Strategy(args.strategy) if hasattr(args, "strategy") and args.strategy else Strategy.NR,
            k_rollouts=args.k_rollouts,
            eval_rollouts=args.eval_rollouts,
            unknown_as_lethal=not args.unknown_free,
            timing=args.timing,
            controller=controller,
            trace=getattr(args, "trace", False),
        )
    except ValueError as exc:
        raise CliError(str(exc))


# -- gen-maps -------------------------------------------------------------------


def cmd_gen_maps(args) -> int:
    out = _out_dir(args)
    maps_dir = out / "maps"
    maps_dir.mkdir(exist_ok=True)
    refs = []
    for i in range(args.maps):
        cfg = PerlinMapConfig(
            seed=args.seed + 1000 * i,
            side_m=args.side,
            resolution=args.resolution,
            frequency=args.frequency,
            octaves=args.octaves,
            lethal_threshold=args.threshold,
            ring_radius=args.ring_radius,
            ring_half_width=args.ring_half_width,
            safe_radius=args.safe_radius,
            goal_radius=args.goal_radius,
            goal_count=args.goals,
        )
        try:
            grid = generate_perlin_map(cfg)
        except UnreachableGoals as exc:
            raise CliError(f"map {i}: {exc}", code=EXIT_GENERATION)
        map_id = f"map_{i:03d}"
        save_map(grid, maps_dir / f"{map_id}.ogm")
        for j, prob in enumerate(make_ring_problem_set(grid, cfg)):
            refs.append(
                ProblemRef(
                    map_id=map_id,
                    problem_id=f"{map_id}_g{j}",
                    map_path=f"maps/{map_id}.ogm",
                    start=(prob.start.x, prob.start.y, prob.start.heading),
                    goal=(prob.goal.x, prob.goal.y),
                    tolerance=prob.goal_tolerance,
                )
            )
    save_problem_set(refs, out / "problems.json")
    _write_manifest(out, args, {"n_problems": len(refs)})
    print(f"wrote {args.maps} maps and {len(refs)} problems to {out}")
    return EXIT_OK


# -- plan -----------------------------------------------------------------------


def _write_solution_csv(sol: Solution, path) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t_est_s", "x", "y", "heading"])
        # nominal time estimate along the dense path at each sample
        t = 0.0
        prev = None
        for x, y, h in sol.path:
            if prev is not None:
                t += float(np.hypot(x - prev[0], y - prev[1])) / 2.0
            writer.writerow([f"{t:.6g}", f"{x:.6g}", f"{y:.6g}", f"{h:.6g}"])
            prev = (x, y)


def _write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["event", "x", "y", "ih"])
        for event, x, y, ih in trace:
            writer.writerow([event, f"{x:.6g}", f"{y:.6g}", str(ih)])


def cmd_plan(args) -> int:
    out = _out_dir(args)
    if not args.map or not args.problems:
        raise CliError("plan requires --map and --problems")
    nominal = load_map(args.map)
    refs = load_problem_set(args.problems)
    if args.problem_id:
        refs = [r for r in refs if r.problem_id == args.problem_id]
        if not refs:
            raise CliError(f"problem id {args.problem_id!r} not found")
    ref = refs[0]
    args.trace = True
    cfg = _search_config(args)
    grid = inflate_obstacles(nominal, args.inflate) if args.inflate > 0 else nominal
    problem = ref.to_problem(grid)
    result = plan(problem, cfg, args.seed)
    collisions = steplimit = duration = None
    if isinstance(result, Solution):
        eval_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(args.seed).spawn(2)[1]))
        collisions, steplimit = experiment.evaluate_solution(
            result, nominal, cfg.eval_rollouts, cfg.controller, eval_rng,
            Footprint(cfg.footprint_radius), cfg.unknown_as_lethal,
        )
        duration = result.duration
    record = experiment.ExperimentRecord(
        map_id=ref.map_id, problem_id=ref.problem_id, strategy=cfg.strategy.value,
        lookahead_m=args.lookahead, inflation_m=args.inflate, seed=args.seed,
        success=isinstance(result, Solution),
        failure_kind="" if isinstance(result, Solution) else result.kind.value,
        planning_time_ms=result.stats.wall_time_s * 1000.0,
        expansions=result.stats.expansions, rollouts=result.stats.rollouts,
        path_duration_s=duration, collisions=collisions, steplimit=steplimit,
        unknown_lethal=cfg.unknown_as_lethal,
        sigma_v=cfg.controller.sigma_v, sigma_w=cfg.controller.sigma_w,
    )
    write_records_csv([record], out / "record.csv")
    _write_trace_csv(result.trace, out / "trace.csv")
    _write_manifest(out, args)
    if isinstance(result, Solution):
        _write_solution_csv(result, out / "solution.csv")
        print(
            f"solution: duration {result.duration:.2f} s, epsilon {result.epsilon}, "
            f"{result.stats.expansions} expansions, {result.stats.rollouts} rollouts"
        )
        return EXIT_OK
    print(f"plan failure: {result.kind.value} after {result.stats.expansions} expansions")
    return EXIT_PLAN_FAILURE


# -- sweep ----------------------------------------------------------------------


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    if not args.problems:
        raise CliError("sweep requires --problems")
    refs = load_problem_set(args.problems)
    if args.limit:
        refs = refs[: args.limit]
    cfg = _search_config(args)
    if args.family == "lookahead":
        grid_vals = [float(v) for v in args.lookaheads.split(",")] if args.lookaheads else list(DEFAULT_LOOKAHEADS)
        records = experiment.run_lookahead_sweep(
            refs, grid_vals, cfg, master_seed=args.seed, jobs=args.jobs
        )
    elif args.family == "expansion":
        grid_vals = [float(v) for v in args.radii.split(",")] if args.radii else list(DEFAULT_RADII)
        records = experiment.run_expansion_sweep(
            refs, grid_vals, cfg, master_seed=args.seed, jobs=args.jobs, gegr_lookahead=args.lookahead
        )
    else:
        raise CliError(f"unknown family {args.family!r}")
    write_records_csv(records, out / "records.csv")
    _write_manifest(out, args, {"n_records": len(records)})
    print(f"wrote {len(records)} records to {out / 'records.csv'}")
    return EXIT_OK


# -- report ---------------------------------------------------------------------


def cmd_report(args) -> int:
    out = _out_dir(args)
    try:
        records = read_records_csv(args.records)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc))
    if not records:
        raise CliError("records file is empty")
    family = "lookahead" if len({r.lookahead_m for r in records}) > 1 else "expansion"
    if args.family:
        family = args.family
    report = summarize(records, family)
    write_summary_csv(report, out / "summary.csv")
    write_failure_table(report, out / "failures.csv")
    print(experiment.failure_table_text(report))
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------


def _add_common(p):
    p.add_argument("--out", default=None, help="output directory (default $ROLLOUT_LATTICE_OUT or ./out)")
    p.add_argument("--seed", type=int, default=0)


def _add_planner_flags(p):
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default="nr")
    p.add_argument("--lookahead", type=float, default=1.0)
    p.add_argument("--inflate", type=float, default=0.0)
    p.add_argument("--k-rollouts", dest="k_rollouts", type=int, default=30)
    p.add_argument("--eval-rollouts", dest="eval_rollouts", type=int, default=100)
    p.add_argument("--budget-s", dest="budget_s", type=float, default=1.0)
    p.add_argument("--sigma-v", dest="sigma_v", type=float, default=0.1)
    p.add_argument("--sigma-w", dest="sigma_w", type=float, default=0.15)
    p.add_argument("--timing", choices=["deterministic", "live"], default="deterministic")
    p.add_argument("--unknown-free", action="store_true", help="treat UNKNOWN cells as free instead of lethal")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rollout-lattice")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-maps", help="generate procedural benchmark maps + problems")
    _add_common(g)
    g.add_argument("--maps", type=int, default=45)
    g.add_argument("--side", type=float, default=120.0)
    g.add_argument("--resolution", type=float, default=0.4)
    g.add_argument("--frequency", type=float, default=0.09)
    g.add_argument("--octaves", type=int, default=3)
    g.add_argument("--threshold", type=float, default=0.15)
    g.add_argument("--ring-radius", dest="ring_radius", type=float, default=45.0)
    g.add_argument("--ring-half-width", dest="ring_half_width", type=float, default=2.0)
    g.add_argument("--safe-radius", dest="safe_radius", type=float, default=5.0)
    g.add_argument("--goal-radius", dest="goal_radius", type=float, default=50.0)
    g.add_argument("--goals", type=int, default=8)
    g.set_defaults(func=cmd_gen_maps)

    p = sub.add_parser("plan", help="plan one problem and dump solution + search trace")
    _add_common(p)
    p.add_argument("--map", required=True)
    p.add_argument("--problems", required=True)
    p.add_argument("--problem-id", dest="problem_id", default=None)
    _add_planner_flags(p)
    p.set_defaults(func=cmd_plan)

    s = sub.add_parser("sweep", help="run an experiment family over a problem set")
    _add_common(s)
    s.add_argument("--family", choices=["lookahead", "expansion"], required=True)
    s.add_argument("--problems", required=True)
    s.add_argument("--lookaheads", default=None, help="comma list, default 0.5..3.0")
    s.add_argument("--radii", default=None, help="comma list, default 0.4,0.8,1.2")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--limit", type=int, default=0, help="restrict to the first N problems")
    _add_planner_flags(s)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="summaries + failure tables from a records CSV")
    _add_common(r)
    r.add_argument("--records", required=True)
    r.add_argument("--family", choices=["lookahead", "expansion"], default=None)
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
