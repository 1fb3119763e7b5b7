"""Benchmark harness: lookahead and obstacle-expansion sweeps over problem
sets, post-planning evaluation rollouts, deterministic CSV records and
box-plot summaries.

Per-cell rng streams derive from a stable 64-bit hash of (master seed, map id,
problem id, strategy, family, parameter), so editing one cell of the grid
never perturbs another cell's draws and parallel runs emit identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from .ara_search import SearchConfig, Solution, plan
from .controller_rollout import ControllerConfig, RolloutOutcome, rollout_ensemble
from .problems import ProblemRef
from .strategies import Strategy
from .world_map import Footprint, GridMap, inflate_obstacles, load_map

CSV_HEADER = (
    "map_id,problem_id,strategy,lookahead_m,inflation_m,seed,success,failure_kind,"
    "planning_time_ms,expansions,rollouts,path_duration_s,collisions,steplimit,"
    "unknown_lethal,sigma_v,sigma_w"
)

DEFAULT_LOOKAHEADS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
DEFAULT_RADII = (0.4, 0.8, 1.2)


class EmptyGroup(Exception):
    pass


@dataclass
class ExperimentRecord:
    map_id: str
    problem_id: str
    strategy: str
    lookahead_m: float
    inflation_m: float
    seed: int
    success: bool
    failure_kind: str  # empty when success
    planning_time_ms: float
    expansions: int
    rollouts: int
    path_duration_s: float | None
    collisions: int | None
    steplimit: int | None
    unknown_lethal: bool
    sigma_v: float
    sigma_w: float

    def sort_key(self):
        return (self.map_id, self.problem_id, self.strategy, self.lookahead_m, self.inflation_m)

    def to_row(self) -> list[str]:
        return [
            self.map_id,
            self.problem_id,
            self.strategy,
            _fmt(self.lookahead_m),
            _fmt(self.inflation_m),
            str(self.seed),
            "1" if self.success else "0",
            self.failure_kind,
            _fmt(self.planning_time_ms),
            str(self.expansions),
            str(self.rollouts),
            "" if self.path_duration_s is None else _fmt(self.path_duration_s),
            "" if self.collisions is None else str(self.collisions),
            "" if self.steplimit is None else str(self.steplimit),
            "1" if self.unknown_lethal else "0",
            _fmt(self.sigma_v),
            _fmt(self.sigma_w),
        ]


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def mix_seed(master_seed: int, *parts) -> int:
    """Stable 64-bit stream id from the master seed and cell coordinates."""
    text = "|".join([str(int(master_seed))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")


def evaluate_solution(
    solution: Solution,
    grid: GridMap,
    n: int,
    controller: ControllerConfig,
    rng: np.random.Generator,
    footprint: Footprint,
    unknown_as_lethal: bool = True,
) -> tuple[int, int]:
    """N fresh rollouts of the solution path; returns (collisions, steplimits)."""
    if n < 1:
        raise ValueError("N must be >= 1")
    ens = rollout_ensemble(
        solution.path, n, controller, grid, footprint, rng,
        validity_only=False, nominal_duration=solution.duration,
        unknown_as_lethal=unknown_as_lethal,
    )
    collisions = sum(1 for r in ens.rollouts if r.outcome is RolloutOutcome.COLLISION)
    steplimit = sum(1 for r in ens.rollouts if r.outcome is RolloutOutcome.STEP_LIMIT)
    return collisions, steplimit


@dataclass(frozen=True)
class _Cell:
    """One sweep cell: strategy x parameter applied to one problem.

    `record_inflation` is the cell's grid coordinate (the CSV column);
    `plan_inflation` is what the planner's map is actually inflated by
    (zero for GEGR in the expansion sweep, which plans on the nominal map).
    """

    ref: ProblemRef
    strategy: str
    family: str  # "lookahead" | "expansion"
    lookahead: float
    record_inflation: float
    plan_inflation: float


def _run_cell(cell: _Cell, grid: GridMap, cfg: SearchConfig, master_seed: int) -> ExperimentRecord:
    seed = mix_seed(
        master_seed, cell.ref.map_id, cell.ref.problem_id, cell.strategy,
        cell.family, _fmt(cell.lookahead), _fmt(cell.record_inflation),
    )
    ctrl = ControllerConfig(
        lookahead=cell.lookahead,
        desired_speed=cfg.controller.desired_speed,
        goal_capture_radius=cfg.controller.goal_capture_radius,
        sigma_v=cfg.controller.sigma_v,
        sigma_w=cfg.controller.sigma_w,
        dt=cfg.controller.dt,
        max_steps=cfg.controller.max_steps,
        omega_max=cfg.controller.omega_max,
    )
    run_cfg = SearchConfig(
        budget_s=cfg.budget_s,
        epsilon_schedule=cfg.epsilon_schedule,
        strategy=Strategy(cell.strategy),
        k_rollouts=cfg.k_rollouts,
        eval_rollouts=cfg.eval_rollouts,
        unknown_as_lethal=cfg.unknown_as_lethal,
        timing=cfg.timing,
        footprint_radius=cfg.footprint_radius,
        controller=ctrl,
        lattice=cfg.lattice,
    )
    plan_grid = inflate_obstacles(grid, cell.plan_inflation) if cell.plan_inflation > 0 else grid
    problem = cell.ref.to_problem(plan_grid)
    result = plan(problem, run_cfg, seed)

    collisions = steplimit = None
    duration = None
    if isinstance(result, Solution):
        eval_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(2)[1]))
        collisions, steplimit = evaluate_solution(
            result, grid, cfg.eval_rollouts, ctrl, eval_rng,
            Footprint(cfg.footprint_radius), cfg.unknown_as_lethal,
        )
        duration = result.duration
    return ExperimentRecord(
        map_id=cell.ref.map_id,
        problem_id=cell.ref.problem_id,
        strategy=cell.strategy,
        lookahead_m=cell.lookahead,
        inflation_m=cell.record_inflation,
        seed=seed,
        success=isinstance(result, Solution),
        failure_kind="" if isinstance(result, Solution) else result.kind.value,
        planning_time_ms=result.stats.wall_time_s * 1000.0,
        expansions=result.stats.expansions,
        rollouts=result.stats.rollouts,
        path_duration_s=duration,
        collisions=collisions,
        steplimit=steplimit,
        unknown_lethal=cfg.unknown_as_lethal,
        sigma_v=ctrl.sigma_v,
        sigma_w=ctrl.sigma_w,
    )


# Worker-side map cache (maps are immutable; one load per worker per file).
_MAP_CACHE: dict[str, GridMap] = {}


def _load_cached(path: str) -> GridMap:
    grid = _MAP_CACHE.get(path)
    if grid is None:
        grid = load_map(path)
        _MAP_CACHE[path] = grid
    return grid


def _worker(args):
    cell, cfg, master_seed = args
    grid = _load_cached(cell.ref.map_path)
    return _run_cell(cell, grid, cfg, master_seed)


def _run_cells(cells: list[_Cell], cfg: SearchConfig, master_seed: int, jobs: int) -> list[ExperimentRecord]:
    if jobs <= 1:
        records = [_worker((c, cfg, master_seed)) for c in cells]
    else:
        ctx = get_context("fork")
        with ctx.Pool(jobs) as pool:
            records = pool.map(_worker, [(c, cfg, master_seed) for c in cells], chunksize=4)
    records.sort(key=lambda r: r.sort_key())
    return records


def run_lookahead_sweep(
    refs: list[ProblemRef],
    lookaheads=DEFAULT_LOOKAHEADS,
    cfg: SearchConfig | None = None,
    master_seed: int = 0,
    jobs: int = 1,
    strategies=(Strategy.NR, Strategy.GEGR),
) -> list[ExperimentRecord]:
    """Nominal-map sweep over pure-pursuit lookahead values. NR's plan does not
    depend on the lookahead but is re-planned per cell; evaluation rollouts use
    the cell's lookahead for both strategies."""
    cfg = cfg or SearchConfig()
    cells = [
        _Cell(ref=r, strategy=Strategy(s).value, family="lookahead", lookahead=float(la),
              record_inflation=0.0, plan_inflation=0.0)
        for r in refs
        for la in lookaheads
        for s in strategies
    ]
    return _run_cells(cells, cfg, master_seed, jobs)


def run_expansion_sweep(
    refs: list[ProblemRef],
    radii=DEFAULT_RADII,
    cfg: SearchConfig | None = None,
    master_seed: int = 0,
    jobs: int = 1,
    gegr_lookahead: float = 1.0,
) -> list[ExperimentRecord]:
    """Obstacle-expansion sweep: NR plans on maps inflated by each radius,
    GEGR plans on the nominal map with a fixed lookahead; both are evaluated
    with rollouts on the nominal map."""
    cfg = cfg or SearchConfig()
    cells = []
    for r in refs:
        for radius in radii:
            cells.append(
                _Cell(ref=r, strategy=Strategy.NR.value, family="expansion",
                      lookahead=gegr_lookahead, record_inflation=float(radius),
                      plan_inflation=float(radius))
            )
            cells.append(
                _Cell(ref=r, strategy=Strategy.GEGR.value, family="expansion",
                      lookahead=gegr_lookahead, record_inflation=float(radius),
                      plan_inflation=0.0)
            )
    return _run_cells(cells, cfg, master_seed, jobs)


# -- records I/O ----------------------------------------------------------------


def write_records_csv(records: list[ExperimentRecord], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for rec in records:
        writer.writerow(rec.to_row())
    with open(path, "w", newline="\n") as fh:
        fh.write(buf.getvalue())


def read_records_csv(path) -> list[ExperimentRecord]:
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER.split(","):
            raise ValueError(f"{path}: unexpected records schema")
        out = []
        for row in reader:
            m = dict(zip(CSV_HEADER.split(","), row))
            out.append(
                ExperimentRecord(
                    map_id=m["map_id"],
                    problem_id=m["problem_id"],
                    strategy=m["strategy"],
                    lookahead_m=float(m["lookahead_m"]),
                    inflation_m=float(m["inflation_m"]),
                    seed=int(m["seed"]),
                    success=m["success"] == "1",
                    failure_kind=m["failure_kind"],
                    planning_time_ms=float(m["planning_time_ms"]),
                    expansions=int(m["expansions"]),
                    rollouts=int(m["rollouts"]),
                    path_duration_s=float(m["path_duration_s"]) if m["path_duration_s"] else None,
                    collisions=int(m["collisions"]) if m["collisions"] else None,
                    steplimit=int(m["steplimit"]) if m["steplimit"] else None,
                    unknown_lethal=m["unknown_lethal"] == "1",
                    sigma_v=float(m["sigma_v"]),
                    sigma_w=float(m["sigma_w"]),
                )
            )
    return out


# -- summaries -------------------------------------------------------------------


@dataclass
class BoxStats:
    """Five-number box summary with 1.5*IQR whiskers and explicit outliers."""

    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: list
    count: int


def box_stats(values) -> BoxStats:
    vals = np.asarray(sorted(values), dtype=np.float64)
    if vals.size == 0:
        raise EmptyGroup("no values")
    q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = vals[(vals >= lo_fence) & (vals <= hi_fence)]
    outliers = vals[(vals < lo_fence) | (vals > hi_fence)]
    return BoxStats(
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        outliers=[float(v) for v in outliers],
        count=int(vals.size),
    )


_METRICS = ("collisions", "planning_time_ms", "path_duration_s")


@dataclass
class SummaryReport:
    family: str
    param_values: list
    strategies: tuple
    boxes: dict = field(default_factory=dict)  # (param, strategy, metric) -> BoxStats | None
    paired_n: dict = field(default_factory=dict)  # param -> problems where both succeeded
    failures: dict = field(default_factory=dict)  # (param, strategy) -> exclusive failure count


def summarize(records: list[ExperimentRecord], family: str, strategies=("gegr", "nr")) -> SummaryReport:
    """Paper-style summary: box statistics over problems where BOTH strategies
    succeeded, plus a table counting cycles where exactly one strategy failed."""
    if not records:
        raise EmptyGroup("no records")
    param_of = (lambda r: r.lookahead_m) if family == "lookahead" else (lambda r: r.inflation_m)
    by_cell = {}
    for rec in records:
        by_cell[(param_of(rec), rec.strategy, rec.map_id, rec.problem_id)] = rec
    params = sorted({param_of(r) for r in records})
    problems = sorted({(r.map_id, r.problem_id) for r in records})
    report = SummaryReport(family=family, param_values=params, strategies=tuple(strategies))
    a, b = strategies
    for p in params:
        both, only_a, only_b = [], 0, 0
        for mp, pid in problems:
            ra = by_cell.get((p, a, mp, pid))
            rb = by_cell.get((p, b, mp, pid))
            if ra is None or rb is None:
                continue
            if ra.success and rb.success:
                both.append((ra, rb))
            elif rb.success and not ra.success:
                only_a += 1
            elif ra.success and not rb.success:
                only_b += 1
        report.failures[(p, a)] = only_a
        report.failures[(p, b)] = only_b
        report.paired_n[p] = len(both)
        for strat, idx in ((a, 0), (b, 1)):
            for metric in _METRICS:
                vals = [getattr(pair[idx], metric) for pair in both]
                vals = [v for v in vals if v is not None]
                key = (p, strat, metric)
                report.boxes[key] = box_stats(vals) if vals else None
    return report


def write_summary_csv(report: SummaryReport, path) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["family", "param", "strategy", "metric", "q1", "median", "q3",
             "whisker_low", "whisker_high", "outlier_count", "n"]
        )
        for p in report.param_values:
            for strat in report.strategies:
                for metric in _METRICS:
                    bs = report.boxes.get((p, strat, metric))
                    if bs is None:
                        writer.writerow([report.family, _fmt(p), strat, metric] + [""] * 6 + ["0"])
                        continue
                    writer.writerow(
                        [report.family, _fmt(p), strat, metric, _fmt(bs.q1), _fmt(bs.median),
                         _fmt(bs.q3), _fmt(bs.whisker_low), _fmt(bs.whisker_high),
                         str(len(bs.outliers)), str(bs.count)]
                    )


def write_failure_table(report: SummaryReport, path) -> None:
    """Rows = parameter values, columns = strategies; counts planning cycles
    where that strategy failed and the other succeeded."""
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["param"] + list(report.strategies))
        for p in report.param_values:
            writer.writerow([_fmt(p)] + [str(report.failures[(p, s)]) for s in report.strategies])


def failure_table_text(report: SummaryReport) -> str:
    head = f"{'param':>8} | " + " | ".join(f"{s:>6}" for s in report.strategies)
    lines = ["Number of Failed Planning Attempts", head, "-" * len(head)]
    for p in report.param_values:
        lines.append(
            f"{_fmt(p):>8} | " + " | ".join(f"{report.failures[(p, s)]:>6}" for s in report.strategies)
        )
    return "\n".join(lines)
