"""Anytime Repairing A* over the state lattice.

Weighted-A* iterations over a decreasing epsilon schedule under a hard time
budget, with strategy hooks for rollout validation and the descendant-pruning
graph-revision primitive. The budget clock is either the wall clock ("live")
or a deterministic virtual clock charged per expansion and per rollout step
("deterministic"), which makes whole planning runs reproducible bit for bit.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .controller_rollout import ControllerConfig
from .geometry import Pose2D
from .lattice import (
    ST_CLOSED,
    ST_INVALID,
    ST_NEW,
    ST_OPEN,
    LatticeConfig,
    LatticeEdge,
    LatticeGraph,
    LatticeNode,
    build_primitive_set,
    expand,
)
from .problems import PlanningProblem
from .strategies import (
    MIN_EDGE_DURATION,
    Strategy,
    VerdictKind,
    validate_expansion_per,
    validate_goal_gegr,
    validate_goal_ger,
)
from .world_map import Footprint, check_footprint_collision

# Virtual-clock charges (seconds) for the deterministic timing mode, sized to
# match this implementation's measured per-unit costs so budgets bite the same
# way they would on a wall clock.
EXPANSION_COST_S = 1.0e-4
ROLLOUT_STEP_COST_S = 2.0e-6


class FailureKind(str, Enum):
    TIMED_OUT = "timed_out"
    EXHAUSTED = "exhausted"
    START_IN_COLLISION = "start_in_collision"
    GOAL_UNREACHABLE = "goal_unreachable"


@dataclass
class SearchConfig:
    budget_s: float = 1.0
    epsilon_schedule: tuple = (3.0, 2.0, 1.5, 1.0)
    strategy: Strategy = Strategy.NR
    k_rollouts: int = 30
    eval_rollouts: int = 100
    unknown_as_lethal: bool = True
    timing: str = "deterministic"  # or "live"
    footprint_radius: float = 0.7
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    trace: bool = False

    def __post_init__(self):
        sched = tuple(float(e) for e in self.epsilon_schedule)
        if not sched or sched[-1] != 1.0 or any(later >= earlier for earlier, later in zip(sched, sched[1:])):
            raise ValueError("epsilon schedule must be strictly decreasing and end at 1.0")
        self.epsilon_schedule = sched
        if self.budget_s <= 0:
            raise ValueError("budget must be > 0")
        if self.k_rollouts < 1 or self.eval_rollouts < 1:
            raise ValueError("rollout counts must be >= 1")
        if self.timing not in ("deterministic", "live"):
            raise ValueError("timing must be 'deterministic' or 'live'")
        if not isinstance(self.strategy, Strategy):
            self.strategy = Strategy(self.strategy)


class Clock:
    """Budget clock. Deterministic mode advances only by charged work units,
    so identical searches expire at identical points regardless of host speed."""

    def __init__(self, budget_s: float, mode: str = "deterministic"):
        self.budget_s = budget_s
        self.mode = mode
        self.virtual_s = 0.0
        self.n_expansions = 0
        self.n_rollout_steps = 0
        self._t0 = time.perf_counter()

    def charge_expansion(self, n: int = 1):
        self.n_expansions += n
        self.virtual_s += n * EXPANSION_COST_S

    def charge_rollout_steps(self, n: int):
        self.n_rollout_steps += n
        self.virtual_s += n * ROLLOUT_STEP_COST_S

    def elapsed(self) -> float:
        if self.mode == "live":
            return time.perf_counter() - self._t0
        return self.virtual_s

    def real_elapsed(self) -> float:
        return time.perf_counter() - self._t0

    def expired(self) -> bool:
        return self.elapsed() >= self.budget_s


@dataclass
class SearchStats:
    expansions: int = 0
    rollouts: int = 0
    rollout_steps: int = 0
    revisions: int = 0
    removed_nodes: int = 0
    wall_time_s: float = 0.0
    real_time_s: float = 0.0
    incumbent_durations: list = field(default_factory=list)


@dataclass(eq=False)
class Solution:
    edges: list
    path: np.ndarray  # (n, 3) dense world poses
    duration: float
    epsilon: float
    stats: SearchStats
    trace: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return True


@dataclass(eq=False)
class PlanFailure:
    kind: FailureKind
    stats: SearchStats
    trace: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return False


_PRIMITIVE_CACHE: dict[LatticeConfig, list] = {}


def primitives_for(cfg: LatticeConfig):
    prims = _PRIMITIVE_CACHE.get(cfg)
    if prims is None:
        prims = build_primitive_set(
            cfg.position_resolution,
            cfg.heading_count,
            cfg.curvatures,
            cfg.arc_length,
            cfg.turn_in_place,
            cfg.swath_spacing,
        )
        _PRIMITIVE_CACHE[cfg] = prims
    return prims


def concat_edge_paths(start_pose: Pose2D, edges: list) -> np.ndarray:
    """Dense pose path for an edge chain; edge joints are deduplicated."""
    if not edges:
        return np.array([[start_pose.x, start_pose.y, start_pose.heading]])
    parts = [edges[0].path]
    parts.extend(e.path[1:] for e in edges[1:])
    return np.concatenate(parts, axis=0)


class Planner:
    """One plan call: owns the graph, the open/closed/incons sets and the rng."""

    def __init__(self, problem: PlanningProblem, cfg: SearchConfig, seed: int):
        self.problem = problem
        self.cfg = cfg
        self.grid = problem.map
        self.footprint = Footprint(cfg.footprint_radius)
        self.clock = Clock(cfg.budget_s, cfg.timing)
        self.stats = SearchStats()
        self.trace: list = []
        self.v_max = self.grid.v_max()
        goal = problem.goal
        tol_slack = problem.goal_tolerance / self.v_max
        v_max = self.v_max

        def h_fn(x, y):
            # Euclidean-over-best-speed heuristic, shrunk by the goal-tolerance
            # slack so it stays admissible for the "within tolerance" goal test.
            return max(0.0, math.sqrt((goal.x - x) ** 2 + (goal.y - y) ** 2) / v_max - tol_slack)

        self.graph = LatticeGraph(
            self.grid, primitives_for(cfg.lattice), self.footprint, cfg.lattice,
            h_fn=h_fn, unknown_as_lethal=cfg.unknown_as_lethal,
        )
        root = np.random.SeedSequence(seed)
        self.val_rng = np.random.Generator(np.random.PCG64(root.spawn(1)[0]))
        self.heap: list = []
        self.open_set: set[LatticeNode] = set()
        self.incons: set[LatticeNode] = set()
        self.closed: set[LatticeNode] = set()
        self._seq = itertools.count()
        self.incumbent: Solution | None = None
        self.open_exhausted = False
        self.start_node: LatticeNode | None = None
        self._controller = None

    # -- bookkeeping ---------------------------------------------------------

    def _push(self, node: LatticeNode, epsilon: float):
        node.status = ST_OPEN
        self.open_set.add(node)
        heapq.heappush(self.heap, (node.g + epsilon * node.h, -node.g, next(self._seq), node, node.g))

    def _pop_valid(self, epsilon: float):
        while self.heap:
            f, negg, _, node, g_at = heapq.heappop(self.heap)
            if node.alive and node.status == ST_OPEN and node.g == g_at:
                return f, node
        return None

    def _peek_key(self) -> float:
        while self.heap:
            f, negg, _, node, g_at = self.heap[0]
            if node.alive and node.status == ST_OPEN and node.g == g_at:
                return f
            heapq.heappop(self.heap)
        return math.inf

    def _relax(self, node: LatticeNode, succ: LatticeNode, edge: LatticeEdge, epsilon: float):
        g_new = node.g + edge.duration
        if g_new >= succ.g:
            return
        old = succ.parent_edge
        if old is not None:
            old.source.children.discard(succ)
        succ.parent_edge = edge
        node.children.add(succ)
        succ.g = g_new
        if succ.status == ST_CLOSED:
            self.incons.add(succ)
        else:
            self._push(succ, epsilon)

    def _is_goal(self, node: LatticeNode) -> bool:
        dx = node.x - self.problem.goal.x
        dy = node.y - self.problem.goal.y
        return math.sqrt(dx * dx + dy * dy) <= self.problem.goal_tolerance

    def _chain(self, node: LatticeNode) -> list[LatticeEdge]:
        edges = []
        cur = node
        while cur.parent_edge is not None:
            edges.append(cur.parent_edge)
            cur = cur.parent_edge.source
        edges.reverse()
        return edges

    def _controller_cfg(self) -> ControllerConfig:
        if self._controller is None:
            c = self.cfg.controller
            if c.desired_speed is None:
                c = ControllerConfig(
                    lookahead=c.lookahead, desired_speed=self.v_max,
                    goal_capture_radius=c.goal_capture_radius, sigma_v=c.sigma_v,
                    sigma_w=c.sigma_w, dt=c.dt, max_steps=c.max_steps, omega_max=c.omega_max,
                )
            self._controller = c
        return self._controller

    def _extract(self, node: LatticeNode, epsilon: float) -> Solution:
        edges = self._chain(node)
        snapshot = [LatticeEdge(e.source, e.target, e.primitive, e.duration, e.path) for e in edges]
        start_pose = Pose2D(self.start_node.x, self.start_node.y, self.start_node.heading)
        path = concat_edge_paths(start_pose, snapshot)
        return Solution(
            edges=snapshot, path=path, duration=node.g, epsilon=epsilon,
            stats=self.stats, trace=self.trace,
        )

    def _adopt(self, sol: Solution) -> None:
        if self.incumbent is None or sol.duration < self.incumbent.duration:
            self.incumbent = sol
            self.stats.incumbent_durations.append(sol.duration)
            if self.cfg.trace:
                self.trace.append(("incumbent", sol.duration, sol.epsilon, 0))

    def _trace_node(self, kind: str, node: LatticeNode):
        if self.cfg.trace:
            self.trace.append((kind, node.x, node.y, node.state.ih))

    # -- goal-candidate validation --------------------------------------------

    def _validate_goal(self, node: LatticeNode, epsilon: float):
        """Returns ("accept" | "defer" | "reject" | "abort", solution-or-None)."""
        edges = self._chain(node)
        start_pose = Pose2D(self.start_node.x, self.start_node.y, self.start_node.heading)
        path = concat_edge_paths(start_pose, edges)
        ctrl = self._controller_cfg()
        stream = self.val_rng.spawn(1)[0]
        top_key = self._peek_key()
        before = self.clock.n_rollout_steps
        if self.cfg.strategy is Strategy.GER:
            verdict = validate_goal_ger(
                path, self.cfg.k_rollouts, ctrl, self.grid, self.footprint, stream,
                top_key, clock=self.clock, nominal_duration=node.g,
                unknown_as_lethal=self.cfg.unknown_as_lethal,
            )
        else:
            verdict = validate_goal_gegr(
                path, edges, self.cfg.k_rollouts, ctrl, self.grid, self.footprint, stream,
                top_key, clock=self.clock, nominal_duration=node.g,
                unknown_as_lethal=self.cfg.unknown_as_lethal,
            )
        if verdict is not None and verdict.ensemble is not None:
            self.stats.rollouts += len(verdict.ensemble.rollouts)
        self.stats.rollout_steps = self.clock.n_rollout_steps
        if verdict is None:
            return "abort", None
        if verdict.kind in (VerdictKind.ACCEPT, VerdictKind.DEFER):
            # Localize the validated mean into the goal edge so the node's
            # cost-to-come equals the rollout-mean duration.
            if edges:
                last = edges[-1]
                last.duration = max(verdict.revised_cost - last.source.g, MIN_EDGE_DURATION)
                node.g = last.source.g + last.duration
            else:
                node.g = 0.0
            if verdict.kind is VerdictKind.ACCEPT:
                return "accept", self._extract(node, epsilon)
            return "defer", None
        if verdict.kind is VerdictKind.REJECT_AND_REVISE:
            n_c = verdict.collision_node
            removed = remove_node_descendants(n_c, self)
            self.stats.revisions += 1
            self.stats.removed_nodes += removed
            self._trace_node("invalid", n_c)
            return "reject", None
        node.status = ST_INVALID
        self.open_set.discard(node)
        self.closed.add(node)
        self._trace_node("invalid", node)
        return "reject", None

    # -- one weighted-A* iteration ---------------------------------------------

    def improve_path(self, epsilon: float) -> Solution | None:
        """Run one epsilon iteration; returns a newly accepted incumbent or None."""
        for n in self.closed:
            if n.alive and n.status == ST_CLOSED:
                n.status = ST_NEW
        self.closed = set()
        reopen = [n for n in (self.open_set | self.incons) if n.alive and n.status != ST_INVALID]
        reopen.sort(key=lambda n: n.state)  # set order is id-based; keep runs bit-identical
        self.open_set = set()
        self.incons = set()
        self.heap = []
        for n in reopen:
            self._push(n, epsilon)

        bound = self.incumbent.duration if self.incumbent is not None else math.inf
        while True:
            popped = self._pop_valid(epsilon)
            if popped is None:
                self.open_exhausted = not self.incons
                return None
            f, node = popped
            if f >= bound:
                # nothing left that could beat the incumbent at this epsilon
                self._push(node, epsilon)  # keep it for the next iteration
                return None
            if self.clock.expired():
                self._push(node, epsilon)
                return None
            self.open_set.discard(node)

            if self._is_goal(node):
                if self.cfg.strategy in (Strategy.NR, Strategy.PER):
                    sol = self._extract(node, epsilon)
                    node.status = ST_CLOSED
                    self.closed.add(node)
                    self._adopt(sol)
                    return sol
                outcome, sol = self._validate_goal(node, epsilon)
                if outcome == "abort":
                    return None
                if outcome == "accept":
                    node.status = ST_CLOSED
                    self.closed.add(node)
                    self._adopt(sol)
                    return sol
                if outcome == "reject":
                    continue
                # defer: reinsert with the revised cost, then expand as usual
                self._push(node, epsilon)

            else:
                node.status = ST_CLOSED
                self.closed.add(node)

            self.stats.expansions += 1
            self.clock.charge_expansion()
            self._trace_node("expand", node)
            for succ, edge in expand(node, self.graph):
                if not succ.alive or succ.status == ST_INVALID:
                    continue
                if self.cfg.strategy is Strategy.PER:
                    if node.g + edge.duration >= succ.g:
                        continue
                    prefix = concat_edge_paths(
                        Pose2D(self.start_node.x, self.start_node.y, self.start_node.heading),
                        self._chain(node) + [edge],
                    )
                    stream = self.val_rng.spawn(1)[0]
                    verdict = validate_expansion_per(
                        prefix, node.g, self.cfg.k_rollouts, self._controller_cfg(),
                        self.grid, self.footprint, stream, clock=self.clock,
                        nominal_duration=node.g + edge.duration,
                        unknown_as_lethal=self.cfg.unknown_as_lethal,
                    )
                    if verdict is not None and verdict.ensemble is not None:
                        self.stats.rollouts += len(verdict.ensemble.rollouts)
                    self.stats.rollout_steps = self.clock.n_rollout_steps
                    if verdict is None:
                        return None
                    if verdict.kind is VerdictKind.REJECT_NODE:
                        succ.status = ST_INVALID
                        self.closed.add(succ)
                        self._trace_node("invalid", succ)
                        continue
                    edge.duration = verdict.revised_cost
                self._relax(node, succ, edge, epsilon)

    # -- full anytime run --------------------------------------------------------

    def _goal_feasible(self) -> bool:
        """Some lattice vertex position within the goal tolerance must admit a
        collision-free footprint, else no goal node can ever be accepted."""
        goal = self.problem.goal
        tol = self.problem.goal_tolerance
        rho = self.cfg.lattice.position_resolution
        ox, oy = self.grid.origin
        ix0 = math.floor((goal.x - tol - ox) / rho)
        ix1 = math.ceil((goal.x + tol - ox) / rho)
        iy0 = math.floor((goal.y - tol - oy) / rho)
        iy1 = math.ceil((goal.y + tol - oy) / rho)
        for ix in range(ix0, ix1 + 1):
            for iy in range(iy0, iy1 + 1):
                vx, vy = ox + ix * rho, oy + iy * rho
                if math.hypot(vx - goal.x, vy - goal.y) > tol:
                    continue
                if not check_footprint_collision(
                    self.grid, Pose2D(vx, vy, 0.0), self.footprint, self.cfg.unknown_as_lethal
                ):
                    return True
        return False

    def plan(self) -> Solution | PlanFailure:
        grid, cfg = self.grid, self.cfg
        if check_footprint_collision(grid, self.problem.start, self.footprint, cfg.unknown_as_lethal):
            return self._fail(FailureKind.START_IN_COLLISION)
        if not self._goal_feasible():
            return self._fail(FailureKind.GOAL_UNREACHABLE)
        start_state = self.graph.snap_state(self.problem.start)
        start = self.graph.get_or_create(start_state)
        if check_footprint_collision(grid, start.pose, self.footprint, cfg.unknown_as_lethal):
            return self._fail(FailureKind.START_IN_COLLISION)
        self.start_node = start
        start.g = 0.0
        self._push(start, cfg.epsilon_schedule[0])

        for epsilon in cfg.epsilon_schedule:
            if self.clock.expired():
                break
            self.improve_path(epsilon)
            if self.open_exhausted:
                break

        self._sync_stats()
        if self.incumbent is not None:
            return self.incumbent
        if self.clock.expired():
            return self._fail(FailureKind.TIMED_OUT)
        return self._fail(FailureKind.EXHAUSTED)

    def _sync_stats(self):
        self.stats.rollout_steps = self.clock.n_rollout_steps
        self.stats.wall_time_s = self.clock.elapsed()
        self.stats.real_time_s = self.clock.real_elapsed()

    def _fail(self, kind: FailureKind) -> PlanFailure:
        self._sync_stats()
        return PlanFailure(kind=kind, stats=self.stats, trace=self.trace)


def remove_node_descendants(n_c: LatticeNode, planner: Planner) -> int:
    """Remove every node whose best-parent chain passes through n_c from the
    open and closed sets and free their vertices for rediscovery; n_c itself
    becomes INVALID and is placed in CLOSED. Returns the number removed."""
    removed = 0
    stack = sorted(n_c.children, key=lambda n: n.state)
    n_c.children = set()
    while stack:
        d = stack.pop()
        if not d.alive or d.status == ST_INVALID:
            continue
        stack.extend(sorted(d.children, key=lambda n: n.state))
        planner.graph.remove_vertex(d)
        planner.open_set.discard(d)
        planner.incons.discard(d)
        planner.closed.discard(d)
        if planner.cfg.trace:
            planner.trace.append(("remove", d.x, d.y, d.state.ih))
        removed += 1
    n_c.status = ST_INVALID
    planner.open_set.discard(n_c)
    planner.incons.discard(n_c)
    planner.closed.add(n_c)
    return removed


def ara_iteration(planner: Planner, epsilon: float) -> Solution | None:
    """One weighted-A* iteration at the given epsilon (key g + epsilon*h)."""
    if epsilon < 1.0:
        raise ValueError("epsilon must be >= 1")
    return planner.improve_path(epsilon)


def plan(problem: PlanningProblem, cfg: SearchConfig, seed: int) -> Solution | PlanFailure:
    """Anytime plan under the configured strategy, budget and epsilon schedule.

    Deterministic for fixed (problem, cfg, seed) in deterministic timing mode.
    """
    return Planner(problem, cfg, seed).plan()


# -- audit helpers (used by tests and the revision-soundness fuzzer) -----------


def best_parent_chain(node: LatticeNode) -> list[LatticeNode]:
    chain = []
    cur = node
    while cur is not None:
        chain.append(cur)
        cur = cur.parent_edge.source if cur.parent_edge is not None else None
    return chain


def audit_revision(planner: Planner, n_c: LatticeNode) -> list[str]:
    """Post-revision invariant check: no live open/closed node may route
    through n_c. Returns a list of violation descriptions (empty = sound)."""
    problems = []
    for pool_name, pool in (("open", planner.open_set), ("closed", planner.closed)):
        for node in pool:
            if not node.alive or node is n_c:
                continue
            chain = best_parent_chain(node)
            if n_c in chain[1:]:
                problems.append(f"{pool_name} node {tuple(node.state)} routes through revised node")
    return problems


def audit_parent_children(planner: Planner) -> list[str]:
    """Parent/child symmetry over live vertices."""
    problems = []
    nodes = [n for n in planner.graph.nodes.values() if n.alive]
    for n in nodes:
        for c in n.children:
            if c.alive and (c.parent_edge is None or c.parent_edge.source is not n):
                problems.append(f"child {tuple(c.state)} of {tuple(n.state)} does not name it as parent")
        if n.parent_edge is not None and n.parent_edge.source.alive:
            if n not in n.parent_edge.source.children:
                problems.append(f"parent of {tuple(n.state)} lacks it in children set")
    with_parent = sum(1 for n in nodes if n.parent_edge is not None)
    child_total = sum(sum(1 for c in n.children if c.alive) for n in nodes)
    if with_parent != child_total:
        problems.append(f"children-set total {child_total} != parented-node count {with_parent}")
    return problems
