"""Validation strategies wiring controller rollouts into graph search.

Four modes: no rollouts (nr), a rollout ensemble at every expansion (per),
ensembles deferred to goal-edge candidates (ger), and goal-edge ensembles
plus descendant-pruning graph revision at the collision node (gegr).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .controller_rollout import RolloutEnsemble, RolloutOutcome, rollout_ensemble

# Strategy name strings are the stable CLI/CSV vocabulary.
class Strategy(str, Enum):
    NR = "nr"
    PER = "per"
    GER = "ger"
    GEGR = "gegr"


class VerdictKind(Enum):
    ACCEPT = "accept"
    REJECT_NODE = "reject_node"
    REJECT_AND_REVISE = "reject_and_revise"
    DEFER = "defer"


# Rollout-revised edge costs are floored here to keep durations positive.
MIN_EDGE_DURATION = 1e-3


@dataclass(eq=False)
class StrategyVerdict:
    kind: VerdictKind
    revised_cost: float | None = None
    collision_node: object = None
    ensemble: RolloutEnsemble | None = None


def validate_expansion_per(
    prefix_path: np.ndarray,
    parent_g: float,
    k: int,
    controller,
    grid,
    footprint,
    rng,
    clock=None,
    nominal_duration: float | None = None,
    unknown_as_lethal: bool = True,
) -> StrategyVerdict | None:
    """Per-expansion check: ensemble along the whole start-to-successor prefix.

    Accept carries the revised edge cost (ensemble mean minus the parent's
    cost-to-come); any non-goal outcome rejects the successor. None means the
    deadline cut the ensemble short.
    """
    ens = rollout_ensemble(
        prefix_path, k, controller, grid, footprint, rng,
        validity_only=True, clock=clock, nominal_duration=nominal_duration,
        unknown_as_lethal=unknown_as_lethal,
    )
    if not ens.complete:
        return None
    if not ens.valid:
        return StrategyVerdict(VerdictKind.REJECT_NODE, ensemble=ens)
    cost = max(ens.mean_duration - parent_g, MIN_EDGE_DURATION)
    return StrategyVerdict(VerdictKind.ACCEPT, revised_cost=cost, ensemble=ens)


def validate_goal_ger(
    solution_path: np.ndarray,
    k: int,
    controller,
    grid,
    footprint,
    rng,
    open_top_key: float,
    clock=None,
    nominal_duration: float | None = None,
    unknown_as_lethal: bool = True,
) -> StrategyVerdict | None:
    """Goal-edge check: ensemble over the full start-to-goal path.

    Valid and cheaper than the open list's best key: accept (extract). Valid
    but not cheapest: defer with the rollout-mean cost. Any collision rejects
    the goal node, leaving the rest of the graph intact.
    """
    ens = rollout_ensemble(
        solution_path, k, controller, grid, footprint, rng,
        validity_only=True, clock=clock, nominal_duration=nominal_duration,
        unknown_as_lethal=unknown_as_lethal,
    )
    if not ens.complete:
        return None
    if not ens.valid:
        return StrategyVerdict(VerdictKind.REJECT_NODE, ensemble=ens)
    if ens.mean_duration < open_top_key:
        return StrategyVerdict(VerdictKind.ACCEPT, revised_cost=ens.mean_duration, ensemble=ens)
    return StrategyVerdict(VerdictKind.DEFER, revised_cost=ens.mean_duration, ensemble=ens)


def validate_goal_gegr(
    solution_path: np.ndarray,
    solution_edges: list,
    k: int,
    controller,
    grid,
    footprint,
    rng,
    open_top_key: float,
    clock=None,
    nominal_duration: float | None = None,
    unknown_as_lethal: bool = True,
) -> StrategyVerdict | None:
    """GEGR goal-edge check. Accept and defer match GER; on collision the full
    ensemble (no early exit) feeds collision-to-node attribution for revision."""
    ens = rollout_ensemble(
        solution_path, k, controller, grid, footprint, rng,
        validity_only=False, clock=clock, nominal_duration=nominal_duration,
        unknown_as_lethal=unknown_as_lethal,
    )
    if not ens.complete:
        return None
    if ens.valid:
        if ens.mean_duration < open_top_key:
            return StrategyVerdict(VerdictKind.ACCEPT, revised_cost=ens.mean_duration, ensemble=ens)
        return StrategyVerdict(VerdictKind.DEFER, revised_cost=ens.mean_duration, ensemble=ens)
    return gegr_on_collision(ens, solution_edges)


def gegr_on_collision(ensemble: RolloutEnsemble, solution_edges: list) -> StrategyVerdict:
    """Attribute the earliest collision (minimum state index across colliding
    rollouts) to a path node for graph revision. Ensembles that failed on step
    limits alone have no collision pose and fall back to rejecting the node."""
    colliding = [r for r in ensemble.rollouts if r.outcome is RolloutOutcome.COLLISION]
    if not colliding:
        return StrategyVerdict(VerdictKind.REJECT_NODE, ensemble=ensemble)
    earliest = min(colliding, key=lambda r: r.collision_index)
    node = map_collision_to_node(earliest.collision_pose(), solution_edges)
    return StrategyVerdict(VerdictKind.REJECT_AND_REVISE, collision_node=node, ensemble=ensemble)


def map_collision_to_node(collision_pose, solution_edges: list):
    """Nearest dense-path sample decides the edge; the edge's source node is
    charged, except on the first edge where the start's immediate child is
    (revising the start itself would wipe the whole search)."""
    best_edge = None
    best_d2 = math.inf
    px, py = collision_pose.x, collision_pose.y
    for edge in solution_edges:
        d2 = (edge.path[:, 0] - px) ** 2 + (edge.path[:, 1] - py) ** 2
        m = float(np.min(d2))
        if m < best_d2:  # strict: ties stay with the earlier edge
            best_d2 = m
            best_edge = edge
    if best_edge is solution_edges[0]:
        return best_edge.target
    return best_edge.source
