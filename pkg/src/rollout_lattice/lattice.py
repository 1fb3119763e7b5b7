"""Recombinant state lattice: discrete pose vertices, motion-primitive edges,
swath collision pruning, traversal-time edge costs and the search heuristic."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._kernels import swath_collide
from .geometry import TWO_PI, Pose2D, normalize_angle
from .world_map import Footprint, GridMap, ZeroSpeedCell


class SnapFailure(Exception):
    """A primitive endpoint could not be snapped onto a lattice vertex."""


class LatticeState(NamedTuple):
    """Graph vertex identity; equal indices mean the same (recombined) vertex."""

    ix: int
    iy: int
    ih: int


@dataclass(frozen=True)
class LatticeConfig:
    position_resolution: float = 0.8
    heading_count: int = 16
    curvatures: tuple = (0.0, 0.125, -0.125, 0.25, -0.25, 0.5, -0.5)
    arc_length: float = 1.6
    turn_in_place: bool = True
    omega_max: float = 1.0
    swath_spacing: float = 0.1

    def __post_init__(self):
        if self.heading_count < 8:
            raise ValueError("heading count must be >= 8")
        if self.arc_length < self.position_resolution:
            raise ValueError("arc length must be >= position resolution")
        if self.omega_max <= 0:
            raise ValueError("omega_max must be > 0")


@dataclass(eq=False)
class MotionPrimitive:
    """One lattice move from a given heading index.

    The sampled swath is stored as world-frame offsets from the source vertex
    (x, y, heading columns); its last sample lies exactly on the target vertex.
    """

    kind: str  # "straight" | "arc" | "turn"
    from_ih: int
    curvature: float
    arc_length: float
    heading_change: float
    end_dix: int
    end_diy: int
    end_dih: int
    swath: np.ndarray  # (n, 3)
    seg_len: np.ndarray  # (n-1,)
    mid_xy: np.ndarray  # (n-1, 2) segment midpoints, for speed sampling
    length: float


def _snap_residual_check(ideal, snapped, half_res, ih, curvature):
    residual = math.hypot(ideal[0] - snapped[0], ideal[1] - snapped[1])
    if residual >= half_res:
        raise SnapFailure(
            f"heading index {ih}, curvature {curvature:g}: endpoint residual "
            f"{residual:.3f} m exceeds half the position resolution"
        )


def _finish(kind, ih, curvature, arc_length, dtheta, dix, diy, dih, swath):
    seg = np.diff(swath[:, :2], axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    mid_xy = (swath[:-1, :2] + swath[1:, :2]) / 2.0
    return MotionPrimitive(
        kind=kind,
        from_ih=ih,
        curvature=curvature,
        arc_length=arc_length,
        heading_change=dtheta,
        end_dix=dix,
        end_diy=diy,
        end_dih=dih,
        swath=swath,
        seg_len=seg_len,
        mid_xy=mid_xy,
        length=float(np.sum(seg_len)),
    )


def _build_straight(ih, theta, cfg: LatticeConfig) -> MotionPrimitive:
    """Straight move along the best lattice-exact direction near the heading.

    Integer displacement candidates within the nominal length window are ranked
    by angular deviation from the heading, then by length closest to nominal.
    """
    rho = cfg.position_resolution
    s = cfg.arc_length
    kmax = int(math.ceil((s + rho / 2) / rho))
    best = None
    for a in range(-kmax, kmax + 1):
        for b in range(-kmax, kmax + 1):
            if a == 0 and b == 0:
                continue
            length = math.hypot(a, b) * rho
            if length > s + rho / 2 + 1e-9:
                continue
            dev = abs(normalize_angle(math.atan2(b, a) - theta))
            if dev > math.pi / 4:
                continue
            key = (round(dev, 12), round(abs(length - s), 12), a, b)
            if best is None or key < best[0]:
                best = (key, a, b, length)
    if best is None:
        raise SnapFailure(f"heading index {ih}, curvature 0: no straight displacement found")
    _, a, b, length = best
    ideal = (length * math.cos(theta), length * math.sin(theta))
    snapped = (a * rho, b * rho)
    _snap_residual_check(ideal, snapped, rho / 2, ih, 0.0)
    n = max(2, int(math.ceil(length / cfg.swath_spacing)) + 1)
    u = np.linspace(0.0, 1.0, n)
    swath = np.empty((n, 3))
    swath[:, 0] = u * snapped[0]
    swath[:, 1] = u * snapped[1]
    swath[:, 2] = theta
    return _finish("straight", ih, 0.0, length, 0.0, a, b, 0, swath)


def _build_arc(ih, theta, kappa, cfg: LatticeConfig) -> MotionPrimitive:
    """Constant-curvature arc refit so the heading change is a whole number of
    heading steps; the endpoint is snapped to the nearest vertex and the swath
    sheared onto it."""
    rho = cfg.position_resolution
    step = TWO_PI / cfg.heading_count
    m = max(1, round(abs(kappa) * cfg.arc_length / step))
    m = int(math.copysign(m, kappa))
    dtheta = m * step
    arc_len = dtheta / kappa  # positive: m carries kappa's sign
    ex_l = math.sin(dtheta) / kappa
    ey_l = (1.0 - math.cos(dtheta)) / kappa
    ct, st = math.cos(theta), math.sin(theta)
    ideal = (ex_l * ct - ey_l * st, ex_l * st + ey_l * ct)
    a = round(ideal[0] / rho)
    b = round(ideal[1] / rho)
    if a == 0 and b == 0:
        raise SnapFailure(f"heading index {ih}, curvature {kappa:g}: arc collapses onto its source vertex")
    snapped = (a * rho, b * rho)
    _snap_residual_check(ideal, snapped, rho / 2, ih, kappa)

    n = max(2, int(math.ceil(arc_len / cfg.swath_spacing)) + 1)
    u = np.linspace(0.0, 1.0, n)
    phi = u * dtheta
    lx = np.sin(phi) / kappa
    ly = (1.0 - np.cos(phi)) / kappa
    swath = np.empty((n, 3))
    swath[:, 0] = lx * ct - ly * st + u * (snapped[0] - ideal[0])
    swath[:, 1] = lx * st + ly * ct + u * (snapped[1] - ideal[1])
    swath[:, 2] = (theta + phi + math.pi) % TWO_PI - math.pi
    swath[-1, 0] = snapped[0]
    swath[-1, 1] = snapped[1]
    swath[-1, 2] = normalize_angle(theta + dtheta)
    return _finish("arc", ih, kappa, arc_len, dtheta, a, b, m, swath)


def _build_turn(ih, theta, direction, cfg: LatticeConfig) -> MotionPrimitive:
    step = TWO_PI / cfg.heading_count
    dtheta = direction * step
    swath = np.array([[0.0, 0.0, theta], [0.0, 0.0, normalize_angle(theta + dtheta)]])
    return _finish("turn", ih, 0.0, 0.0, dtheta, 0, 0, direction, swath)


def build_primitive_set(
    position_resolution: float = 0.8,
    heading_count: int = 16,
    curvatures: tuple = LatticeConfig.curvatures,
    arc_length: float = 1.6,
    turn_in_place: bool = True,
    swath_spacing: float = 0.1,
) -> list[MotionPrimitive]:
    """All primitives for every source heading; raises SnapFailure naming the
    offending (heading, curvature) pair when an endpoint cannot land on a vertex."""
    cfg = LatticeConfig(
        position_resolution=position_resolution,
        heading_count=heading_count,
        curvatures=tuple(curvatures),
        arc_length=arc_length,
        turn_in_place=turn_in_place,
        swath_spacing=swath_spacing,
    )
    prims = []
    for ih in range(cfg.heading_count):
        theta = ih * TWO_PI / cfg.heading_count
        theta = normalize_angle(theta)
        for kappa in cfg.curvatures:
            if kappa == 0.0:
                prims.append(_build_straight(ih, theta, cfg))
            else:
                prims.append(_build_arc(ih, theta, kappa, cfg))
        if cfg.turn_in_place:
            prims.append(_build_turn(ih, theta, +1, cfg))
            prims.append(_build_turn(ih, theta, -1, cfg))
    return prims


def primitives_summary(prims: list[MotionPrimitive]) -> str:
    """Human-readable dump of a primitive set for inspection."""
    lines = ["idx from_ih kind      kappa    len     dtheta  -> (dix,diy,dih)"]
    for i, p in enumerate(prims):
        lines.append(
            f"{i:3d} {p.from_ih:7d} {p.kind:9s} {p.curvature:+.3f}  {p.length:6.3f}  "
            f"{p.heading_change:+.4f} -> ({p.end_dix:+d},{p.end_diy:+d},{p.end_dih:+d})"
        )
    return "\n".join(lines)


# -- graph ---------------------------------------------------------------------

ST_NEW, ST_OPEN, ST_CLOSED, ST_INVALID = 0, 1, 2, 3
_STATUS_NAMES = {ST_NEW: "NEW", ST_OPEN: "OPEN", ST_CLOSED: "CLOSED", ST_INVALID: "INVALID"}


class LatticeNode:
    """Mutable search vertex: cost-to-come, heuristic, best-parent edge and the
    set of children currently routed through this node."""

    __slots__ = (
        "state", "x", "y", "heading", "g", "h", "parent_edge", "children", "status", "alive", "_succ",
    )

    def __init__(self, state: LatticeState, x: float, y: float, heading: float, h: float):
        self.state = state
        self.x = x
        self.y = y
        self.heading = heading
        self.g = math.inf
        self.h = h
        self.parent_edge = None
        self.children = set()
        self.status = ST_NEW
        self.alive = True
        self._succ = None  # cached expansion: list of (target state, edge)

    @property
    def pose(self) -> Pose2D:
        return Pose2D(self.x, self.y, self.heading)

    def __repr__(self):
        return f"<Node {tuple(self.state)} g={self.g:.3f} {_STATUS_NAMES[self.status]}{'' if self.alive else ' dead'}>"


class LatticeEdge:
    """Directed motion edge; `duration` starts nominal and may be rollout-revised."""

    __slots__ = ("source", "target", "primitive", "duration", "path")

    def __init__(self, source, target, primitive, duration, path):
        self.source = source
        self.target = target
        self.primitive = primitive
        self.duration = duration
        self.path = path  # (n, 3) world-frame dense poses

    def __repr__(self):
        return f"<Edge {tuple(self.source.state)} -> {tuple(self.target.state)} {self.duration:.3f}s>"


class LatticeGraph:
    """Owns vertex recombination and expansion against one immutable map."""

    def __init__(
        self,
        grid: GridMap,
        primitives: list[MotionPrimitive],
        footprint: Footprint,
        cfg: LatticeConfig,
        h_fn=None,
        unknown_as_lethal: bool = True,
    ):
        self.grid = grid
        self.footprint = footprint
        self.cfg = cfg
        self.h_fn = h_fn or (lambda x, y: 0.0)
        self.unknown_as_lethal = unknown_as_lethal
        self.nodes: dict[LatticeState, LatticeNode] = {}
        self.uniform_speed = grid.uniform_speed()
        self._kwin = int(math.ceil(footprint.radius / grid.resolution + 0.5))
        self._lethal = grid.lethal_mask(unknown_as_lethal)
        self._clear = grid.clearance(unknown_as_lethal)
        H = cfg.heading_count
        self.by_heading: list[list[MotionPrimitive]] = [[] for _ in range(H)]
        for p in primitives:
            self.by_heading[p.from_ih].append(p)
        # Batched swath samples per heading for one-shot kernel collision
        # checks; span 0 is the node point itself (gates turns in place).
        self._batch = []
        for ih in range(H):
            moving = [p for p in self.by_heading[ih] if p.kind != "turn"]
            xs = [np.zeros(1)]
            ys = [np.zeros(1)]
            starts = [0]
            ends = [1]
            pos = 1
            for p in moving:
                xs.append(p.swath[:, 0])
                ys.append(p.swath[:, 1])
                starts.append(pos)
                pos += p.swath.shape[0]
                ends.append(pos)
            self._batch.append(
                (
                    np.ascontiguousarray(np.concatenate(xs)),
                    np.ascontiguousarray(np.concatenate(ys)),
                    np.asarray(starts, dtype=np.int64),
                    np.asarray(ends, dtype=np.int64),
                    moving,
                )
            )

    # vertex pose anchored at the map origin
    def vertex_pose(self, state: LatticeState) -> tuple[float, float, float]:
        ox, oy = self.grid.origin
        rho = self.cfg.position_resolution
        theta = normalize_angle(state.ih * TWO_PI / self.cfg.heading_count)
        return (ox + state.ix * rho, oy + state.iy * rho, theta)

    def snap_state(self, pose: Pose2D) -> LatticeState:
        ox, oy = self.grid.origin
        rho = self.cfg.position_resolution
        H = self.cfg.heading_count
        ih = int(round((pose.heading % TWO_PI) / (TWO_PI / H))) % H
        return LatticeState(round((pose.x - ox) / rho), round((pose.y - oy) / rho), ih)

    def get_or_create(self, state: LatticeState) -> LatticeNode:
        node = self.nodes.get(state)
        if node is None:
            x, y, theta = self.vertex_pose(state)
            node = LatticeNode(state, x, y, theta, self.h_fn(x, y))
            self.nodes[state] = node
        return node

    def remove_vertex(self, node: LatticeNode) -> None:
        """Free a vertex for rediscovery (used by graph revision)."""
        node.alive = False
        cur = self.nodes.get(node.state)
        if cur is node:
            del self.nodes[node.state]


def expand(node: LatticeNode, graph: LatticeGraph):
    """Successors of `node`: one per primitive at its heading whose entire
    swath is collision-free. Existing vertices are reused, never duplicated.

    Results are cached per node (the map is immutable), so re-expansions
    across anytime iterations return the same edge objects and any
    rollout-revised durations persist. Removed-and-rediscovered target
    vertices are rebound on reuse.
    """
    if node.status == ST_INVALID:
        raise ValueError("INVALID nodes are never expanded")
    if node._succ is None:
        node._succ = _expand_fresh(node, graph)
    out = []
    for state, edge in node._succ:
        succ = graph.get_or_create(state)
        if edge.target is not succ:
            edge.target = succ
        out.append((succ, edge))
    return out


def _expand_fresh(node: LatticeNode, graph: LatticeGraph):
    grid = graph.grid
    H = graph.cfg.heading_count
    out = []
    xs, ys, starts, ends, moving = graph._batch[node.state.ih]
    flags = np.empty(starts.shape[0], dtype=np.bool_)
    swath_collide(
        xs, ys, starts, ends, node.x, node.y, graph._lethal, graph._clear,
        grid.origin[0], grid.origin[1], grid.resolution, grid.width, grid.height,
        graph.footprint.radius, graph._kwin, flags,
    )
    for i, prim in enumerate(moving):
        if flags[i + 1]:
            continue
        state = LatticeState(
            node.state.ix + prim.end_dix, node.state.iy + prim.end_diy, (node.state.ih + prim.end_dih) % H
        )
        succ = graph.get_or_create(state)
        duration = _primitive_duration(prim, node.x, node.y, grid, graph.cfg.omega_max, graph.uniform_speed)
        path = prim.swath.copy()
        path[:, 0] += node.x
        path[:, 1] += node.y
        out.append((state, LatticeEdge(node, succ, prim, duration, path)))
    if not flags[0]:  # node point clear: turns in place sweep no new area
        for prim in graph.by_heading[node.state.ih]:
            if prim.kind != "turn":
                continue
            state = LatticeState(node.state.ix, node.state.iy, (node.state.ih + prim.end_dih) % H)
            succ = graph.get_or_create(state)
            duration = abs(prim.heading_change) / graph.cfg.omega_max
            path = prim.swath.copy()
            path[:, 0] += node.x
            path[:, 1] += node.y
            out.append((state, LatticeEdge(node, succ, prim, duration, path)))
    return out


def _primitive_duration(prim, sx, sy, grid: GridMap, omega_max, uniform_speed):
    """Traversal time of one primitive instance placed at (sx, sy)."""
    if prim.kind == "turn":
        return abs(prim.heading_change) / omega_max
    if uniform_speed is not None:
        return prim.length / uniform_speed
    ox, oy = grid.origin
    res = grid.resolution
    ix = np.floor((prim.mid_xy[:, 0] + sx - ox) / res).astype(np.int64)
    iy = np.floor((prim.mid_xy[:, 1] + sy - oy) / res).astype(np.int64)
    np.clip(ix, 0, grid.width - 1, out=ix)
    np.clip(iy, 0, grid.height - 1, out=iy)
    spd = grid.speed[iy, ix]
    if np.any(spd <= 0):
        raise ZeroSpeedCell(f"non-positive speed sampled on swath near ({sx:.2f}, {sy:.2f})")
    return float(np.sum(prim.seg_len / spd))


def edge_duration(edge: LatticeEdge, grid: GridMap, omega_max: float) -> float:
    """Traversal time of an edge: swath-integrated distance over per-cell speed
    for moving primitives, |heading change| / omega_max for turns in place."""
    return _primitive_duration(edge.primitive, edge.path[0, 0] - edge.primitive.swath[0, 0],
                               edge.path[0, 1] - edge.primitive.swath[0, 1], grid, omega_max,
                               grid.uniform_speed())


def heuristic(pose: Pose2D, goal: Pose2D, v_max: float) -> float:
    """Euclidean shortfall over the map's best speed; admissible and consistent
    under traversal-time edge costs."""
    return math.hypot(goal.x - pose.x, goal.y - pose.y) / v_max
