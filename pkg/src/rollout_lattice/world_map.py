"""Uniform 2-D grid world model.

Cell classification plus a per-cell nominal speed layer, obstacle inflation,
disc-footprint collision queries, procedural map generation and OGM-1 file I/O.
Maps are immutable after construction and shared read-only by planner and
simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import ndimage

from .geometry import TWO_PI, Pose2D

# Distance from a point inside a cell to the cell center is at most half the
# cell diagonal; used to turn the center-to-center distance transform into
# exact point queries.
_HALF_DIAG_FACTOR = math.sqrt(2.0) / 2.0

# Screen margin: distance-transform shortcuts only assert verdicts with this
# much slack, everything closer goes to the exact windowed scan.
_SCREEN_EPS = 1e-9


class CellState(IntEnum):
    FREE = 0
    LETHAL = 1
    UNKNOWN = 2


_CELL_CHARS = {CellState.FREE: ".", CellState.LETHAL: "#", CellState.UNKNOWN: "?"}
_CHAR_CELLS = {v: k for k, v in _CELL_CHARS.items()}


class MapFormatError(Exception):
    """OGM-1 parsing failure; carries the 1-based line and column."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class MalformedHeader(MapFormatError):
    pass


class DimensionMismatch(MapFormatError):
    pass


class UnknownCellCode(MapFormatError):
    pass


class ZeroSpeedCell(Exception):
    """A FREE cell with non-positive speed was sampled for traversal time."""


class UnreachableGoals(Exception):
    """No seed within the retry bound produced a map with all goals reachable."""


@dataclass(eq=False)
class Footprint:
    """Disc robot footprint. Default approximates a Warthog-class UGV half-width."""

    radius: float = 0.7

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"footprint radius must be > 0, got {self.radius}")


@dataclass(eq=False)
class GridMap:
    """Row-major occupancy grid with a speed layer.

    ``origin`` is the world coordinate of cell (0, 0)'s lower-left corner; the
    center of cell (ix, iy) is ``origin + (ix + 0.5, iy + 0.5) * resolution``.
    Arrays are indexed ``[iy, ix]`` and frozen after construction.
    """

    resolution: float
    width: int
    height: int
    origin: tuple[float, float]
    cells: np.ndarray
    speed: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")
        self.cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        self.speed = np.ascontiguousarray(self.speed, dtype=np.float64)
        if self.cells.shape != (self.height, self.width):
            raise ValueError(f"cells shape {self.cells.shape} != (height, width)")
        if self.speed.shape != (self.height, self.width):
            raise ValueError(f"speed shape {self.speed.shape} != (height, width)")
        free = self.cells == CellState.FREE
        if np.any(self.speed[free] <= 0):
            raise ValueError("every FREE cell must have speed > 0")
        self.cells.setflags(write=False)
        self.speed.setflags(write=False)

    # -- coordinate mapping -------------------------------------------------

    def in_extent(self, x: float, y: float) -> bool:
        ox, oy = self.origin
        return (
            ox <= x < ox + self.width * self.resolution
            and oy <= y < oy + self.height * self.resolution
        )

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        ox, oy = self.origin
        return (
            int(math.floor((x - ox) / self.resolution)),
            int(math.floor((y - oy) / self.resolution)),
        )

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        ox, oy = self.origin
        return (ox + (ix + 0.5) * self.resolution, oy + (iy + 0.5) * self.resolution)

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    @property
    def center(self) -> tuple[float, float]:
        ox, oy = self.origin
        return (ox + self.width * self.resolution / 2.0, oy + self.height * self.resolution / 2.0)

    @property
    def half_diag(self) -> float:
        return self.resolution * _HALF_DIAG_FACTOR

    # -- derived products (cached; maps are immutable) ----------------------

    def v_max(self) -> float:
        if "v_max" not in self._cache:
            self._cache["v_max"] = float(np.max(self.speed))
        return self._cache["v_max"]

    def uniform_speed(self) -> float | None:
        """The single speed value if the layer is uniform, else None."""
        if "uniform" not in self._cache:
            lo, hi = float(np.min(self.speed)), float(np.max(self.speed))
            self._cache["uniform"] = lo if lo == hi else None
        return self._cache["uniform"]

    def lethal_mask(self, unknown_as_lethal: bool = True) -> np.ndarray:
        key = ("lethal", unknown_as_lethal)
        if key not in self._cache:
            mask = self.cells == CellState.LETHAL
            if unknown_as_lethal:
                mask = mask | (self.cells == CellState.UNKNOWN)
            mask.setflags(write=False)
            self._cache[key] = mask
        return self._cache[key]

    def clearance(self, unknown_as_lethal: bool = True) -> np.ndarray:
        """Distance (meters) from each cell center to the nearest lethal cell center."""
        key = ("clearance", unknown_as_lethal)
        if key not in self._cache:
            mask = self.lethal_mask(unknown_as_lethal)
            if mask.any():
                dist = ndimage.distance_transform_edt(~mask) * self.resolution
            else:
                dist = np.full(mask.shape, np.inf)
            dist.setflags(write=False)
            self._cache[key] = dist
        return self._cache[key]


# -- OGM-1 file format --------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def save_map(grid: GridMap, path) -> None:
    """Write OGM-1 text. Byte-deterministic for equal inputs."""
    lines = ["OGM-1"]
    lines.append(
        "resolution {} width {} height {} origin {} {} default_speed {}".format(
            _fmt(grid.resolution),
            grid.width,
            grid.height,
            _fmt(grid.origin[0]),
            _fmt(grid.origin[1]),
            _fmt(float(grid.speed.flat[0])),
        )
    )
    for iy in range(grid.height - 1, -1, -1):
        lines.append("".join(_CELL_CHARS[CellState(c)] for c in grid.cells[iy]))
    if grid.uniform_speed() is None:
        lines.append("SPEED")
        for iy in range(grid.height - 1, -1, -1):
            lines.append(" ".join(_fmt(v) for v in grid.speed[iy]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_map(path) -> GridMap:
    """Parse an OGM-1 file; raises MalformedHeader / DimensionMismatch /
    UnknownCellCode with the offending line and column."""
    with open(path, "r") as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0].strip() != "OGM-1":
        raise MalformedHeader("expected literal 'OGM-1'", line=1)
    if len(raw) < 2:
        raise MalformedHeader("missing geometry line", line=2)
    tok = raw[1].split()
    expect = ("resolution", None, "width", None, "height", None, "origin", None, None, "default_speed", None)
    if len(tok) != len(expect) or any(k is not None and tok[i] != k for i, k in enumerate(expect)):
        raise MalformedHeader("geometry line must read 'resolution <f> width <i> height <i> origin <f> <f> default_speed <f>'", line=2)
    try:
        resolution = float(tok[1])
        width = int(tok[3])
        height = int(tok[5])
        origin = (float(tok[7]), float(tok[8]))
        default_speed = float(tok[10])
    except ValueError as exc:
        raise MalformedHeader(f"unparseable number in geometry line: {exc}", line=2) from None
    if resolution <= 0 or width < 1 or height < 1:
        raise MalformedHeader("resolution must be > 0 and dimensions >= 1", line=2)

    cells = np.empty((height, width), dtype=np.uint8)
    row = 2
    for iy in range(height - 1, -1, -1):
        if row >= len(raw):
            raise DimensionMismatch(f"expected {height} cell rows, file ends after {row - 2}", line=row + 1)
        text = raw[row]
        if len(text) != width:
            raise DimensionMismatch(
                f"cell row has {len(text)} codes, header declares width {width}",
                line=row + 1,
                column=min(len(text), width) + 1,
            )
        for ix, ch in enumerate(text):
            st = _CHAR_CELLS.get(ch)
            if st is None:
                raise UnknownCellCode(f"unknown cell code {ch!r}", line=row + 1, column=ix + 1)
            cells[iy, ix] = st
        row += 1

    speed = np.full((height, width), default_speed, dtype=np.float64)
    if row < len(raw) and raw[row].strip() == "SPEED":
        row += 1
        for iy in range(height - 1, -1, -1):
            if row >= len(raw):
                raise DimensionMismatch("SPEED section truncated", line=row + 1)
            vals = raw[row].split()
            if len(vals) != width:
                raise DimensionMismatch(
                    f"speed row has {len(vals)} values, header declares width {width}",
                    line=row + 1,
                )
            try:
                speed[iy] = [float(v) for v in vals]
            except ValueError:
                raise MalformedHeader("unparseable speed value", line=row + 1) from None
            row += 1
    trailing = [i for i in range(row, len(raw)) if raw[i].strip()]
    if trailing:
        raise DimensionMismatch("unexpected trailing content", line=trailing[0] + 1)
    return GridMap(resolution, width, height, origin, cells, speed)


# -- obstacle inflation -------------------------------------------------------


def _disc_offsets(radius: float, resolution: float) -> np.ndarray:
    """Boolean structuring element: cell-center offsets within `radius` meters."""
    k = int(math.floor(radius / resolution + 1e-12))
    if k == 0:
        return np.ones((1, 1), dtype=bool)
    dy, dx = np.mgrid[-k : k + 1, -k : k + 1]
    return np.hypot(dx * resolution, dy * resolution) <= radius


def inflate_obstacles(grid: GridMap, radius: float) -> GridMap:
    """Grow lethal regions by a Euclidean radius measured between cell centers.

    A cell is lethal in the output iff some input lethal cell center lies
    within `radius` of its center; other cells keep their class.
    """
    if radius < 0:
        raise ValueError("inflation radius must be >= 0")
    lethal = grid.cells == CellState.LETHAL
    if radius == 0 or not lethal.any():
        grown = lethal
    else:
        grown = ndimage.binary_dilation(lethal, structure=_disc_offsets(radius, grid.resolution))
    cells = grid.cells.copy()
    cells[grown] = CellState.LETHAL
    return GridMap(grid.resolution, grid.width, grid.height, grid.origin, cells, grid.speed.copy())


# -- footprint collision ------------------------------------------------------


def _window(grid: GridMap, radius: float, unknown_as_lethal: bool):
    """Padded lethal mask plus the cell-offset window covering a disc of `radius`."""
    k = int(math.ceil(radius / grid.resolution + 0.5))
    key = ("window", unknown_as_lethal, k)
    if key not in grid._cache:
        lethal = grid.lethal_mask(unknown_as_lethal)
        pad = np.zeros((grid.height + 2 * k, grid.width + 2 * k), dtype=bool)
        pad[k : k + grid.height, k : k + grid.width] = lethal
        dy, dx = np.mgrid[-k : k + 1, -k : k + 1]
        grid._cache[key] = (pad, dx.ravel(), dy.ravel(), k)
    return grid._cache[key]


def _exact_disc_collision_batch(grid, xs, ys, ix, iy, radius, unknown_as_lethal):
    """Exact disc test for in-bounds points: any lethal cell center within radius.

    Gathers a fixed window of cells around each point from a padded mask, so
    the verdict equals a full per-cell distance scan.
    """
    pad, dxs, dys, k = _window(grid, radius, unknown_as_lethal)
    ox, oy = grid.origin
    res = grid.resolution
    jx = ix[:, None] + dxs[None, :]
    jy = iy[:, None] + dys[None, :]
    occ = pad[jy + k, jx + k]
    cx = ox + (jx + 0.5) * res
    cy = oy + (jy + 0.5) * res
    d2 = (cx - xs[:, None]) ** 2 + (cy - ys[:, None]) ** 2
    return np.any(occ & (d2 <= radius * radius), axis=1)


def check_footprint_collision(
    grid: GridMap, pose: Pose2D, footprint: Footprint, unknown_as_lethal: bool = True
) -> bool:
    """True iff any lethal cell center lies within the footprint disc of the pose.

    Poses outside the map extent count as collisions. Uses the cached distance
    transform as a fast screen and falls back to an exact windowed scan for
    borderline poses, so the verdict matches a brute-force per-cell test.
    """
    if not grid.in_extent(pose.x, pose.y):
        return True
    ix, iy = grid.world_to_cell(pose.x, pose.y)
    cx, cy = grid.cell_center(ix, iy)
    off = math.hypot(pose.x - cx, pose.y - cy)
    d = grid.clearance(unknown_as_lethal)[iy, ix]
    r = footprint.radius
    if d - off > r + _SCREEN_EPS:
        return False
    if d + off <= r - _SCREEN_EPS:
        return True
    return bool(
        _exact_disc_collision_batch(
            grid, np.array([pose.x]), np.array([pose.y]), np.array([ix]), np.array([iy]), r, unknown_as_lethal
        )[0]
    )


def points_collide(
    grid: GridMap,
    xs: np.ndarray,
    ys: np.ndarray,
    radius: float,
    unknown_as_lethal: bool = True,
) -> np.ndarray:
    """Vectorized disc-collision verdict for a batch of world points.

    Out-of-extent points collide. Semantics match check_footprint_collision.
    """
    ox, oy = grid.origin
    res = grid.resolution
    ix = np.floor((xs - ox) / res).astype(np.int64)
    iy = np.floor((ys - oy) / res).astype(np.int64)
    out = np.zeros(xs.shape, dtype=bool)
    oob = (ix < 0) | (ix >= grid.width) | (iy < 0) | (iy >= grid.height)
    out[oob] = True
    ok = ~oob
    if not ok.any():
        return out
    ixo, iyo = ix[ok], iy[ok]
    cx = ox + (ixo + 0.5) * res
    cy = oy + (iyo + 0.5) * res
    off = np.hypot(xs[ok] - cx, ys[ok] - cy)
    d = grid.clearance(unknown_as_lethal)[iyo, ixo]
    hit = d + off <= radius - _SCREEN_EPS
    border = ~hit & (d - off <= radius + _SCREEN_EPS)
    if border.any():
        hit[border] = _exact_disc_collision_batch(
            grid, xs[ok][border], ys[ok][border], ixo[border], iyo[border], radius, unknown_as_lethal
        )
    out[ok] = hit
    return out


# -- Perlin map generation ----------------------------------------------------

_GRAD2 = np.array(
    [(1, 1), (-1, 1), (1, -1), (-1, -1), (1, 0), (-1, 0), (0, 1), (0, -1)],
    dtype=np.float64,
)


def _perlin2(perm: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Improved Perlin noise on arrays; output roughly in [-1, 1]."""
    xi = np.floor(x).astype(np.int64)
    yi = np.floor(y).astype(np.int64)
    xf = x - xi
    yf = y - yi
    xi &= 255
    yi &= 255

    def fade(t):
        return t * t * t * (t * (t * 6 - 15) + 10)

    def grad_dot(hash_, gx, gy):
        g = _GRAD2[hash_ & 7]
        return g[..., 0] * gx + g[..., 1] * gy

    u = fade(xf)
    v = fade(yf)
    aa = perm[(perm[xi] + yi) & 255]
    ab = perm[(perm[xi] + yi + 1) & 255]
    ba = perm[(perm[xi + 1] + yi) & 255]
    bb = perm[(perm[xi + 1] + yi + 1) & 255]
    n00 = grad_dot(aa, xf, yf)
    n10 = grad_dot(ba, xf - 1, yf)
    n01 = grad_dot(ab, xf, yf - 1)
    n11 = grad_dot(bb, xf - 1, yf - 1)
    nx0 = n00 + u * (n10 - n00)
    nx1 = n01 + u * (n11 - n01)
    return nx0 + v * (nx1 - nx0)


def fractal_noise(seed: int, x: np.ndarray, y: np.ndarray, octaves: int) -> np.ndarray:
    """Octave-summed Perlin noise, amplitude-normalized, deterministic in seed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(256).astype(np.int64)
    total = np.zeros_like(x)
    amp = 1.0
    freq = 1.0
    norm = 0.0
    for _ in range(max(1, octaves)):
        total += amp * _perlin2(perm, x * freq, y * freq)
        norm += amp
        amp *= 0.5
        freq *= 2.0
    return total / norm


@dataclass(frozen=True)
class PerlinMapConfig:
    """Procedural ablation-map recipe: clutter from thresholded fractal noise,
    a mostly-lethal ring the robot must thread, a free safe zone at the start,
    and a ring of goal points outside the obstacle ring."""

    seed: int = 0
    side_m: float = 120.0
    resolution: float = 0.4
    frequency: float = 0.09
    octaves: int = 3
    lethal_threshold: float = 0.15
    ring_radius: float = 45.0
    ring_half_width: float = 2.0
    ring_threshold: float = -0.18
    safe_radius: float = 5.0
    goal_radius: float = 50.0
    goal_count: int = 8
    goal_clear_radius: float = 2.0
    default_speed: float = 2.0
    reachability_margin: float = 0.7
    max_retries: int = 32

    def __post_init__(self):
        if not (self.goal_radius > self.ring_radius > self.safe_radius > 0):
            raise ValueError("need goal_radius > ring_radius > safe_radius > 0")
        if self.side_m < 2 * (self.goal_radius + self.safe_radius):
            raise ValueError("side length too small to contain the goal ring with margin")
        if self.resolution <= 0 or self.goal_count < 1:
            raise ValueError("bad resolution or goal count")

    def goal_points(self, center: tuple[float, float]) -> list[tuple[float, float]]:
        cx, cy = center
        return [
            (
                cx + self.goal_radius * math.cos(TWO_PI * i / self.goal_count),
                cy + self.goal_radius * math.sin(TWO_PI * i / self.goal_count),
            )
            for i in range(self.goal_count)
        ]


def _build_candidate(cfg: PerlinMapConfig, seed: int) -> GridMap:
    n = int(round(cfg.side_m / cfg.resolution))
    xs = (np.arange(n) + 0.5) * cfg.resolution
    cx, cy = cfg.side_m / 2.0, cfg.side_m / 2.0
    gx, gy = np.meshgrid(xs, xs)  # gx[iy, ix] = x of center
    noise = fractal_noise(seed, gx * cfg.frequency, gy * cfg.frequency, cfg.octaves)

    dist = np.hypot(gx - cx, gy - cy)
    ring = np.abs(dist - cfg.ring_radius) <= cfg.ring_half_width
    lethal = np.where(ring, noise > cfg.ring_threshold, noise > cfg.lethal_threshold)
    lethal[dist < cfg.safe_radius] = False
    for px, py in cfg.goal_points((cx, cy)):
        lethal[np.hypot(gx - px, gy - py) < cfg.goal_clear_radius] = False

    cells = np.where(lethal, np.uint8(CellState.LETHAL), np.uint8(CellState.FREE))
    speed = np.full((n, n), cfg.default_speed, dtype=np.float64)
    return GridMap(cfg.resolution, n, n, (0.0, 0.0), cells, speed)


def _all_goals_reachable(grid: GridMap, cfg: PerlinMapConfig) -> bool:
    # Reachability is screened on a map inflated by the footprint-sized margin:
    # a connected corridor there is wide enough for the default robot, which
    # also implies 4-connected reachability on the nominal map.
    check = inflate_obstacles(grid, cfg.reachability_margin) if cfg.reachability_margin > 0 else grid
    free = check.cells != CellState.LETHAL
    labels, _ = ndimage.label(free, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    cx, cy = grid.center
    start_label = labels[grid.world_to_cell(cx, cy)[::-1]]
    if start_label == 0:
        return False
    for px, py in cfg.goal_points((cx, cy)):
        ix, iy = grid.world_to_cell(px, py)
        if not grid.in_bounds(ix, iy) or labels[iy, ix] != start_label:
            return False
    return True


def generate_perlin_map(cfg: PerlinMapConfig) -> GridMap:
    """Deterministic procedural map; retries seed+k until every goal cell is
    reachable from the center, raising UnreachableGoals after the retry bound."""
    for k in range(cfg.max_retries):
        grid = _build_candidate(cfg, cfg.seed + k)
        if _all_goals_reachable(grid, cfg):
            return grid
    raise UnreachableGoals(
        f"no seed in [{cfg.seed}, {cfg.seed + cfg.max_retries}) yields full goal reachability"
    )


def make_ring_problem_set(grid: GridMap, cfg: PerlinMapConfig, goal_tolerance: float = 0.5):
    """Problems from the map center to equally spaced goals on the goal ring."""
    from .problems import PlanningProblem

    cx, cy = grid.center
    problems = []
    for i, (px, py) in enumerate(cfg.goal_points((cx, cy))):
        heading = TWO_PI * i / cfg.goal_count
        problems.append(
            PlanningProblem(
                map=grid,
                start=Pose2D(cx, cy, heading),
                goal=Pose2D(px, py, heading),
                goal_tolerance=goal_tolerance,
            )
        )
    return problems
