"""Stochastic pure-pursuit rollouts.

A rollout forward-simulates a pure-pursuit path tracker with zero-mean
Gaussian command noise through unicycle kinematics at a fixed time step,
terminating on goal capture, footprint collision, or a step limit. Ensembles
of independent rollouts provide the validity verdict and mean-duration
estimate consumed by the search strategies.

The integration loop is JIT-compiled; the pure-Python operations below define
the reference semantics and are what the kernel must agree with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._kernels import rollout_kernel
from .geometry import Pose2D, normalize_angle
from .world_map import Footprint, GridMap


@dataclass(frozen=True)
class ControllerConfig:
    lookahead: float = 1.0
    desired_speed: float | None = None  # None: use the map's best speed
    goal_capture_radius: float = 0.5
    sigma_v: float = 0.1
    sigma_w: float = 0.15
    dt: float = 0.1
    max_steps: int | None = None  # None: ceil(4 * nominal duration / dt)
    omega_max: float = 1.0

    def __post_init__(self):
        if self.lookahead <= 0 or self.dt <= 0:
            raise ValueError("lookahead and dt must be > 0")
        if self.sigma_v < 0 or self.sigma_w < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max steps must be >= 1")


@dataclass(frozen=True)
class VelocityCommand:
    linear: float
    angular: float


class RolloutOutcome(Enum):
    REACHED_GOAL = "reached_goal"
    COLLISION = "collision"
    STEP_LIMIT = "step_limit"


@dataclass(eq=False)
class Rollout:
    """One simulated trace. states[i] is the pose at time i*dt."""

    states: np.ndarray  # (n+1, 3)
    commands: np.ndarray  # (n, 2) executed (noisy, clamped) commands
    outcome: RolloutOutcome
    collision_index: int | None
    dt: float

    @property
    def duration(self) -> float:
        return (self.states.shape[0] - 1) * self.dt

    def collision_pose(self) -> Pose2D | None:
        if self.collision_index is None:
            return None
        x, y, h = self.states[self.collision_index]
        return Pose2D(x, y, h)


@dataclass(eq=False)
class RolloutEnsemble:
    """K-sample batch; valid iff every member reached the goal."""

    rollouts: list
    valid: bool
    mean_duration: float | None
    complete: bool = True  # False when a deadline stopped the batch early


# -- reference operations ------------------------------------------------------


def unicycle_step(pose: Pose2D, cmd: VelocityCommand, dt: float) -> Pose2D:
    """Forward-Euler unicycle update with the position advanced along the
    current heading."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    return Pose2D(
        pose.x + cmd.linear * math.cos(pose.heading) * dt,
        pose.y + cmd.linear * math.sin(pose.heading) * dt,
        normalize_angle(pose.heading + cmd.angular * dt),
    )


def _path_arrays(path) -> tuple[np.ndarray, np.ndarray]:
    arr = np.ascontiguousarray(np.asarray(path, dtype=np.float64)[:, :2])
    seg = np.diff(arr, axis=0)
    cumlen = np.concatenate(([0.0], np.cumsum(np.sqrt(seg[:, 0] ** 2 + seg[:, 1] ** 2))))
    return arr, cumlen


def _advance_cursor(xy: np.ndarray, cursor: int, px: float, py: float) -> int:
    """Monotone closest-progress cursor: walk forward while not getting farther."""
    n = xy.shape[0]
    while cursor + 1 < n:
        dx0 = xy[cursor, 0] - px
        dy0 = xy[cursor, 1] - py
        dx1 = xy[cursor + 1, 0] - px
        dy1 = xy[cursor + 1, 1] - py
        if dx1 * dx1 + dy1 * dy1 <= dx0 * dx0 + dy0 * dy0:
            cursor += 1
        else:
            break
    return cursor


def pure_pursuit_command(
    pose: Pose2D, path, cfg: ControllerConfig, cursor: int = 0, desired_speed: float | None = None
) -> VelocityCommand:
    """Track the path point one lookahead arc-length beyond the closest-progress
    point; curvature 2*y_L/L^2 toward it, angular rate clamped. Zero command
    once inside the goal capture radius of the final path point."""
    xy, cumlen = _path_arrays(path)
    v_des = desired_speed if desired_speed is not None else (cfg.desired_speed or 1.0)
    gx, gy = xy[-1]
    if math.sqrt((gx - pose.x) ** 2 + (gy - pose.y) ** 2) <= cfg.goal_capture_radius:
        return VelocityCommand(0.0, 0.0)
    cursor = _advance_cursor(xy, cursor, pose.x, pose.y)
    target = cumlen[cursor] + cfg.lookahead
    j = cursor
    n = xy.shape[0]
    while j + 1 < n and cumlen[j] < target:
        j += 1
    lx = xy[j, 0] - pose.x
    ly = xy[j, 1] - pose.y
    c = math.cos(pose.heading)
    s = math.sin(pose.heading)
    x_l = c * lx + s * ly
    y_l = -s * lx + c * ly
    l2 = x_l * x_l + y_l * y_l
    kappa = 0.0 if l2 < 1e-12 else 2.0 * y_l / l2
    w = v_des * kappa
    w = min(max(w, -cfg.omega_max), cfg.omega_max)
    return VelocityCommand(v_des, w)


# -- simulation ------------------------------------------------------------

_CODE_OUTCOME = {0: RolloutOutcome.REACHED_GOAL, 1: RolloutOutcome.COLLISION, 2: RolloutOutcome.STEP_LIMIT}


def _resolve(cfg: ControllerConfig, grid: GridMap, cumlen, nominal_duration):
    v_des = cfg.desired_speed if cfg.desired_speed is not None else grid.v_max()
    if cfg.max_steps is not None:
        max_steps = cfg.max_steps
    else:
        nominal = nominal_duration if nominal_duration is not None else float(cumlen[-1]) / v_des
        max_steps = max(1, int(math.ceil(4.0 * nominal / cfg.dt)))
    return v_des, max_steps


def simulate_rollout(
    path,
    cfg: ControllerConfig,
    grid: GridMap,
    footprint: Footprint,
    rng: np.random.Generator,
    nominal_duration: float | None = None,
    unknown_as_lethal: bool = True,
    start: Pose2D | None = None,
) -> Rollout:
    """Simulate one noisy controller trace along `path` until goal capture,
    collision, or the step limit. Deterministic for a fixed rng stream."""
    xy, cumlen = _path_arrays(path)
    v_des, max_steps = _resolve(cfg, grid, cumlen, nominal_duration)
    arr = np.asarray(path, dtype=np.float64)
    if start is not None:
        sx, sy, sh = start.x, start.y, start.heading
    elif arr.ndim == 2 and arr.shape[1] >= 3:
        sx, sy, sh = arr[0, 0], arr[0, 1], arr[0, 2]
    else:
        sx, sy = xy[0]
        d = xy[min(1, len(xy) - 1)] - xy[0]
        sh = math.atan2(d[1], d[0]) if d[0] or d[1] else 0.0
    noise_v = rng.normal(0.0, cfg.sigma_v, max_steps)
    noise_w = rng.normal(0.0, cfg.sigma_w, max_steps)
    out_states = np.empty((max_steps + 1, 3))
    out_cmds = np.empty((max_steps, 2))
    kwin = int(math.ceil(footprint.radius / grid.resolution + 0.5))
    code, steps = rollout_kernel(
        np.ascontiguousarray(xy[:, 0]),
        np.ascontiguousarray(xy[:, 1]),
        cumlen,
        sx,
        sy,
        sh,
        cfg.lookahead,
        v_des,
        cfg.goal_capture_radius,
        cfg.dt,
        max_steps,
        noise_v,
        noise_w,
        grid.v_max(),
        cfg.omega_max,
        grid.lethal_mask(unknown_as_lethal),
        grid.clearance(unknown_as_lethal),
        grid.origin[0],
        grid.origin[1],
        grid.resolution,
        grid.width,
        grid.height,
        footprint.radius,
        kwin,
        out_states,
        out_cmds,
    )
    outcome = _CODE_OUTCOME[code]
    return Rollout(
        states=out_states[: steps + 1].copy(),
        commands=out_cmds[:steps].copy(),
        outcome=outcome,
        collision_index=steps if outcome is RolloutOutcome.COLLISION else None,
        dt=cfg.dt,
    )


def rollout_ensemble(
    path,
    k: int,
    cfg: ControllerConfig,
    grid: GridMap,
    footprint: Footprint,
    rng: np.random.Generator,
    validity_only: bool = False,
    clock=None,
    nominal_duration: float | None = None,
    unknown_as_lethal: bool = True,
) -> RolloutEnsemble:
    """K independent rollouts on substreams of `rng` (one per rollout index).

    With `validity_only`, stops at the first non-goal outcome and reports the
    offending rollout. A `clock` (duck-typed: charge_rollout_steps / expired)
    is consulted between member rollouts; an expired clock yields an
    incomplete ensemble.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    streams = rng.spawn(k)
    rollouts = []
    complete = True
    for i in range(k):
        if clock is not None and clock.expired():
            complete = False
            break
        r = simulate_rollout(
            path, cfg, grid, footprint, streams[i],
            nominal_duration=nominal_duration, unknown_as_lethal=unknown_as_lethal,
        )
        if clock is not None:
            clock.charge_rollout_steps(r.states.shape[0] - 1)
        rollouts.append(r)
        if validity_only and r.outcome is not RolloutOutcome.REACHED_GOAL:
            break
    valid = complete and len(rollouts) == k and all(
        r.outcome is RolloutOutcome.REACHED_GOAL for r in rollouts
    )
    mean = float(np.mean([r.duration for r in rollouts])) if valid else None
    return RolloutEnsemble(rollouts=rollouts, valid=valid, mean_duration=mean, complete=complete)
