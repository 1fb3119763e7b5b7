"""JIT-compiled hot loops shared by the lattice expansion and the rollout
simulator. All collision predicates here implement the same exact semantics
as world_map.check_footprint_collision: a fast distance-transform screen with
an exact windowed scan for borderline points."""

from __future__ import annotations

import math

from numba import njit

from .geometry import TWO_PI

_SCREEN_EPS = 1e-9


@njit(cache=True)
def point_collides(x, y, lethal, clear, ox, oy, res, width, height, r, kwin):
    if x < ox or y < oy:
        return True
    ix = int(math.floor((x - ox) / res))
    iy = int(math.floor((y - oy) / res))
    if ix < 0 or ix >= width or iy < 0 or iy >= height:
        return True
    cx = ox + (ix + 0.5) * res
    cy = oy + (iy + 0.5) * res
    dxp = x - cx
    dyp = y - cy
    off = math.sqrt(dxp * dxp + dyp * dyp)
    d = clear[iy, ix]
    if d - off > r + _SCREEN_EPS:
        return False
    if d + off <= r - _SCREEN_EPS:
        return True
    for jy in range(iy - kwin, iy + kwin + 1):
        if jy < 0 or jy >= height:
            continue
        for jx in range(ix - kwin, ix + kwin + 1):
            if jx < 0 or jx >= width:
                continue
            if lethal[jy, jx]:
                ccx = ox + (jx + 0.5) * res
                ccy = oy + (jy + 0.5) * res
                ddx = ccx - x
                ddy = ccy - y
                if ddx * ddx + ddy * ddy <= r * r:
                    return True
    return False


@njit(cache=True)
def swath_collide(xs_off, ys_off, starts, ends, nx, ny, lethal, clear, ox, oy, res, width, height, r, kwin, out):
    """Per-span verdict: does any sample of the span's swath collide? Spans
    short-circuit on the first hit; the verdict still equals testing every
    sample independently."""
    for p in range(starts.shape[0]):
        hit = False
        for i in range(starts[p], ends[p]):
            if point_collides(xs_off[i] + nx, ys_off[i] + ny, lethal, clear, ox, oy, res, width, height, r, kwin):
                hit = True
                break
        out[p] = hit


@njit(cache=True)
def rollout_kernel(
    path_x,
    path_y,
    cumlen,
    start_x,
    start_y,
    start_h,
    lookahead,
    v_des,
    capture_r,
    dt,
    max_steps,
    noise_v,
    noise_w,
    v_cap,
    w_cap,
    lethal,
    clear,
    ox,
    oy,
    res,
    width,
    height,
    foot_r,
    kwin,
    out_states,
    out_cmds,
):
    """Integrate one noisy pure-pursuit rollout. Returns (code, steps) with
    code 0 = reached goal, 1 = collision, 2 = step limit."""
    n = path_x.shape[0]
    px = start_x
    py = start_y
    ph = start_h
    out_states[0, 0] = px
    out_states[0, 1] = py
    out_states[0, 2] = ph
    gx = path_x[n - 1]
    gy = path_y[n - 1]
    cursor = 0
    steps = 0
    while True:
        dgx = gx - px
        dgy = gy - py
        if math.sqrt(dgx * dgx + dgy * dgy) <= capture_r:
            return 0, steps
        if steps >= max_steps:
            return 2, steps
        while cursor + 1 < n:
            dx0 = path_x[cursor] - px
            dy0 = path_y[cursor] - py
            dx1 = path_x[cursor + 1] - px
            dy1 = path_y[cursor + 1] - py
            if dx1 * dx1 + dy1 * dy1 <= dx0 * dx0 + dy0 * dy0:
                cursor += 1
            else:
                break
        target = cumlen[cursor] + lookahead
        j = cursor
        while j + 1 < n and cumlen[j] < target:
            j += 1
        lx = path_x[j] - px
        ly = path_y[j] - py
        c = math.cos(ph)
        s = math.sin(ph)
        x_l = c * lx + s * ly
        y_l = -s * lx + c * ly
        l2 = x_l * x_l + y_l * y_l
        kappa = 0.0 if l2 < 1e-12 else 2.0 * y_l / l2
        v = v_des
        w = v_des * kappa
        if w > w_cap:
            w = w_cap
        elif w < -w_cap:
            w = -w_cap
        v = v + noise_v[steps]
        w = w + noise_w[steps]
        if v > v_cap:
            v = v_cap
        elif v < -v_cap:
            v = -v_cap
        if w > w_cap:
            w = w_cap
        elif w < -w_cap:
            w = -w_cap
        out_cmds[steps, 0] = v
        out_cmds[steps, 1] = w
        px = px + v * math.cos(ph) * dt
        py = py + v * math.sin(ph) * dt
        ph = (ph + w * dt + math.pi) % TWO_PI - math.pi
        steps += 1
        out_states[steps, 0] = px
        out_states[steps, 1] = py
        out_states[steps, 2] = ph
        if point_collides(px, py, lethal, clear, ox, oy, res, width, height, foot_r, kwin):
            return 1, steps
