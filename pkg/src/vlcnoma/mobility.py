"""Random Direction mobility on the receiver plane.

Users travel in straight lines and pick a fresh speed and an inward heading
whenever they reach a wall. Travel left over in a step after hitting a wall is
dropped.

The new heading follows a cosine law about the inward normal by default. A
user population in uniform, isotropic motion crosses a wall with exactly that
angular density, so re-injecting with it keeps occupancy flat; drawing the
angle uniformly over the half-plane (``heading_law="uniform"``) piles users up
along the walls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi
_EDGE_TOL = 1e-12


@dataclass
class MobilityState:
    position: np.ndarray  # (U, 3)
    speed: np.ndarray     # (U,)
    heading: np.ndarray   # (U,) in [0, 2 pi)

    def copy(self) -> "MobilityState":
        return MobilityState(self.position.copy(), self.speed.copy(), self.heading.copy())


def init_users(rng: np.random.Generator, n: int, length: float, width: float,
               height: float, v_min: float, v_max: float) -> MobilityState:
    if v_min > v_max:
        raise ValueError("v_min must not exceed v_max")
    xy = rng.uniform((0.0, 0.0), (length, width), size=(n, 2))
    pos = np.column_stack([xy, np.full(n, height)])
    heading = rng.uniform(0.0, TWO_PI, size=n)
    speed = rng.uniform(v_min, v_max, size=n)
    return MobilityState(pos, speed, heading)


HEADING_LAWS = ("cosine", "uniform")


def _inward_heading(rng, x, y, length, width, law="cosine"):
    """Headings over directions pointing into the room from boundary points.

    One wall leaves a half-plane of directions, a corner a quarter-plane; in
    both cases the admissible arc is centred on the sum of inward normals.
    """
    nx = (x <= _EDGE_TOL).astype(float) - (x >= length - _EDGE_TOL)
    ny = (y <= _EDGE_TOL).astype(float) - (y >= width - _EDGE_TOL)
    centre = np.arctan2(ny, nx)
    half_arc = np.where((nx != 0) & (ny != 0), np.pi / 4, np.pi / 2)
    u = rng.uniform(-1.0, 1.0, size=len(x))
    if law == "cosine":
        # arcsin of a uniform variate has density cos(t) / 2 on [-pi/2, pi/2]
        offset = np.arcsin(u) * (half_arc / (np.pi / 2))
    elif law == "uniform":
        offset = u * half_arc
    else:
        raise ValueError(f"unknown heading law {law!r}")
    return np.mod(centre + offset, TWO_PI)


def _snap(val, lim):
    val = np.where(np.abs(val) < 1e-9, 0.0, val)
    return np.where(np.abs(val - lim) < 1e-9, lim, val)


def _time_to_wall(pos, vel, lim):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(vel > 0, (lim - pos) / vel, np.where(vel < 0, -pos / vel, np.inf))


def step(state: MobilityState, dt: float, rng: np.random.Generator, length: float,
         width: float, v_min: float, v_max: float, heading_law: str = "cosine") -> MobilityState:
    """Advance every user by ``dt``; returns a new state.

    Users that reach a wall stop there and draw a new heading, then a new
    speed, in ascending user order.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = state.copy()
    x, y = out.position[:, 0], out.position[:, 1]
    vx = out.speed * np.cos(out.heading)
    vy = out.speed * np.sin(out.heading)
    t_hit = np.minimum(_time_to_wall(x, vx, length), _time_to_wall(y, vy, width))
    travel = np.clip(np.minimum(t_hit, dt), 0.0, None)
    nx = _snap(np.clip(x + vx * travel, 0.0, length), length)
    ny = _snap(np.clip(y + vy * travel, 0.0, width), width)
    hit = np.flatnonzero(t_hit <= dt)
    if len(hit):
        out.heading[hit] = _inward_heading(rng, nx[hit], ny[hit], length, width, heading_law)
        out.speed[hit] = rng.uniform(v_min, v_max, size=len(hit))
    out.position[:, 0] = nx
    out.position[:, 1] = ny
    return out
