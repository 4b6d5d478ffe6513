"""Bouncing balls in a square box, rendered to small grayscale frames.

Equal-mass balls move at constant velocity between contacts.  Wall contacts
reflect the wall-normal velocity component (the position is mirrored back
into the box, so no energy is lost to the discrete step).  Ball-ball
contacts swap the velocity components along the line of centres, which is
the elastic collision rule for equal masses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, PlacementError


@dataclass(frozen=True)
class BallWorld:
    n_balls: int = 3
    radius: float = 1.2
    box_size: float = 10.0
    speed: float = 0.5
    dt: float = 1.0

    def __post_init__(self):
        if self.n_balls < 1 or self.radius <= 0 or self.box_size <= 0 or self.dt <= 0:
            raise DomainError("ball world needs positive sizes and at least one ball")
        if 2 * self.radius * self.n_balls >= self.box_size:
            raise DomainError("balls do not fit in the box")
        if self.speed < 0 or self.speed * self.dt >= self.radius:
            raise DomainError("need 0 <= speed*dt < radius (no tunnelling)")


@dataclass
class BallState:
    positions: np.ndarray   # (n, 2)
    velocities: np.ndarray  # (n, 2)

    def copy(self):
        return BallState(self.positions.copy(), self.velocities.copy())


def initial_state(world: BallWorld, rng, max_tries: int = 10_000) -> BallState:
    rng = np.random.default_rng(rng)
    r, L = world.radius, world.box_size
    pos = np.empty((world.n_balls, 2))
    placed = 0
    for _ in range(max_tries):
        cand = rng.uniform(r, L - r, size=2)
        if placed == 0 or np.min(np.linalg.norm(pos[:placed] - cand, axis=1)) >= 2 * r:
            pos[placed] = cand
            placed += 1
            if placed == world.n_balls:
                break
    if placed < world.n_balls:
        raise PlacementError(f"could not place {world.n_balls} balls after {max_tries} tries")
    angle = rng.uniform(0.0, 2 * np.pi, size=world.n_balls)
    vel = world.speed * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    return BallState(pos, vel)


def _reflect_walls(world: BallWorld, pos, vel):
    lo, hi = world.radius, world.box_size - world.radius
    below = pos < lo
    above = pos > hi
    pos[below] = 2 * lo - pos[below]
    pos[above] = 2 * hi - pos[above]
    vel[below] = np.abs(vel[below])
    vel[above] = -np.abs(vel[above])


def _resolve_pairs(world: BallWorld, pos, vel):
    n = len(pos)
    two_r = 2 * world.radius
    for i in range(n):
        for j in range(i + 1, n):
            delta = pos[j] - pos[i]
            dist = np.hypot(delta[0], delta[1])
            if dist >= two_r or dist == 0.0:
                continue
            normal = delta / dist
            approach = np.dot(vel[i] - vel[j], normal)
            if approach > 0:
                # equal masses: swap the normal components
                vel[i] -= approach * normal
                vel[j] += approach * normal
            push = 0.5 * (two_r - dist) * normal
            pos[i] -= push
            pos[j] += push


def _separate(world: BallWorld, pos, passes: int = 200):
    """Project overlapping balls apart and back inside the box (positions only)."""
    n = len(pos)
    two_r = 2 * world.radius
    lo, hi = world.radius, world.box_size - world.radius
    tol = 1e-9 * world.radius
    for _ in range(passes):
        np.clip(pos, lo, hi, out=pos)
        moved = False
        for i in range(n):
            for j in range(i + 1, n):
                delta = pos[j] - pos[i]
                dist = np.hypot(delta[0], delta[1])
                if dist < two_r - tol and dist > 0:
                    push = 0.5 * (two_r - dist) * delta / dist
                    pos[i] -= push
                    pos[j] += push
                    moved = True
        if not moved:
            break
    np.clip(pos, lo, hi, out=pos)


def step(world: BallWorld, state: BallState) -> BallState:
    """Advance one step: move, walls, then ball pairs in index order."""
    pos = state.positions + state.velocities * world.dt
    vel = state.velocities.copy()
    _reflect_walls(world, pos, vel)
    _resolve_pairs(world, pos, vel)
    _separate(world, pos)
    return BallState(pos, vel)


def simulate_balls(world: BallWorld, T: int, seed=None, init: BallState | None = None) -> list[BallState]:
    if T < 1:
        raise DomainError("T must be >= 1")
    state = init.copy() if init is not None else initial_state(world, seed)
    states = [state]
    for _ in range(T - 1):
        state = step(world, state)
        states.append(state)
    return states


def kinetic_energy(state: BallState) -> float:
    return float(np.sum(state.velocities**2))


def rasterize(world: BallWorld, state: BallState, res: int = 15) -> np.ndarray:
    """Render to a (res, res) image; rows index y, columns index x.

    Each ball covers a pixel fully inside ``radius - h/2`` and not at all
    beyond ``radius + h/2`` (h the pixel size), with a linear ramp between;
    coverages add and the result is clipped to [0, 1].
    """
    if res < 8:
        raise DomainError("res must be >= 8")
    h = world.box_size / res
    centers = (np.arange(res) + 0.5) * h
    img = np.zeros((res, res))
    for cx, cy in state.positions:
        dist = np.hypot(centers[None, :] - cx, centers[:, None] - cy)
        img += np.clip((world.radius + 0.5 * h - dist) / h, 0.0, 1.0)
    return np.clip(img, 0.0, 1.0)


def render(world: BallWorld, states, res: int = 15) -> np.ndarray:
    return np.stack([rasterize(world, s, res) for s in states])


def make_balls_dataset(world: BallWorld, N: int, T: int, res: int, rng) -> np.ndarray:
    """``N`` independent videos, returned flattened as (N, T, res*res)."""
    rng = np.random.default_rng(rng)
    out = np.empty((N, T, res * res))
    for n in range(N):
        states = simulate_balls(world, T, rng)
        out[n] = render(world, states, res).reshape(T, -1)
    return out


def order0_mse(frames, batched: bool = False) -> float:
    """Mean squared error of predicting each frame by its predecessor.

    ``frames`` is one video (T, ...) or, with ``batched``, (N, T, ...).
    """
    f = np.asarray(frames, dtype=np.float64)
    if not batched:
        f = f[None]
    if f.shape[1] < 2:
        raise DomainError("need at least two frames")
    f = f.reshape(f.shape[0], f.shape[1], -1)
    return float(np.mean(np.diff(f, axis=1) ** 2))
