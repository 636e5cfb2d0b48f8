"""Non-holonomic state lattice over ``(x, y, theta)``.

Orientation bin ``k`` of ``n`` points at ``k * 360 / n`` degrees,
counter-clockwise from east.  The grid's ``y`` axis grows downward (row
index), so a heading at angle ``phi`` moves by ``(cos phi, -sin phi)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

COMPASS = ("E", "NE", "N", "NW", "W", "SW", "S", "SE")
ACTIONS = ("straight", "diagonal_left", "diagonal_right", "wait")
STRAIGHT, LEFT, RIGHT, WAIT = range(4)


@dataclass(frozen=True, order=True)
class Pose:
    x: int
    y: int
    theta: int

    def flat_index(self, width: int, height: int, orientations: int) -> int:
        return (self.x * height + self.y) * orientations + self.theta


def _direction(angle_deg: float) -> tuple[int, int]:
    rad = math.radians(angle_deg)
    return int(round(math.cos(rad))), -int(round(math.sin(rad)))


class TransitionModel:
    """Bank of orientation-indexed transition filters.

    ``moves[th, a] = (dx, dy, dth)`` is the effect of action ``a`` taken from
    orientation ``th``; ``movement_cost[th, a]`` is its geometric length.
    Every action additionally costs ``time_cost``.  A reversed model maps
    each successor back onto its predecessor under the same action label.
    """

    def __init__(self, orientations, action_names, moves, movement_cost,
                 time_cost=1.0, wait_action=WAIT, reversed=False):
        self.orientations = int(orientations)
        self.action_names = tuple(action_names)
        self.moves = np.asarray(moves, dtype=int)
        self.movement_cost = np.asarray(movement_cost, dtype=float)
        self.time_cost = float(time_cost)
        self.wait_action = wait_action
        self.reversed = reversed
        if self.moves.shape != (self.orientations, len(self.action_names), 3):
            raise ConfigurationError(f"moves table has shape {self.moves.shape}")
        turn = self.moves[:, :, 2]
        if np.any(turn != turn[0]):
            raise ConfigurationError("orientation change must not depend on the source orientation")
        self._index_cache: dict[tuple[int, int], np.ndarray] = {}
        self._mirror: TransitionModel | None = None

    @property
    def n_actions(self) -> int:
        return len(self.action_names)

    @property
    def filter_count(self) -> int:
        return self.orientations * self.n_actions

    def turn(self, action: int) -> int:
        return int(self.moves[0, action, 2])

    def successor(self, pose: Pose, action: int) -> Pose:
        dx, dy, dth = self.moves[pose.theta, action]
        return Pose(pose.x + int(dx), pose.y + int(dy), (pose.theta + int(dth)) % self.orientations)

    def predecessor(self, pose: Pose, action: int) -> Pose:
        src = (pose.theta - self.turn(action)) % self.orientations
        dx, dy, _ = self.moves[src, action]
        return Pose(pose.x - int(dx), pose.y - int(dy), src)

    def step_cost(self, theta: int, action: int) -> float:
        """Movement plus time cost of ``action`` from orientation ``theta``."""
        return float(self.movement_cost[theta, action]) + self.time_cost

    def mirrored(self) -> "TransitionModel":
        """Cached :func:`reverse_model` of this model."""
        if self._mirror is None:
            self._mirror = reverse_model(self)
        return self._mirror

    @property
    def reversed_bank(self) -> np.ndarray:
        return self.mirrored().moves

    def predecessor_index(self, width: int, height: int) -> np.ndarray:
        """Flat predecessor index per ``(x, y, theta, action)``; -1 if off-grid."""
        key = (width, height)
        cached = self._index_cache.get(key)
        if cached is not None:
            return cached
        n_th, n_a = self.orientations, self.n_actions
        xs, ys, ths, acts = np.meshgrid(
            np.arange(width), np.arange(height), np.arange(n_th), np.arange(n_a), indexing="ij"
        )
        turns = self.moves[0, :, 2]
        src = (ths - turns[acts]) % n_th
        px = xs - self.moves[src, acts, 0]
        py = ys - self.moves[src, acts, 1]
        inside = (px >= 0) & (px < width) & (py >= 0) & (py < height)
        idx = np.where(inside, (px * height + py) * n_th + src, -1)
        idx.setflags(write=False)
        self._index_cache[key] = idx
        return idx

    def filters(self) -> np.ndarray:
        """Explicit 3x3 correlation masks, shape ``(A, th_out, th_in, 3, 3)``.

        ``propagate`` is equivalent to correlating each input orientation
        slice with these masks and summing over ``th_in``.
        """
        out = np.zeros((self.n_actions, self.orientations, self.orientations, 3, 3))
        for a in range(self.n_actions):
            for th in range(self.orientations):
                src = (th - self.turn(a)) % self.orientations
                dx, dy, _ = self.moves[src, a]
                out[a, th, src, 1 - dx, 1 - dy] = 1.0
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransitionModel):
            return NotImplemented
        return (
            self.orientations == other.orientations
            and self.action_names == other.action_names
            and np.array_equal(self.moves, other.moves)
            and np.allclose(self.movement_cost, other.movement_cost, rtol=0, atol=1e-15)
            and self.time_cost == other.time_cost
            and self.reversed == other.reversed
        )

    __hash__ = object.__hash__

    def __repr__(self) -> str:
        kind = "reversed " if self.reversed else ""
        return f"<{kind}TransitionModel orientations={self.orientations} actions={self.action_names}>"


def build_default_model(orientations: int = 8) -> TransitionModel:
    """Straight, diagonal-left, diagonal-right and wait per orientation.

    Diagonal actions displace toward ``heading +/- 45 deg`` and turn by 45
    degrees (``orientations // 8`` bins).  With 4 orientations a 45 degree
    heading is not representable; the diagonals then shift by one lane and
    keep the heading.  This coarse model only serves small test instances.
    """
    if orientations == 4:
        turn_bins = 0
    elif orientations > 0 and orientations % 8 == 0:
        turn_bins = orientations // 8
    else:
        raise ConfigurationError(f"orientation count must be 4 or a multiple of 8, got {orientations}")
    step = 360.0 / orientations
    moves = np.zeros((orientations, 4, 3), dtype=int)
    cost = np.zeros((orientations, 4))
    for th in range(orientations):
        heading = th * step
        for a, (offset, dth) in enumerate([(0.0, 0), (45.0, turn_bins), (-45.0, -turn_bins)]):
            dx, dy = _direction(heading + offset)
            moves[th, a] = (dx, dy, dth)
            cost[th, a] = math.hypot(dx, dy)
        moves[th, WAIT] = (0, 0, 0)
    return TransitionModel(orientations, ACTIONS, moves, cost, time_cost=1.0, wait_action=WAIT)


def reverse_model(model: TransitionModel) -> TransitionModel:
    """Mirror every filter: the result maps successors back to predecessors."""
    n_th = model.orientations
    moves = np.zeros_like(model.moves)
    cost = np.zeros_like(model.movement_cost)
    for a in range(model.n_actions):
        dth = model.turn(a)
        for th in range(n_th):
            src = (th - dth) % n_th
            moves[th, a] = -model.moves[src, a]
            cost[th, a] = model.movement_cost[src, a]
    return TransitionModel(n_th, model.action_names, moves, cost, model.time_cost,
                           model.wait_action, not model.reversed)


def in_bounds(pose: Pose, bounds: tuple[int, int], orientations: int | None = None) -> bool:
    width, height = bounds
    ok = 0 <= pose.x < width and 0 <= pose.y < height
    if orientations is not None:
        ok = ok and 0 <= pose.theta < orientations
    return ok


def feasible_successors(pose: Pose, model: TransitionModel, bounds: tuple[int, int]) -> list[tuple[int, Pose]]:
    """Every in-bounds ``(action, successor)`` of ``pose``.  Obstacles are ignored."""
    out = []
    for a in range(model.n_actions):
        nxt = model.successor(pose, a)
        if in_bounds(nxt, bounds):
            out.append((a, nxt))
    return out


def heading_bin(label: str, orientations: int) -> int:
    """Orientation bin for a compass label such as ``"NE"``."""
    try:
        k = COMPASS.index(label.upper())
    except ValueError:
        raise ConfigurationError(f"unknown heading label {label!r}") from None
    pos = k * orientations / 8
    if pos != int(pos):
        raise ConfigurationError(f"heading {label} is not representable with {orientations} orientations")
    return int(pos)


def heading_label(theta: int, orientations: int) -> str:
    pos = theta * 8 / orientations
    if pos == int(pos):
        return COMPASS[int(pos)]
    return f"{theta * 360 / orientations:g}deg"
