"""Forward value iteration through time on the state lattice.

Each iteration is one time step: the previous cost-to-come grid is pushed
through every transition filter, the step cost and the visitation cost are
added, and the result is pooled over actions (softmin or hard min).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor_core as tc
from .errors import ConfigurationError, InfeasibleError, ScenarioError
from .lattice import Pose, TransitionModel, in_bounds
from .tensor_core import INF_CLAMP

EPSILON0 = 0.05


def wait_cost(t: int, horizon: int, in_goal: bool, epsilon0: float = EPSILON0) -> float:
    """Cost of idling from step ``t`` to ``t + 1``.

    Free inside a goal.  Elsewhere it is the unit time cost plus a penalty
    that shrinks linearly to zero at the horizon, so idling late is preferred
    over idling early.
    """
    if in_goal:
        return 0.0
    return 1.0 + epsilon0 * (horizon - t) / horizon


def init_cost_grid(start: Pose, bounds: tuple[int, int], orientations: int) -> np.ndarray:
    """Grid with a single zero at ``start`` and ``INF_CLAMP`` elsewhere."""
    width, height = bounds
    if not in_bounds(start, bounds, orientations):
        raise ScenarioError(f"start pose {start} is outside the {width}x{height}x{orientations} grid")
    grid = np.full((width, height, orientations), INF_CLAMP)
    grid[start.x, start.y, start.theta] = 0.0
    return grid


def goal_mask(goals: Sequence[Pose], shape: tuple[int, int, int]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for g in goals:
        mask[g.x, g.y, g.theta] = True
    return mask


def step_action_cost(model: TransitionModel, goals_mask: np.ndarray, t: int, horizon: int,
                     epsilon0: float = EPSILON0) -> np.ndarray:
    """Transition cost per ``(x, y, theta_target, action)`` for the step ``t -> t + 1``."""
    w, h, n_th = goals_mask.shape
    # mirrored bank is indexed by target orientation
    per_action = model.mirrored().movement_cost + model.time_cost
    cost = np.broadcast_to(per_action, (w, h, n_th, model.n_actions)).copy()
    idle = model.wait_action
    cost[..., idle] = wait_cost(t, horizon, False, epsilon0)
    cost[..., idle][goals_mask] = 0.0
    return cost


@dataclass
class CostVolume:
    """Time-indexed cost-to-come grids and the policies that produced them.

    ``values[t]`` is the cost grid at step ``t`` (``0..T``); ``policies[t - 1]``
    and ``action_costs[t - 1]`` belong to the step ``t - 1 -> t``.  In soft
    mode with a tape these entries are :class:`~coopvin.tensor_core.Var`.
    """

    start: Pose
    goals: tuple[Pose, ...]
    model: TransitionModel
    horizon: int
    mode: str
    tau: float | None
    static_cost: np.ndarray
    values: list = field(default_factory=list)
    policies: list = field(default_factory=list)
    action_costs: list = field(default_factory=list)
    extrinsic: list = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(tc.value(self.values[0]).shape)

    def value_array(self, t: int) -> np.ndarray:
        return tc.value(self.values[t])

    def policy_array(self, t: int) -> np.ndarray:
        """Policy of the step into time ``t`` (``1 <= t <= T``)."""
        return tc.value(self.policies[t - 1])

    @property
    def earliest_goal_time(self) -> int | None:
        for t in range(self.horizon + 1):
            v = self.value_array(t)
            if any(v[g.x, g.y, g.theta] < INF_CLAMP for g in self.goals):
                return t
        return None


def _check_pose(pose: Pose, shape, what: str) -> None:
    w, h, n_th = shape
    if not in_bounds(pose, (w, h), n_th):
        raise ScenarioError(f"{what} {pose} is outside the {w}x{h}x{n_th} grid")


def plan(start: Pose, goals: Sequence[Pose], static_cost, model: TransitionModel, horizon: int,
         extrinsic=None, mode: str = "exact", tau: float = 0.5,
         epsilon0: float = EPSILON0) -> CostVolume:
    """Run forward value iteration for ``horizon`` steps.

    ``static_cost`` is a 2D ``[x, y]`` field (``INF_CLAMP`` on obstacles).
    ``extrinsic`` is ``None`` or a sequence of ``horizon`` 2D fields, the
    ``k``-th one added on arrival at time ``k + 1``; entries may be tape
    variables, in which case the soft computation is recorded.
    """
    if mode not in ("soft", "exact"):
        raise ConfigurationError(f"mode must be 'soft' or 'exact', got {mode!r}")
    if horizon < 1:
        raise ConfigurationError("horizon must be at least 1")
    static = np.asarray(static_cost, dtype=float)
    if static.ndim != 2:
        raise ConfigurationError(f"static cost must be a 2D grid, got shape {static.shape}")
    width, height = static.shape
    shape = (width, height, model.orientations)
    goals = tuple(goals)
    if not goals:
        raise ScenarioError("goal set is empty")
    _check_pose(start, shape, "start")
    for g in goals:
        _check_pose(g, shape, "goal")
    if extrinsic is None:
        extrinsic = [None] * horizon
    elif len(extrinsic) != horizon:
        raise ConfigurationError(f"extrinsic cost has {len(extrinsic)} entries, expected {horizon}")
    if mode == "exact" and any(isinstance(e, tc.Var) for e in extrinsic):
        raise ConfigurationError("exact mode cannot be recorded; pass plain arrays")

    mask = goal_mask(goals, shape)
    volume = CostVolume(start, goals, model, horizon, mode, tau if mode == "soft" else None, static)
    volume.extrinsic = list(extrinsic)
    v = init_cost_grid(start, (width, height), model.orientations)
    volume.values.append(v)
    for t in range(1, horizon + 1):
        ac = step_action_cost(model, mask, t - 1, horizon, epsilon0)
        ext = extrinsic[t - 1]
        visit = static if ext is None else tc.add(static, ext)
        q = tc.accumulate(tc.propagate(v, model), ac, visit)
        if mode == "soft":
            v, pi = tc.softmin_pool(q, tau)
        else:
            v, pi = tc.min_pool(q)
        volume.values.append(v)
        volume.policies.append(pi)
        volume.action_costs.append(ac)
    return volume


def goal_cost(volume: CostVolume, goals: Sequence[Pose] | None = None):
    """Cost of the cheapest goal at the horizon (softmin over goals in soft mode)."""
    goals = tuple(goals) if goals is not None else volume.goals
    w, h, n_th = volume.shape
    idx = [g.flat_index(w, h, n_th) for g in goals]
    final = volume.values[volume.horizon]
    at_goals = tc.value(final).ravel()[idx]
    if at_goals.min() >= INF_CLAMP:
        raise InfeasibleError(f"no goal reachable within horizon {volume.horizon}")
    if volume.mode == "exact":
        return float(at_goals.min())
    picked = tc.take(final, idx)
    cost, _ = tc.softmin_pool(picked, volume.tau)
    return cost
