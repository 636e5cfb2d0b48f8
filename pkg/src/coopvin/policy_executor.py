"""Trace the planned policy back from the goal to the start.

Starting from the goal at the horizon, the current state distribution is
multiplied with the policy of that step, which gives the mass per
``(state, action)``; the mirrored filters then move that mass to the
predecessor states.  In soft mode the distribution is renormalized after
every step, otherwise long horizons let the products fade toward zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor_core as tc
from .errors import InfeasibleError
from .lattice import Pose
from .tensor_core import INF_CLAMP
from .vi_planner import CostVolume


@dataclass
class Trajectory:
    """Per-step state distributions from ``t = 0`` to ``t = T``.

    ``weights[t - 1]`` is the mass per ``(x, y, theta, action)`` of the step
    arriving at time ``t``; ``actions[t - 1]`` is its decoded action.
    """

    states: list
    weights: list
    # decoded by following the policy argmax back from the goal
    poses: list[Pose]
    actions: list[int]
    volume: CostVolume
    agent_id: int | None = None
    goal: Pose | None = None
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    def state_array(self, t: int) -> np.ndarray:
        return tc.value(self.states[t])

    def action_labels(self) -> list[str]:
        names = self.volume.model.action_names
        return [names[a] for a in self.actions]


def _decode(grid: np.ndarray) -> Pose:
    # np.argmax returns the first maximum, i.e. the lowest flat index
    x, y, th = np.unravel_index(int(np.argmax(grid)), grid.shape)
    return Pose(int(x), int(y), int(th))


def _initial_state(volume: CostVolume, goal: Pose | None, goals: Sequence[Pose]):
    w, h, n_th = volume.shape
    final = volume.values[volume.horizon]
    final_v = tc.value(final)
    if goal is not None:
        if final_v[goal.x, goal.y, goal.theta] >= INF_CLAMP:
            raise InfeasibleError(f"goal {goal} is not reachable at t={volume.horizon}")
        grid = np.zeros((w, h, n_th))
        grid[goal.x, goal.y, goal.theta] = 1.0
        return grid, goal
    costs = np.array([final_v[g.x, g.y, g.theta] for g in goals])
    if costs.min() >= INF_CLAMP:
        raise InfeasibleError(f"no goal is reachable at t={volume.horizon}")
    if volume.mode == "exact" or len(goals) == 1:
        return _initial_state(volume, goals[int(np.argmin(costs))], goals)
    idx = [g.flat_index(w, h, n_th) for g in goals]
    _, mix = tc.softmin_pool(tc.take(final, idx), volume.tau)
    return tc.scatter(mix, idx, (w, h, n_th)), goals[int(np.argmax(tc.value(mix)))]


def backtrace(volume: CostVolume, goal: Pose | None = None, agent_id: int | None = None) -> Trajectory:
    """Recover the trajectory ending in ``goal`` (or the cheapest goal of the volume).

    In soft mode with several goals the backtrace starts from the softmin
    mixture over the goal set.  The decoded pose sequence follows the most
    likely action of each step's policy from the decoded goal backwards
    (lowest action index on ties), so it is always a feasible path and
    matches hard-min decoding whenever the policies agree.
    """
    model = volume.model
    state, chosen = _initial_state(volume, goal, volume.goals)
    states = [state]
    weights = []
    for t in range(volume.horizon, 0, -1):
        w_t = tc.multiply(tc.expand_last(state), volume.policies[t - 1])
        state = tc.normalize(tc.retract(w_t, model))
        weights.append(w_t)
        states.append(state)
    states.reverse()
    weights.reverse()

    pose = chosen
    poses, actions = [pose], []
    for t in range(volume.horizon, 0, -1):
        a = int(np.argmax(volume.policy_array(t)[pose.x, pose.y, pose.theta]))
        pose = model.predecessor(pose, a)
        poses.append(pose)
        actions.append(a)
    poses.reverse()
    actions.reverse()
    return Trajectory(states, weights, poses, actions, volume, agent_id, chosen)


def marginal_argmax(traj: Trajectory) -> list[Pose]:
    """Most likely pose of each step's state distribution (lowest flat index on ties)."""
    return [_decode(traj.state_array(t)) for t in range(traj.horizon + 1)]


def soft_occupancy(traj: Trajectory, t: int):
    """Orientation-independent occupancy of ``traj`` at time ``t``."""
    return tc.marginalize_orientation(traj.states[t])


def path_cost(traj: Trajectory, include_extrinsic: bool = False) -> float:
    """Summed step cost along the decoded pose sequence."""
    volume = traj.volume
    total = 0.0
    for t in range(1, traj.horizon + 1):
        p, a = traj.poses[t], traj.actions[t - 1]
        total += float(volume.action_costs[t - 1][p.x, p.y, p.theta, a])
        total += float(volume.static_cost[p.x, p.y])
        if include_extrinsic and volume.extrinsic[t - 1] is not None:
            total += float(tc.value(volume.extrinsic[t - 1])[p.x, p.y])
    return total


def expected_true_cost(traj: Trajectory):
    """Expected transition plus static cost under the trajectory's step weights.

    Learned extrinsic cost is excluded.  Differentiable when the weights are
    recorded.
    """
    static = traj.volume.static_cost[:, :, None, None]
    terms = [tc.inner(w, traj.volume.action_costs[k] + static) for k, w in enumerate(traj.weights)]
    return tc.add_n(terms)


def is_feasible(traj: Trajectory) -> bool:
    """Consecutive decoded poses are related by the decoded actions."""
    model = traj.volume.model
    for t in range(1, traj.horizon + 1):
        if model.successor(traj.poses[t - 1], traj.actions[t - 1]) != traj.poses[t]:
            return False
    return True
