"""Brute-force references for the planners.

``shortest_costs`` runs Dijkstra on the explicit time-expanded graph, which is
what value iteration explores implicitly.  ``enumerate_cost`` walks every
action sequence recursively and is only usable on tiny grids.
``joint_optimum`` searches the product graph of two agents exhaustively.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, RefusalError
from .lattice import Pose, TransitionModel, feasible_successors, in_bounds
from .tensor_core import INF_CLAMP
from .vi_planner import EPSILON0, wait_cost

MAX_JOINT_STATES = 64
MAX_JOINT_HORIZON = 8


@dataclass
class TimeExpandedGraph:
    """Nodes ``(x, y, theta, t)`` for ``t = 0..T``; edges advance ``t`` by one.

    Obstacle cells (static cost at or above ``INF_CLAMP``) have no incoming
    edges.  Idling inside one of ``goals`` is free.
    """

    static_cost: np.ndarray
    model: TransitionModel
    horizon: int
    goals: tuple[Pose, ...] = ()
    extrinsic: Sequence | None = None
    epsilon0: float = EPSILON0
    _goal_set: frozenset = field(init=False, repr=False)

    def __post_init__(self):
        self.static_cost = np.asarray(self.static_cost, dtype=float)
        self.goals = tuple(self.goals)
        self._goal_set = frozenset(self.goals)
        if self.extrinsic is not None and len(self.extrinsic) != self.horizon:
            raise ConfigurationError("extrinsic cost needs one field per step")

    @property
    def bounds(self) -> tuple[int, int]:
        return self.static_cost.shape

    @property
    def node_count(self) -> int:
        w, h = self.bounds
        return w * h * self.model.orientations * (self.horizon + 1)

    def blocked(self, pose: Pose) -> bool:
        return self.static_cost[pose.x, pose.y] >= INF_CLAMP

    def edge_cost(self, src: Pose, action: int, dst: Pose, t: int) -> float:
        """Cost of the edge ``(src, t - 1) -> (dst, t)``."""
        if action == self.model.wait_action:
            step = wait_cost(t - 1, self.horizon, dst in self._goal_set, self.epsilon0)
        else:
            step = self.model.step_cost(src.theta, action)
        cost = step + self.static_cost[dst.x, dst.y]
        if self.extrinsic is not None:
            cost += float(np.asarray(self.extrinsic[t - 1])[dst.x, dst.y])
        return float(cost)

    def edges(self, pose: Pose, t: int) -> list[tuple[int, Pose, float]]:
        """Outgoing ``(action, successor, cost)`` of node ``(pose, t)``."""
        if t >= self.horizon:
            return []
        out = []
        for a, nxt in feasible_successors(pose, self.model, self.bounds):
            if not self.blocked(nxt):
                out.append((a, nxt, self.edge_cost(pose, a, nxt, t + 1)))
        return out

    def predecessors(self, pose: Pose, t: int) -> list[tuple[int, Pose, float]]:
        """Incoming ``(action, predecessor, cost)`` of node ``(pose, t)``."""
        if t <= 0 or self.blocked(pose):
            return []
        out = []
        w, h = self.bounds
        for x in range(max(0, pose.x - 1), min(w, pose.x + 2)):
            for y in range(max(0, pose.y - 1), min(h, pose.y + 2)):
                for th in range(self.model.orientations):
                    src = Pose(x, y, th)
                    for a in range(self.model.n_actions):
                        if self.model.successor(src, a) == pose:
                            out.append((a, src, self.edge_cost(src, a, pose, t)))
        return out


def shortest_costs(graph: TimeExpandedGraph, start: Pose) -> np.ndarray:
    """Minimal cost of reaching every node from ``(start, 0)``.

    Returns an array indexed ``[t, x, y, theta]``; unreachable nodes hold
    ``INF_CLAMP``.
    """
    w, h = graph.bounds
    n_th = graph.model.orientations
    dist = np.full((graph.horizon + 1, w, h, n_th), np.inf)
    if not in_bounds(start, (w, h), n_th) or graph.blocked(start):
        return np.full_like(dist, INF_CLAMP)
    dist[0, start.x, start.y, start.theta] = 0.0
    heap = [(0.0, 0, start)]
    while heap:
        d, t, pose = heapq.heappop(heap)
        if d > dist[t, pose.x, pose.y, pose.theta]:
            continue
        for _, nxt, c in graph.edges(pose, t):
            nd = d + c
            if nd < dist[t + 1, nxt.x, nxt.y, nxt.theta]:
                dist[t + 1, nxt.x, nxt.y, nxt.theta] = nd
                heapq.heappush(heap, (nd, t + 1, nxt))
    return np.minimum(dist, INF_CLAMP)


def shortest_cost(graph: TimeExpandedGraph, start: Pose, goal: Pose, t: int) -> float:
    """Minimal cost of a ``t``-step path from ``start`` to ``goal``."""
    if not 0 <= t <= graph.horizon:
        raise ConfigurationError(f"time {t} outside 0..{graph.horizon}")
    return float(shortest_costs(graph, start)[t, goal.x, goal.y, goal.theta])


def enumerate_cost(graph: TimeExpandedGraph, start: Pose, goal: Pose, t: int) -> float:
    """Same as :func:`shortest_cost`, by trying every action sequence."""
    if graph.blocked(start):
        return INF_CLAMP

    def walk(pose, step, acc):
        if step == t:
            return acc if pose == goal else np.inf
        return min((walk(nxt, step + 1, acc + c) for _, nxt, c in graph.edges(pose, step)),
                   default=np.inf)

    return float(min(walk(start, 0, 0.0), INF_CLAMP))


@dataclass
class JointSolution:
    cost: float
    paths: tuple[list[Pose], list[Pose]] | None

    @property
    def feasible(self) -> bool:
        return self.paths is not None


def _agent_tables(model: TransitionModel, static: np.ndarray, goals, horizon: int, epsilon0: float):
    """Predecessor index and per-step arrival cost for one agent, flat state indexing."""
    w, h = static.shape
    n_th = model.orientations
    n, n_a = w * h * n_th, model.n_actions
    poses = [Pose(x, y, th) for x in range(w) for y in range(h) for th in range(n_th)]
    pred = np.full((n, n_a), -1)
    move = np.zeros((n, n_a))
    for i, p in enumerate(poses):
        for a, nxt in feasible_successors(p, model, (w, h)):
            j = nxt.flat_index(w, h, n_th)
            pred[j, a] = i
            move[j, a] = model.step_cost(p.theta, a)
    goal_set = set(goals)
    cost = np.empty((horizon, n, n_a))
    for t in range(horizon):
        cost[t] = move
        for j, p in enumerate(poses):
            cost[t, j, model.wait_action] = wait_cost(t, horizon, p in goal_set, epsilon0)
    blocked = np.array([static[p.x, p.y] >= INF_CLAMP for p in poses])
    cost += np.array([static[p.x, p.y] for p in poses])[None, :, None]
    cost[:, blocked, :] = np.inf
    cost[:, pred < 0] = np.inf
    cells = np.array([p.x * h + p.y for p in poses])
    return poses, pred, cost, cells


def joint_optimum(problem) -> JointSolution:
    """Cheapest conflict-free pair of trajectories, by exhaustive layered search.

    Two agents conflict when they share a cell at the same step or when
    one enters the cell the other occupied one step earlier (this includes
    swaps), mirroring the collision loss.  Extrinsic cost is ignored.  The
    search is exponential in the number of agents and refuses anything
    larger than ``MAX_JOINT_STATES`` single-agent states or
    ``MAX_JOINT_HORIZON`` steps.
    """
    if len(problem.agents) != 2:
        raise RefusalError("joint search handles exactly two agents")
    static = np.asarray(problem.static_cost, dtype=float)
    w, h = static.shape
    model = problem.model
    if w * h * model.orientations > MAX_JOINT_STATES or problem.horizon > MAX_JOINT_HORIZON:
        raise RefusalError(
            f"instance {w}x{h}x{model.orientations}, T={problem.horizon} exceeds the joint search guard "
            f"({MAX_JOINT_STATES} states, T<={MAX_JOINT_HORIZON})")
    T = problem.horizon
    n_th = model.orientations
    tables = [_agent_tables(model, static, ag.goals, T, problem.epsilon0) for ag in problem.agents]
    poses, pred1, cost1, cells = tables[0]
    _, pred2, cost2, _ = tables[1]
    n, n_a = pred1.shape

    s1 = problem.agents[0].start.flat_index(w, h, n_th)
    s2 = problem.agents[1].start.flat_index(w, h, n_th)
    C = np.full((n, n), np.inf)
    if cells[s1] != cells[s2] and static.flat[cells[s1]] < INF_CLAMP and static.flat[cells[s2]] < INF_CLAMP:
        C[s1, s2] = 0.0
    same_cell = cells[:, None] == cells[None, :]
    back = []
    for t in range(T):
        best = np.full((n, n), np.inf)
        arg = np.full((n, n, 2), -1)
        for a1 in range(n_a):
            p1 = pred1[:, a1]
            for a2 in range(n_a):
                p2 = pred2[:, a2]
                cand = C[p1[:, None], p2[None, :]] + cost1[t, :, a1][:, None] + cost2[t, :, a2][None, :]
                bad = (p1[:, None] < 0) | (p2[None, :] < 0) | same_cell
                # one agent entering the cell the other just left
                bad |= cells[:, None] == cells[p2][None, :]
                bad |= cells[p1][:, None] == cells[None, :]
                cand = np.where(bad, np.inf, cand)
                better = cand < best
                best = np.where(better, cand, best)
                arg[better] = (a1, a2)
        C = best
        back.append(arg)

    goals1 = [g.flat_index(w, h, n_th) for g in problem.agents[0].goals]
    goals2 = [g.flat_index(w, h, n_th) for g in problem.agents[1].goals]
    sub = C[np.ix_(goals1, goals2)]
    if not np.isfinite(sub).any() or sub.min() >= INF_CLAMP:
        return JointSolution(INF_CLAMP, None)
    i, j = np.unravel_index(int(np.argmin(sub)), sub.shape)
    j1, j2 = goals1[i], goals2[j]
    path1, path2 = [poses[j1]], [poses[j2]]
    for t in range(T - 1, -1, -1):
        a1, a2 = back[t][j1, j2]
        j1, j2 = pred1[j1, a1], pred2[j2, a2]
        path1.append(poses[j1])
        path2.append(poses[j2])
    return JointSolution(float(sub.min()), (path1[::-1], path2[::-1]))
