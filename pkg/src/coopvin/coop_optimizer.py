"""Cooperative planning by gradient descent on per-agent extrinsic cost.

Every agent owns one planner and one backtrace.  Their soft trajectories are
coupled through a collision loss (overlap of orientation-independent
occupancy at equal and adjacent time steps); its gradient with respect to each
agent's time-dependent extrinsic cost tells the agent where not to be.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from . import tensor_core as tc
from .errors import ConfigurationError, InfeasibleError
from .lattice import Pose, TransitionModel
from .policy_executor import Trajectory, backtrace, expected_true_cost, path_cost, soft_occupancy
from .vi_planner import EPSILON0, plan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgentSpec:
    start: Pose
    goals: tuple[Pose, ...]
    name: str = ""


@dataclass
class CoopProblem:
    agents: list[AgentSpec]
    static_cost: np.ndarray
    model: TransitionModel
    horizon: int
    lambda_coll: float = 100.0
    tau: float = 0.5
    tau_start: float | None = 2.0
    tau_decay: float = 0.95
    eta: float = 0.5
    max_iters: int = 200
    epsilon0: float = EPSILON0
    tol_collision: float = 1e-4
    tol_objective: float = 1e-5
    window: int = 5

    def __post_init__(self):
        self.static_cost = np.asarray(self.static_cost, dtype=float)
        if self.lambda_coll <= 0:
            raise ConfigurationError("collision weight must be positive")
        if not self.agents:
            raise ConfigurationError("problem has no agents")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.static_cost.shape

    def temperature(self, iteration: int) -> float:
        """Softmin temperature used at ``iteration`` (annealed toward ``tau``)."""
        if self.tau_start is None or self.tau_start <= self.tau:
            return self.tau
        return max(self.tau, self.tau_start * self.tau_decay ** iteration)

    def zero_extrinsics(self) -> list[np.ndarray]:
        return [np.zeros((self.horizon, *self.grid_shape)) for _ in self.agents]


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    collision: float
    grad_norm: float
    tau: float = float("nan")

    def log_line(self) -> str:
        return f"iter={self.iteration} J={self.objective:.6g} coll={self.collision:.6g} gnorm={self.grad_norm:.6g}"


@dataclass
class CoopResult:
    problem: CoopProblem
    extrinsics: list[np.ndarray]
    trajectories: list[Trajectory]
    trace: list[IterationRecord]
    converged: bool
    collision: float
    costs: list[float] = field(default_factory=list)

    @property
    def collision_free(self) -> bool:
        return self.collision == 0.0

    @property
    def ensemble_cost(self) -> float:
        return float(sum(self.costs))


def collision_loss(trajs: Sequence[Trajectory]):
    """Pairwise occupancy overlap, same-time plus one-step cross terms.

    The cross terms (agent ``i`` now where ``j`` was one step ago and vice
    versa) stop two agents from swapping cells without ever sharing one.
    """
    if not trajs:
        return np.zeros(())
    horizon = trajs[0].horizon
    if any(tr.horizon != horizon for tr in trajs):
        raise ConfigurationError("trajectories have different horizons")
    occ = [[soft_occupancy(tr, t) for t in range(horizon + 1)] for tr in trajs]
    terms = []
    for i, j in combinations(range(len(trajs)), 2):
        for t in range(horizon + 1):
            terms.append(tc.frobenius(occ[i][t], occ[j][t]))
            if t > 0:
                terms.append(tc.frobenius(occ[i][t], occ[j][t - 1]))
                terms.append(tc.frobenius(occ[i][t - 1], occ[j][t]))
    return tc.add_n(terms)


def discrete_collision(paths: Sequence[Sequence[Pose]]) -> float:
    """Collision loss of decoded pose sequences (one-hot occupancy)."""
    total = 0
    for a, b in combinations(paths, 2):
        for t in range(len(a)):
            total += (a[t].x, a[t].y) == (b[t].x, b[t].y)
            if t > 0:
                total += (a[t].x, a[t].y) == (b[t - 1].x, b[t - 1].y)
                total += (a[t - 1].x, a[t - 1].y) == (b[t].x, b[t].y)
    return float(total)


def _soft_trajectories(problem: CoopProblem, extrinsics, tau: float | None = None) -> list[Trajectory]:
    tau = problem.tau if tau is None else tau
    trajs = []
    for k, (agent, ext) in enumerate(zip(problem.agents, extrinsics)):
        volume = plan(agent.start, agent.goals, problem.static_cost, problem.model, problem.horizon,
                      extrinsic=ext, mode="soft", tau=tau, epsilon0=problem.epsilon0)
        try:
            trajs.append(backtrace(volume, agent_id=k))
        except InfeasibleError as exc:
            raise InfeasibleError(f"agent {k} ({agent.name or 'unnamed'}) cannot reach a goal: {exc}",
                                  agent=k) from None
    return trajs


def objective(problem: CoopProblem, extrinsics, tau: float | None = None):
    """Sum of expected true costs plus weighted collision loss.

    ``extrinsics`` holds one sequence of ``T`` 2D fields per agent (arrays or
    tape variables).  Returns ``(J, collision, trajectories)``.
    """
    trajs = _soft_trajectories(problem, extrinsics, tau)
    costs = [expected_true_cost(tr) for tr in trajs]
    if len(trajs) > 1:
        coll = collision_loss(trajs)
        total = tc.add_n(costs + [tc.scale(coll, problem.lambda_coll)])
    else:
        coll = np.zeros(())
        total = tc.add_n(costs)
    return total, coll, trajs


def objective_and_gradient(problem: CoopProblem, extrinsics: Sequence[np.ndarray], tau: float | None = None):
    """Evaluate the objective and its gradient w.r.t. every extrinsic entry.

    Returns ``(J, collision, gradients)`` with gradients shaped like
    ``extrinsics``.
    """
    tape = tc.Tape()
    leaves = [[tape.variable(ext[t], name=f"ext[{k}][{t}]") for t in range(problem.horizon)]
              for k, ext in enumerate(extrinsics)]
    total, coll, _ = objective(problem, leaves, tau)
    grads = tape.backward(total)
    out = [np.stack([grads[v] for v in row]) for row in leaves]
    return float(tc.value(total)), float(tc.value(coll)), out


def exact_trajectories(problem: CoopProblem, extrinsics) -> list[Trajectory]:
    trajs = []
    for k, (agent, ext) in enumerate(zip(problem.agents, extrinsics)):
        volume = plan(agent.start, agent.goals, problem.static_cost, problem.model, problem.horizon,
                      extrinsic=list(ext), mode="exact", epsilon0=problem.epsilon0)
        try:
            trajs.append(backtrace(volume, agent_id=k))
        except InfeasibleError as exc:
            raise InfeasibleError(f"agent {k} ({agent.name or 'unnamed'}) cannot reach a goal: {exc}",
                                  agent=k) from None
    return trajs


def _plateaued(trace: list[IterationRecord], window: int, tol: float) -> bool:
    if len(trace) <= window:
        return False
    old, new = trace[-1 - window].objective, trace[-1].objective
    return abs(new - old) <= tol * max(abs(old), 1e-12)


def optimize(problem: CoopProblem,
             callback: Callable[[IterationRecord], None] | None = None) -> CoopResult:
    """Gradient descent on the agents' extrinsic cost grids.

    Stops once the soft collision loss is below ``tol_collision`` and the
    objective has settled (relative change below ``tol_objective`` across
    ``window`` iterations).  A problem whose initial plans already do not
    interact stops at iteration 0 with all extrinsics left at zero.  Final
    trajectories are recomputed with hard-min planning.
    """
    extrinsics = problem.zero_extrinsics()
    trace: list[IterationRecord] = []
    converged = False
    for it in range(problem.max_iters):
        # the zero-interaction test always uses the target temperature
        tau = problem.tau if it == 0 else problem.temperature(it)
        J, coll, grads = objective_and_gradient(problem, extrinsics, tau)
        if it == 0 and coll >= problem.tol_collision and problem.temperature(0) != tau:
            tau = problem.temperature(0)
            J, coll, grads = objective_and_gradient(problem, extrinsics, tau)
        gnorm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
        rec = IterationRecord(it, J, coll, gnorm, tau)
        trace.append(rec)
        log.debug(rec.log_line())
        if callback is not None:
            callback(rec)
        if coll < problem.tol_collision and (it == 0 or _plateaued(trace, problem.window, problem.tol_objective)):
            converged = True
            break
        extrinsics = [np.maximum(ext - problem.eta * g, 0.0) for ext, g in zip(extrinsics, grads)]

    trajs = exact_trajectories(problem, extrinsics)
    exact_coll = float(collision_loss(trajs)) if len(trajs) > 1 else 0.0
    if exact_coll > 0:
        log.warning("exact-mode trajectories still collide (loss %.3g)", exact_coll)
    costs = [path_cost(tr) for tr in trajs]
    return CoopResult(problem, extrinsics, trajs, trace, converged, exact_coll, costs)
