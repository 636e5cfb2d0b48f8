"""Scenario files, result documents and trajectory rendering.

A scenario is a small line-oriented text file::

    # comments start with '#'
    name: narrowing
    horizon: 25
    orientations: 8
    lambda_coll: 100
    agent: start=0,0,E goals=14,4,any
    agent: start=13,0,W goals=0,4,any
    map:
    .....#####.....
    ...............

Header keys are ``key: value`` pairs.  Goals are separated by ``;``; a goal
heading of ``any`` expands to every orientation.  The map block runs to the
end of the file, ``.`` is free and ``#`` is an obstacle; row ``y`` of the
block is grid row ``y``.
"""
from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Sequence

import numpy as np

from .coop_optimizer import AgentSpec, CoopProblem, CoopResult, discrete_collision
from .errors import ConfigurationError, ScenarioError
from .lattice import COMPASS, Pose, build_default_model, heading_bin, heading_label
from .tensor_core import INF_CLAMP

# diagnostic codes
SYNTAX = "S001"
UNKNOWN_KEY = "S002"
BAD_VALUE = "S003"
DUPLICATE_KEY = "S004"
MISSING_HORIZON = "S010"
MISSING_MAP = "S011"
NO_AGENTS = "S012"
NOT_RECTANGULAR = "S020"
BAD_MAP_CELL = "S021"
UNKNOWN_HEADING = "S030"
START_BLOCKED = "S040"
GOAL_BLOCKED = "S041"
OUT_OF_BOUNDS = "S042"

SOLVER_KEYS = {
    "tau": float, "eta": float, "lambda_coll": float, "epsilon0": float,
    "max_iters": int, "mode": str, "tau_start": float, "tau_decay": float,
}
OCCUPANCY_THRESHOLD = 0.01


@dataclass(frozen=True)
class Diagnostic:
    code: str
    line: int
    message: str

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line else "file"
        return f"{where}: {self.code} {self.message}"


@dataclass
class SolverConfig:
    tau: float = 0.5
    eta: float = 0.5
    lambda_coll: float = 100.0
    epsilon0: float = 0.05
    max_iters: int = 200
    mode: str = "exact"
    tau_start: float = 2.0
    tau_decay: float = 0.95


@dataclass(frozen=True)
class AgentEntry:
    """Agent as written in a scenario: headings are compass labels, goals may use ``any``."""

    start: tuple[int, int, str]
    goals: tuple[tuple[int, int, str], ...]


@dataclass
class Scenario:
    name: str
    rows: list[str]
    agents: list[AgentEntry]
    horizon: int
    orientations: int = 8
    solver: SolverConfig = field(default_factory=SolverConfig)

    @property
    def width(self) -> int:
        return len(self.rows[0])

    @property
    def height(self) -> int:
        return len(self.rows)

    def blocked(self, x: int, y: int) -> bool:
        return self.rows[y][x] == "#"

    def static_cost(self) -> np.ndarray:
        """Visitation cost ``[x, y]``: 0 on free cells, ``INF_CLAMP`` on obstacles."""
        grid = np.array([[c == "#" for c in row] for row in self.rows]).T
        return np.where(grid, INF_CLAMP, 0.0)

    def model(self):
        return build_default_model(self.orientations)

    def start_pose(self, k: int) -> Pose:
        x, y, label = self.agents[k].start
        return Pose(x, y, heading_bin(label, self.orientations))

    def goal_poses(self, k: int) -> tuple[Pose, ...]:
        out = []
        for x, y, label in self.agents[k].goals:
            if label == "any":
                out.extend(Pose(x, y, th) for th in range(self.orientations))
            else:
                out.append(Pose(x, y, heading_bin(label, self.orientations)))
        return tuple(dict.fromkeys(out))

    def agent_specs(self) -> list[AgentSpec]:
        return [AgentSpec(self.start_pose(k), self.goal_poses(k), f"robot{k + 1}")
                for k in range(len(self.agents))]

    def coop_problem(self, **overrides) -> CoopProblem:
        s = self.solver
        params = dict(lambda_coll=s.lambda_coll, tau=s.tau, tau_start=s.tau_start, tau_decay=s.tau_decay,
                      eta=s.eta, max_iters=s.max_iters, epsilon0=s.epsilon0)
        params.update({k: v for k, v in overrides.items() if v is not None})
        return CoopProblem(self.agent_specs(), self.static_cost(), self.model(), self.horizon, **params)


def _parse_pose(text: str, allow_any: bool):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected x,y,heading, got {text!r}")
    x, y = int(parts[0]), int(parts[1])
    label = parts[2] if parts[2] == "any" and allow_any else parts[2].upper()
    return x, y, label


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a scenario; raise :class:`ScenarioError` listing every problem."""
    diags: list[Diagnostic] = []
    header: dict[str, tuple[str, int]] = {}
    agent_lines: list[tuple[str, int]] = []
    rows: list[tuple[str, int]] = []
    in_map = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if in_map:
            if line:
                rows.append((line, lineno))
            continue
        if not line or line.startswith("#"):
            continue
        if line == "map:":
            in_map = True
            continue
        key, sep, val = line.partition(":")
        key, val = key.strip(), val.strip()
        if not sep:
            diags.append(Diagnostic(SYNTAX, lineno, f"expected 'key: value', got {line!r}"))
        elif key == "agent":
            agent_lines.append((val, lineno))
        elif key in ("name", "horizon", "orientations") or key in SOLVER_KEYS:
            if key in header:
                diags.append(Diagnostic(DUPLICATE_KEY, lineno, f"key {key!r} given twice"))
            header[key] = (val, lineno)
        else:
            diags.append(Diagnostic(UNKNOWN_KEY, lineno, f"unknown key {key!r}"))

    def number(key, kind, default=None):
        if key not in header:
            return default
        val, lineno = header[key]
        try:
            return kind(val)
        except ValueError:
            diags.append(Diagnostic(BAD_VALUE, lineno, f"{key} must be {kind.__name__}, got {val!r}"))
            return default

    horizon = number("horizon", int)
    if "horizon" not in header:
        diags.append(Diagnostic(MISSING_HORIZON, 0, "horizon is missing"))
    elif horizon is not None and horizon < 1:
        diags.append(Diagnostic(BAD_VALUE, header["horizon"][1], "horizon must be at least 1"))
    orientations = number("orientations", int, 8)
    if orientations not in (4,) and (orientations is None or orientations <= 0 or orientations % 8):
        diags.append(Diagnostic(BAD_VALUE, header["orientations"][1],
                                f"orientations must be 4 or a multiple of 8, got {orientations}"))
        orientations = 8
    solver = SolverConfig()
    for key, kind in SOLVER_KEYS.items():
        setattr(solver, key, number(key, kind, getattr(solver, key)))
    if solver.mode not in ("soft", "exact"):
        diags.append(Diagnostic(BAD_VALUE, header["mode"][1], f"mode must be soft or exact, got {solver.mode!r}"))

    width = height = 0
    if not rows:
        diags.append(Diagnostic(MISSING_MAP, 0, "map block is missing or empty"))
    else:
        width, height = len(rows[0][0]), len(rows)
        for row, lineno in rows:
            if len(row) != width:
                diags.append(Diagnostic(NOT_RECTANGULAR, lineno,
                                        f"map row has {len(row)} cells, expected {width}"))
            bad = sorted(set(row) - {".", "#"})
            if bad:
                diags.append(Diagnostic(BAD_MAP_CELL, lineno, f"unexpected map characters {''.join(bad)!r}"))
    grid = [r for r, _ in rows]

    def check_cell(x, y, lineno, what, code):
        if not (0 <= x < width and 0 <= y < height):
            if rows:
                diags.append(Diagnostic(OUT_OF_BOUNDS, lineno, f"{what} ({x},{y}) is outside the {width}x{height} map"))
            return
        if x < len(grid[y]) and grid[y][x] == "#":
            diags.append(Diagnostic(code, lineno, f"{what} ({x},{y}) is on an obstacle"))

    def check_heading(label, lineno):
        if label == "any":
            return
        if label not in COMPASS:
            diags.append(Diagnostic(UNKNOWN_HEADING, lineno, f"unknown heading {label!r}"))
            return
        try:
            heading_bin(label, orientations)
        except ConfigurationError as exc:
            diags.append(Diagnostic(UNKNOWN_HEADING, lineno, str(exc)))

    agents = []
    for val, lineno in agent_lines:
        items = dict(part.split("=", 1) for part in val.split() if "=" in part)
        if set(items) != {"start", "goals"} or len(val.split()) != 2:
            diags.append(Diagnostic(SYNTAX, lineno, "agent line needs 'start=x,y,H goals=x,y,H[;...]'"))
            continue
        try:
            start = _parse_pose(items["start"], allow_any=False)
            goals = tuple(_parse_pose(g, allow_any=True) for g in items["goals"].split(";") if g.strip())
        except ValueError as exc:
            diags.append(Diagnostic(SYNTAX, lineno, str(exc)))
            continue
        if not goals:
            diags.append(Diagnostic(SYNTAX, lineno, "agent has no goals"))
            continue
        check_heading(start[2], lineno)
        check_cell(start[0], start[1], lineno, "start", START_BLOCKED)
        for g in goals:
            check_heading(g[2], lineno)
            check_cell(g[0], g[1], lineno, "goal", GOAL_BLOCKED)
        agents.append(AgentEntry(start, goals))
    if not agent_lines:
        diags.append(Diagnostic(NO_AGENTS, 0, "scenario has no agents"))

    if diags:
        diags.sort(key=lambda d: (d.line, d.code))
        raise ScenarioError("invalid scenario:\n  " + "\n  ".join(map(str, diags)), diags)
    name = header.get("name", ("unnamed", 0))[0]
    return Scenario(name, grid, agents, horizon, orientations, solver)


def serialize_scenario(scenario: Scenario) -> str:
    lines = [f"name: {scenario.name}", f"horizon: {scenario.horizon}",
             f"orientations: {scenario.orientations}"]
    for f in fields(SolverConfig):
        val = getattr(scenario.solver, f.name)
        lines.append(f"{f.name}: {val if isinstance(val, str) else repr(val)}")
    for agent in scenario.agents:
        goals = ";".join(f"{x},{y},{h}" for x, y, h in agent.goals)
        x, y, h = agent.start
        lines.append(f"agent: start={x},{y},{h} goals={goals}")
    lines.append("map:")
    lines.extend(scenario.rows)
    return "\n".join(lines) + "\n"


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def fixture_names() -> list[str]:
    files = resources.files("coopvin") / "scenarios"
    return sorted(p.name[:-4] for p in files.iterdir() if p.name.endswith(".txt"))


def load_fixture(name: str) -> Scenario:
    """One of the bundled scenarios (see :func:`fixture_names`)."""
    path = resources.files("coopvin") / "scenarios" / f"{name}.txt"
    if not path.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return parse_scenario(path.read_text(encoding="utf-8"))


# rendering

def colormap(horizon: int) -> np.ndarray:
    """``horizon + 1`` evenly spaced hues from blue (t=0) to red (t=T), uint8 RGB."""
    out = np.zeros((horizon + 1, 3), dtype=np.uint8)
    for t in range(horizon + 1):
        hue = (2.0 / 3.0) * (1.0 - t / horizon) if horizon else 2.0 / 3.0
        r, g, b = colorsys.hsv_to_rgb(hue, 1.0, 1.0)
        out[t] = np.round(np.array([r, g, b]) * 255)
    return out


@dataclass
class RenderedFrame:
    """Per-cell latest time index (-1 where unvisited), its occupancy, and the RGB raster."""

    last_time: np.ndarray  # [x, y]
    alpha: np.ndarray  # [x, y]
    pixels: np.ndarray  # [row, col, rgb]
    rows: list[str]
    horizon: int

    def to_ppm(self) -> bytes:
        h, w, _ = self.pixels.shape
        return f"P6\n{w} {h}\n255\n".encode("ascii") + self.pixels.astype(np.uint8).tobytes()

    def to_ascii(self) -> str:
        """One character per cell: '#', '.', or the latest time in base 36."""
        digits = "0123456789abcdefghijklmnopqrstuvwxyz"
        lines = []
        for y, row in enumerate(self.rows):
            chars = []
            for x, c in enumerate(row):
                t = self.last_time[x, y]
                if c == "#":
                    chars.append("#")
                elif t < 0:
                    chars.append(".")
                else:
                    chars.append(digits[t] if t < len(digits) else "+")
            lines.append("".join(chars))
        return "\n".join(lines) + "\n"


def occupancy_grids(states: Sequence[np.ndarray]) -> np.ndarray:
    """Orientation-marginal occupancy per step, shape ``(T + 1, W, H)``."""
    return np.stack([np.asarray(s).sum(axis=2) for s in states])


def render(traj, rows: Sequence[str], horizon: int | None = None, cell: int = 16,
           threshold: float = OCCUPANCY_THRESHOLD) -> RenderedFrame:
    """Raster of one robot's trajectory.

    Each visited cell shows the colour of the latest step whose occupancy
    exceeds ``threshold``, blended over white with that occupancy as alpha.
    ``traj`` is a :class:`~coopvin.policy_executor.Trajectory` or a sequence
    of state grids.
    """
    states = [traj.state_array(t) for t in range(traj.horizon + 1)] if hasattr(traj, "state_array") else traj
    occ = occupancy_grids(states)
    T = occ.shape[0] - 1 if horizon is None else horizon
    if occ.shape[0] != T + 1:
        raise ConfigurationError(f"trajectory has {occ.shape[0] - 1} steps, expected {T}")
    w, h = occ.shape[1:]
    if (len(rows), len(rows[0])) != (h, w):
        raise ConfigurationError("map does not match the trajectory grid")
    visible = occ > threshold
    ts = np.arange(T + 1)[:, None, None]
    last = np.where(visible, ts, -1).max(axis=0)
    alpha = np.where(last >= 0, np.take_along_axis(occ, np.maximum(last, 0)[None], axis=0)[0], 0.0)
    alpha = np.clip(alpha, 0.0, 1.0)

    cmap = colormap(T).astype(float)
    img = np.full((h, w, 3), 255.0)
    blocked = np.array([[c == "#" for c in row] for row in rows])
    img[blocked] = 0.0
    for x in range(w):
        for y in range(h):
            if last[x, y] >= 0 and not blocked[y, x]:
                a = alpha[x, y]
                img[y, x] = a * cmap[last[x, y]] + (1.0 - a) * 255.0
    pixels = np.repeat(np.repeat(np.round(img).astype(np.uint8), cell, axis=0), cell, axis=1)
    return RenderedFrame(last, alpha, pixels, list(rows), T)


def one_hot_states(poses: Sequence[Pose], shape: tuple[int, int, int]) -> list[np.ndarray]:
    out = []
    for p in poses:
        g = np.zeros(shape)
        g[p.x, p.y, p.theta] = 1.0
        out.append(g)
    return out


# result documents

def _trajectory_record(traj, name: str, orientations: int) -> dict:
    vol = traj.volume
    step_costs = []
    for t in range(1, traj.horizon + 1):
        p, a = traj.poses[t], traj.actions[t - 1]
        step_costs.append(float(vol.action_costs[t - 1][p.x, p.y, p.theta, a]) + float(vol.static_cost[p.x, p.y]))
    return {
        "name": name,
        "poses": [[p.x, p.y, p.theta] for p in traj.poses],
        "headings": [heading_label(p.theta, orientations) for p in traj.poses],
        "actions": traj.action_labels(),
        "step_costs": step_costs,
        "cost": float(sum(step_costs)),
    }


def _dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def export_result(result: CoopResult, scenario: Scenario | None = None) -> str:
    """JSON document with decoded paths, costs, collision loss, trace and all parameters."""
    prob = result.problem
    n_th = prob.model.orientations
    params = {k: getattr(prob, k) for k in ("horizon", "lambda_coll", "tau", "tau_start", "tau_decay", "eta",
                                            "max_iters", "epsilon0", "tol_collision", "tol_objective", "window")}
    params["orientations"] = n_th
    params["grid"] = list(prob.grid_shape)
    doc = {
        "kind": "coop",
        "scenario": scenario.name if scenario else None,
        "parameters": params,
        "agents": [_trajectory_record(tr, ag.name or f"robot{k + 1}", n_th)
                   for k, (tr, ag) in enumerate(zip(result.trajectories, prob.agents))],
        "collision_loss": result.collision,
        "converged": result.converged,
        "ensemble_cost": result.ensemble_cost,
        "extrinsic_max": float(max(np.abs(e).max() for e in result.extrinsics)),
        "trace": [{"iteration": r.iteration, "objective": r.objective, "collision": r.collision,
                   "grad_norm": r.grad_norm, "tau": r.tau} for r in result.trace],
    }
    if scenario is not None:
        doc["map"] = scenario.rows
    return _dumps(doc)


def export_plan(traj, scenario: Scenario | None = None, agent: int = 0) -> str:
    vol = traj.volume
    n_th = vol.model.orientations
    doc = {
        "kind": "plan",
        "scenario": scenario.name if scenario else None,
        "parameters": {"horizon": vol.horizon, "mode": vol.mode, "tau": vol.tau, "orientations": n_th,
                       "grid": list(vol.static_cost.shape), "agent": agent},
        "agents": [_trajectory_record(traj, f"robot{agent + 1}", n_th)],
    }
    if scenario is not None:
        doc["map"] = scenario.rows
    return _dumps(doc)


def import_result(text: str) -> dict:
    """Load an exported document; pose lists become :class:`Pose` sequences."""
    doc = json.loads(text)
    for agent in doc.get("agents", []):
        agent["poses"] = [Pose(*p) for p in agent["poses"]]
    return doc


def recompute_collision(doc: dict) -> float:
    """Collision loss of the exported pose sequences."""
    return discrete_collision([a["poses"] for a in doc["agents"]])
