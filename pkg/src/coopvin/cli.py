"""Command line entry point.

    coopvin plan   --scenario FILE --out DIR [--mode soft|exact] [--tau T] [--agent K]
    coopvin coop   --scenario FILE --out DIR [--eta E] [--lambda-coll L] [--max-iters N] [--trace]
    coopvin oracle --scenario FILE --out DIR
    coopvin render --scenario FILE --result FILE --out DIR [--ascii]

Exit codes: 0 success, 1 scenario error, 2 infeasible, 3 no convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .coop_optimizer import optimize
from .errors import ConfigurationError, InfeasibleError, RefusalError, ScenarioError
from .oracle import TimeExpandedGraph, joint_optimum, shortest_costs
from .policy_executor import backtrace
from .scenario_io import (export_plan, export_result, import_result, load_fixture, load_scenario,
                          one_hot_states, render)
from .vi_planner import plan

EXIT_OK, EXIT_SCENARIO, EXIT_INFEASIBLE, EXIT_NOT_CONVERGED = 0, 1, 2, 3

log = logging.getLogger("coopvin")


def _scenario(args):
    if args.scenario.startswith("fixture:"):
        return load_fixture(args.scenario.split(":", 1)[1])
    return load_scenario(args.scenario)


def _write(out, name, data):
    path = os.path.join(out, name)
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode) as fh:
        fh.write(data)
    return path


def _write_renders(out, rows, trajs, ascii_art):
    for k, tr in enumerate(trajs):
        frame = render(tr, rows)
        _write(out, f"robot{k + 1}.ppm", frame.to_ppm())
        if ascii_art:
            _write(out, f"robot{k + 1}.txt", frame.to_ascii())


def cmd_plan(args) -> int:
    sc = _scenario(args)
    k = args.agent
    if not 0 <= k < len(sc.agents):
        raise ScenarioError(f"scenario has {len(sc.agents)} agents, no agent {k}")
    mode = args.mode or sc.solver.mode
    tau = args.tau if args.tau is not None else sc.solver.tau
    vol = plan(sc.start_pose(k), sc.goal_poses(k), sc.static_cost(), sc.model(), sc.horizon,
               mode=mode, tau=tau, epsilon0=sc.solver.epsilon0)
    traj = backtrace(vol, agent_id=k)
    _write(args.out, "plan.json", export_plan(traj, sc, agent=k))
    _write_renders(args.out, sc.rows, [traj], args.ascii)
    print(f"agent {k}: {' '.join(traj.action_labels())}")
    return EXIT_OK


def cmd_coop(args) -> int:
    sc = _scenario(args)
    prob = sc.coop_problem(tau=args.tau, eta=args.eta, lambda_coll=args.lambda_coll, max_iters=args.max_iters)
    callback = (lambda rec: print(rec.log_line(), flush=True)) if args.trace else None
    result = optimize(prob, callback=callback)
    _write(args.out, "result.json", export_result(result, sc))
    _write_renders(args.out, sc.rows, result.trajectories, args.ascii)
    print(f"converged={result.converged} iterations={len(result.trace)} "
          f"collision={result.collision:g} ensemble_cost={result.ensemble_cost:.6f}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_oracle(args) -> int:
    """Reference costs: per-agent Dijkstra over time, plus the joint optimum when small enough."""
    sc = _scenario(args)
    static, model = sc.static_cost(), sc.model()
    doc = {"scenario": sc.name, "horizon": sc.horizon, "agents": []}
    for k, spec in enumerate(sc.agent_specs()):
        graph = TimeExpandedGraph(static, model, sc.horizon, spec.goals, epsilon0=sc.solver.epsilon0)
        table = shortest_costs(graph, spec.start)
        per_t = [float(min(table[t, g.x, g.y, g.theta] for g in spec.goals)) for t in range(sc.horizon + 1)]
        doc["agents"].append({"name": spec.name, "goal_cost_by_time": per_t})
    if len(sc.agents) == 2:
        try:
            sol = joint_optimum(sc.coop_problem())
            doc["joint"] = {"cost": sol.cost,
                            "paths": None if sol.paths is None else [[[p.x, p.y, p.theta] for p in path]
                                                                     for path in sol.paths]}
        except RefusalError as exc:
            doc["joint"] = {"refused": str(exc)}
    _write(args.out, "oracle.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if all(c >= 1e6 for a in doc["agents"] for c in a["goal_cost_by_time"][-1:]):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_render(args) -> int:
    sc = _scenario(args)
    if not args.result:
        raise ScenarioError("render needs --result (a plan.json or result.json document)")
    with open(args.result, encoding="utf-8") as fh:
        doc = import_result(fh.read())
    shape = (sc.width, sc.height, sc.orientations)
    trajs = [one_hot_states(a["poses"], shape) for a in doc["agents"]]
    _write_renders(args.out, sc.rows, trajs, args.ascii)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coopvin", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "plan": (cmd_plan, "plan one agent on its own"),
        "coop": (cmd_coop, "cooperative planning for all agents"),
        "oracle": (cmd_oracle, "brute-force reference costs"),
        "render": (cmd_render, "rasterize an exported result"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--scenario", required=True, help="scenario file, or fixture:<name> for a bundled one")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--mode", choices=("soft", "exact"))
        p.add_argument("--tau", type=float)
        p.add_argument("--eta", type=float)
        p.add_argument("--lambda-coll", type=float)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--seed", type=int, default=0, help="reserved; the solver is deterministic")
        p.add_argument("--trace", action="store_true", help="print one line per optimizer iteration")
        p.add_argument("--ascii", action="store_true", help="also write ASCII renders")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "plan":
            p.add_argument("--agent", type=int, default=0)
        if name == "render":
            p.add_argument("--result")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    np.seterr(over="ignore")
    try:
        os.makedirs(args.out, exist_ok=True)
        return args.func(args)
    except (ScenarioError, ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
