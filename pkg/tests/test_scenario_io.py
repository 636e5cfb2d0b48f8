import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopvin.coop_optimizer import optimize
from coopvin.errors import ScenarioError
from coopvin.lattice import COMPASS, Pose
from coopvin.policy_executor import backtrace
from coopvin.scenario_io import (BAD_MAP_CELL, GOAL_BLOCKED, MISSING_HORIZON, NOT_RECTANGULAR, OUT_OF_BOUNDS,
                                 START_BLOCKED, UNKNOWN_HEADING, UNKNOWN_KEY, AgentEntry, Scenario, SolverConfig,
                                 colormap, export_plan, export_result, fixture_names, import_result, load_fixture,
                                 one_hot_states, parse_scenario, recompute_collision, render, serialize_scenario)
from coopvin.vi_planner import plan

OPEN = "\n".join(["." * 15] * 5)


def text(header, body=OPEN):
    return header + "\nmap:\n" + body + "\n"


def codes(exc):
    return [d.code for d in exc.value.diagnostics]


def test_parse_basic():
    sc = parse_scenario(text("name: demo\nhorizon: 20\nagent: start=0,0,E goals=14,4,W\n"
                             "agent: start=14,0,w goals=0,4,any"))
    assert (sc.width, sc.height, sc.horizon) == (15, 5, 20)
    assert len(sc.agents) == 2
    assert sc.start_pose(1) == Pose(14, 0, 4)
    assert len(sc.goal_poses(1)) == 8
    assert sc.static_cost().shape == (15, 5)


def test_ragged_rows():
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text("horizon: 5\nagent: start=0,0,E goals=3,0,E", "....\n...\n...."))
    assert codes(err) == [NOT_RECTANGULAR]
    assert err.value.diagnostics[0].line == 5


def test_start_on_obstacle():
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text("horizon: 5\nagent: start=0,0,E goals=3,0,E", "#...\n....\n...."))
    assert codes(err) == [START_BLOCKED]


def test_every_violation_listed():
    bad = "name: x\ncolour: red\nagent: start=0,0,UP goals=3,0,E;1,0,E;9,9,E\nmap:\n.#x.\n....\n"
    with pytest.raises(ScenarioError) as err:
        parse_scenario(bad)
    found = set(codes(err))
    assert {UNKNOWN_KEY, UNKNOWN_HEADING, GOAL_BLOCKED, OUT_OF_BOUNDS, BAD_MAP_CELL, MISSING_HORIZON} <= found
    assert "line 2" in str(err.value)


def test_heading_not_representable():
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text("horizon: 5\norientations: 4\nagent: start=0,0,NE goals=3,0,E"))
    assert codes(err) == [UNKNOWN_HEADING]


def test_fixtures_parse():
    assert set(fixture_names()) == {"turnaround", "narrowing", "non_interference", "passing_place",
                                    "unreachable_pocket"}
    for name in fixture_names():
        sc = load_fixture(name)
        assert (sc.width, sc.height, sc.orientations) == (15, 5, 8)


rows_st = st.integers(2, 6).flatmap(lambda w: st.lists(
    st.text(alphabet=".#", min_size=w, max_size=w), min_size=2, max_size=4))


@settings(max_examples=40, deadline=None)
@given(rows_st, st.data())
def test_serialize_round_trip(rows, data):
    rows = ["." + r[1:] for r in rows]
    free = [(0, y) for y in range(len(rows))]
    label = st.sampled_from(COMPASS)
    agents = []
    for _ in range(data.draw(st.integers(1, 3))):
        x, y = data.draw(st.sampled_from(free))
        goals = tuple((gx, gy, data.draw(st.sampled_from(COMPASS + ("any",))))
                      for gx, gy in data.draw(st.lists(st.sampled_from(free), min_size=1, max_size=3)))
        agents.append(AgentEntry((x, y, data.draw(label)), goals))
    solver = SolverConfig(tau=data.draw(st.floats(0.01, 5)), eta=data.draw(st.floats(0.01, 5)),
                          max_iters=data.draw(st.integers(1, 500)), mode=data.draw(st.sampled_from(["soft", "exact"])))
    sc = Scenario("rt", rows, agents, data.draw(st.integers(1, 40)), 8, solver)
    assert parse_scenario(serialize_scenario(sc)) == sc


# rendering

def test_colormap_distinct_blue_to_red():
    cm = colormap(20)
    assert cm.shape == (21, 3)
    assert len({tuple(c) for c in cm}) == 21
    assert tuple(cm[0]) == (0, 0, 255) and tuple(cm[-1]) == (255, 0, 0)


def test_render_all_wait(model8):
    rows = ["." * 6] * 3
    vol = plan(Pose(2, 1, 0), [Pose(2, 1, 0)], np.zeros((6, 3)), model8, 7)
    frame = render(backtrace(vol), rows, cell=2)
    assert (frame.last_time >= 0).sum() == 1
    assert frame.last_time[2, 1] == 7
    assert tuple(frame.pixels[2, 4]) == tuple(colormap(7)[7])


def test_render_straight_run(model8):
    rows = ["." * 15] * 5
    vol = plan(Pose(1, 2, 0), [Pose(13, 2, 0)], np.zeros((15, 5)), model8, 12)
    frame = render(backtrace(vol), rows)
    path = [frame.last_time[x, 2] for x in range(1, 14)]
    assert (frame.last_time >= 0).sum() == 13
    assert path == list(range(13))
    assert np.all(frame.alpha[frame.last_time >= 0] == 1.0)


def test_render_soft_alpha_and_threshold(model8):
    rows = ["." * 8] * 5
    vol = plan(Pose(0, 2, 0), [Pose(7, 2, k) for k in range(8)], np.zeros((8, 5)), model8, 9, mode="soft", tau=1.0)
    tr = backtrace(vol)
    frame = render(tr, rows)
    seen = frame.last_time >= 0
    assert np.all(frame.alpha[seen] > 0.01) and np.all(frame.alpha[seen] <= 1.0)


def test_ppm_and_ascii(model8):
    rows = ["..#", "..."]
    frame = render(one_hot_states([Pose(0, 0, 0), Pose(1, 1, 7)], (3, 2, 8)), rows, cell=1)
    ppm = frame.to_ppm()
    assert ppm.startswith(b"P6\n3 2\n255\n") and len(ppm) == len(b"P6\n3 2\n255\n") + 18
    assert ppm[len(b"P6\n3 2\n255\n") + 6:][:3] == b"\x00\x00\x00"
    assert frame.to_ascii() == "0.#\n.1.\n"
    assert render(one_hot_states([Pose(0, 0, 0), Pose(1, 1, 7)], (3, 2, 8)), rows, cell=1).to_ppm() == ppm


# result documents

@pytest.fixture(scope="module")
def coop_doc():
    sc = load_fixture("non_interference")
    result = optimize(sc.coop_problem())
    return sc, result, export_result(result, sc)


def test_export_round_trip(coop_doc):
    sc, result, doc_text = coop_doc
    doc = import_result(doc_text)
    assert [a["poses"] for a in doc["agents"]] == [tr.poses for tr in result.trajectories]
    assert doc["collision_loss"] == recompute_collision(doc)
    assert len(doc["trace"]) <= doc["parameters"]["max_iters"]
    assert doc["parameters"]["lambda_coll"] == 100.0
    assert sum(doc["agents"][0]["step_costs"]) == pytest.approx(result.costs[0])


def test_export_is_deterministic(coop_doc):
    sc, result, doc_text = coop_doc
    assert export_result(result, sc) == doc_text
    json.loads(doc_text)


def test_export_plan(model8):
    sc = load_fixture("turnaround")
    vol = plan(sc.start_pose(0), sc.goal_poses(0), sc.static_cost(), sc.model(), sc.horizon)
    doc = import_result(export_plan(backtrace(vol), sc))
    assert doc["agents"][0]["poses"][0] == sc.start_pose(0)
    assert doc["agents"][0]["headings"][-1] == "W"
