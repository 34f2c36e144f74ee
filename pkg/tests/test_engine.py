import copy
import math

import numpy as np
import pytest

from solace import engine
from solace.behavior import BehaviorRule, PreEvacBehavior, StateKind as S, is_legal
from solace.engine import (
    CSV_HEADER,
    STANDARD_SCENARIOS,
    ModelParams,
    RunError,
    Scenario,
    SimConfig,
    Simulation,
    batch_run,
    rng_streams,
)
from solace.population import AgeGroup as A, Agent, Location, Population, Role
from solace.social import RelationKind as R, SocialNetwork

from conftest import make_env

NO_DELAY = {b: BehaviorRule(0.0) for b in PreEvacBehavior}


def hand_population(monkeypatch, agents, network=None):
    """Make the engine use ``agents`` instead of synthesizing."""
    pop = Population(agents, network or SocialNetwork(), [], "day")
    monkeypatch.setattr(engine, "synthesize_population", lambda *a, **k: pop)
    return pop


def corridor():
    return make_env([[(0, 0), (50, 0)], [(50, 0), (100, 0)]], safe=[(100, -10, 120, 10)])


def sim(env, config=SimConfig(horizon=200), **params):
    params.setdefault("behaviors", NO_DELAY)
    return Simulation(Scenario("T"), env, config, ModelParams(**params), seed=1)


def test_scenarios_and_config_validation():
    assert STANDARD_SCENARIOS["S2"].time_of_day == "night" and STANDARD_SCENARIOS["S4"].intensity == 8
    assert STANDARD_SCENARIOS["S3"].include_disabled
    with pytest.raises(ValueError):
        Scenario("x", intensity=13)
    with pytest.raises(ValueError):
        Scenario("x", time_of_day="dusk")
    with pytest.raises(ValueError):
        SimConfig(dt=0)
    with pytest.raises(ValueError):
        SimConfig(dt=3, horizon=10)


def test_named_streams_are_independent():
    a, b = rng_streams(5), rng_streams(5)
    assert a["population"].random() == b["population"].random()
    assert rng_streams(5)["population"].random() != rng_streams(5)["damage"].random()


def test_all_start_safe(monkeypatch):
    agents = [Agent(i, A.ADULT_30_59, False, 3.0, Location.OUTDOORS, position=(105.0 + i, 0.0)) for i in range(4)]
    hand_population(monkeypatch, agents)
    s = sim(corridor())
    s.step()
    f = s.record_frame()
    assert f.t == 1.0
    assert f.fraction("all") == 1.0 and f.fraction("adult") == 1.0


def test_all_start_safe_below_felt_threshold(monkeypatch):
    agents = [Agent(i, A.ELDERLY_60P, False, 1.0, Location.OUTDOORS, position=(110.0, i - 2.0)) for i in range(4)]
    hand_population(monkeypatch, agents)
    s = Simulation(Scenario("calm", intensity=3), corridor(), SimConfig(horizon=5), ModelParams(), seed=1)
    assert all(m.state is S.NORMAL for m in s.minds)
    res = s.run()
    assert res.frames[1].t == 1.0 and res.frames[1].fraction("all") == 1.0
    assert res.final.tally_sum() == 4


def test_record_frame_hand_count(monkeypatch):
    agents = [
        Agent(0, A.ADULT_30_59, False, 3.0, Location.OUTDOORS, position=(105.0, 0.0)),
        Agent(1, A.ADULT_30_59, False, 3.0, Location.OUTDOORS, position=(106.0, 0.0)),
        Agent(2, A.ADULT_30_59, False, 3.0, Location.OUTDOORS, position=(10.0, 0.0)),
        Agent(3, A.ELDERLY_60P, True, 0.5, Location.OUTDOORS, position=(107.0, 0.0)),
    ]
    hand_population(monkeypatch, agents)
    s = sim(corridor())
    f0 = s.record_frame()
    assert all(f0.fraction(c) == 0 for c in engine.CATEGORIES)
    s.step()
    f = s.record_frame()
    assert f.arrived["adult"] == 2 and f.fraction("adult") == pytest.approx(2 / 3)
    assert f.fraction("disabled") == 1.0 and f.fraction("elderly") == 1.0
    assert f.fraction("child") == 0.0 and f.totals["child"] == 0
    assert f.fraction("all") == 0.75
    assert f.tally_sum() == 4


def test_single_evacuator_displacement(monkeypatch):
    agents = [Agent(0, A.ADULT_30_59, False, 2.0, Location.OUTDOORS, position=(0.0, 0.0))]
    hand_population(monkeypatch, agents)
    s = sim(corridor())
    s.step()
    end = s.paths[0][0][-1]
    assert s.pos[0][0] == pytest.approx(2.0)
    prev = s.pos[0].copy()
    while s.minds[0].state is not S.ARRIVED:
        s.step()
        remaining = math.dist(prev, end)
        assert s.pos[0][0] - prev[0] == pytest.approx(min(2.0, remaining), abs=1e-9)
        assert abs(s.pos[0][1]) < 1e-12
        prev = s.pos[0].copy()
    assert s.env.safe_area_at(tuple(prev)) is not None
    assert s.arrival_time[0] == math.ceil(end[0] / 2.0)


def test_only_route_blocked_traps(monkeypatch):
    agents = [Agent(0, A.ADULT_30_59, False, 2.0, Location.OUTDOORS, position=(0.0, 0.0))]
    hand_population(monkeypatch, agents)
    s = sim(corridor())
    for _ in range(5):
        s.step()
    assert s.minds[0].state is S.EVACUATING
    s.env.road_graph.block([1])
    s.step()
    assert s.minds[0].state is S.TRAPPED
    assert any(e == "trapped" for _, aid, e, _ in s.trace if aid == 0)
    f = s.record_frame()
    assert f.trapped == 1 and f.tally_sum() == 1


def test_fixed_point_when_all_arrived(monkeypatch):
    agents = [Agent(i, A.ADULT_15_29, False, 3.0, Location.OUTDOORS, position=(104.0 + i, 1.0)) for i in range(3)]
    hand_population(monkeypatch, agents)
    s = sim(corridor())
    s.step()
    assert s.arrived.all()
    before = (s.pos.copy(), s.state_code.copy(), len(s.trace), s.record_frame())
    s.step()
    after = s.record_frame()
    assert np.array_equal(before[0], s.pos) and np.array_equal(before[1], s.state_code)
    assert len(s.trace) == before[2]
    assert after.t == before[3].t + 1
    assert (after.arrived, after.trapped, after.enroute) == (before[3].arrived, before[3].trapped, before[3].enroute)


def school_env():
    # school building beside a street that leads to the safe area
    return make_env([[(0, 0), (60, 0)], [(60, 0), (200, 0)]], safe=[(200, -10, 220, 10)],
                    buildings=[(0, 6, 30, 30, {"id": "sch", "use": "school"})])


def school_population(monkeypatch):
    net = SocialNetwork()
    teacher = Agent(0, A.ADULT_30_59, False, 3.0, Location.SCHOOL, role=Role.TEACHER,
                    building="sch", position=(15.0, 18.0))
    kids = [Agent(i, A.CHILD_3_14, False, 2.0, Location.SCHOOL, building="sch",
                  position=(8.0 + 6 * i, 12.0), guardians=[0]) for i in (1, 2, 3)]
    for k in kids:
        net.add_link(0, k.id, R.COLLEAGUE)
    hand_population(monkeypatch, [teacher] + kids, net)


def test_teacher_groups_children_first(monkeypatch):
    school_population(monkeypatch)
    s = sim(school_env(), SimConfig(horizon=400))
    res = s.run()
    follow_t = [t for t, aid, e, d in res.trace if e == "follow" and aid in (1, 2, 3)]
    assert len(follow_t) == 3
    leaving = [t for t, aid, e, d in res.trace if aid == 0 and e == "state" and d.endswith("->Leading")]
    assert leaving and max(follow_t) <= leaving[0]
    assert res.final.fraction("all") == 1.0
    grouped = res.arrival_time[0]

    school_population(monkeypatch)
    alone = sim(school_env(), SimConfig(horizon=400), grouping=False).run()
    assert alone.arrival_time[0] < grouped


def test_illegal_transition_raises(monkeypatch):
    agents = [Agent(0, A.ADULT_30_59, False, 2.0, Location.OUTDOORS, position=(0.0, 0.0))]
    hand_population(monkeypatch, agents)
    s = sim(corridor())
    with pytest.raises(RunError, match="illegal transition"):
        s._set_state(0, S.ARRIVED)  # PreEvacuating -> Arrived is fine, Arrived -> Evacuating is not
        s._set_state(0, S.EVACUATING)


# -- bundled district ---------------------------------------------------------

SHORT = SimConfig(horizon=150)


@pytest.fixture(scope="module")
def stepped(district):
    """S1 stepped by hand, keeping every position array."""
    s = Simulation(STANDARD_SCENARIOS["S1"], district, SHORT, seed=2)
    positions = [s.pos.copy()]
    frames = []
    for _ in range(SHORT.n_ticks):
        s.step()
        positions.append(s.pos.copy())
        frames.append(s.record_frame())
    return s, positions, frames


def test_no_teleport(stepped):
    s, positions, _ = stepped
    bound = s.vmax * s.config.dt + 1e-9
    carried = s.vmax == 0
    assert carried.any()
    for before, after in zip(positions, positions[1:]):
        step = np.hypot(*(after - before).T)
        bad = (step > bound) & ~carried
        assert not bad.any(), np.flatnonzero(bad)[:5]


def test_carried_infants_stay_with_carrier(stepped):
    s, _, _ = stepped
    idx = np.flatnonzero(s.carrier >= 0)
    assert idx.size
    assert np.array_equal(s.pos[idx], s.pos[s.carrier[idx]])


def test_conservation_and_monotone(stepped):
    s, _, frames = stepped
    n = s.n
    prev = None
    for f in frames:
        assert f.tally_sum() == n
        if prev is not None:
            assert all(f.arrived[c] >= prev.arrived[c] for c in engine.CATEGORIES)
        prev = f


def test_trace_transitions_legal(stepped):
    s, _, _ = stepped
    for _, _, event, detail in s.trace:
        if event == "state":
            a, b = detail.split("->")
            assert is_legal(S(a), S(b)), detail


def test_arrived_inside_safe_area(stepped):
    s, _, _ = stepped
    for aid in np.flatnonzero(s.state_code == list(S).index(S.ARRIVED)):
        assert s.env.safe_area_at(tuple(s.pos[aid])) is not None


def test_step_purity(district):
    a = Simulation(STANDARD_SCENARIOS["S1"], district, SHORT, seed=4)
    for _ in range(20):
        a.step()
    b = copy.deepcopy(a)
    a.step()
    b.step()
    assert np.array_equal(a.pos, b.pos)
    assert np.array_equal(a.state_code, b.state_code)
    assert a.trace == b.trace


def test_run_is_deterministic_and_horizon_exact(district):
    r1 = engine.run(STANDARD_SCENARIOS["S1"], district, SHORT, seed=9)
    r2 = engine.run(STANDARD_SCENARIOS["S1"], district, SHORT, seed=9)
    assert r1.csv_text() == r2.csv_text()
    assert r1.trace_csv_text() == r2.trace_csv_text()
    assert len(r1.frames) == SHORT.n_ticks + 1
    lines = r1.csv_text().splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 152
    assert lines[-1].split(",")[0] == "150"


def test_cadence(district):
    r = engine.run(STANDARD_SCENARIOS["S1"], district, SimConfig(horizon=20, cadence=7), seed=1)
    assert [f.t for f in r.frames] == [0, 7, 14, 20]


def test_s4_blocks_superset_of_s1(district):
    for seed in (1, 2, 3):
        s1 = Simulation(STANDARD_SCENARIOS["S1"], district, SHORT, seed=seed)
        s4 = Simulation(STANDARD_SCENARIOS["S4"], district, SHORT, seed=seed)
        assert s1.env.road_graph.blocked <= s4.env.road_graph.blocked
    # the shared environment is never touched
    assert not district.road_graph.blocked


def test_egoistic_has_no_social_events(district):
    sc = Scenario("ego", profile="egoistic")
    r = engine.run(sc, district, SHORT, seed=3)
    social = {"perceive", "seek", "follow", "group"}
    assert not [row for row in r.trace if row[2] in social]
    assert not [row for row in r.trace if row[2] == "state"
                and row[3].split("->")[1] in ("Seeking", "Leading", "Following")]


def test_batch_single_run_summary(district):
    b = batch_run([STANDARD_SCENARIOS["S1"]], [1], district, SimConfig(horizon=30), workers=1)
    final = b.results[0].final
    for row in b.summary:
        assert row.n == 1 and row.sd == 0
        assert row.mean_final_frac == final.fraction(row.category)


def test_batch_duplicate_scenarios_identical(district):
    sc = STANDARD_SCENARIOS["S2"]
    b = batch_run([sc, sc], [1, 2], district, SimConfig(horizon=30), workers=1)
    first, second = b.results[:2], b.results[2:]
    assert [r.csv_text() for r in first] == [r.csv_text() for r in second]


def test_batch_parallel_matches_serial(district):
    scs = [STANDARD_SCENARIOS["S1"], STANDARD_SCENARIOS["S4"]]
    serial = batch_run(scs, [1, 2], district, SimConfig(horizon=20), workers=1)
    par = batch_run(scs, [1, 2], district, SimConfig(horizon=20), workers=2)
    assert [r.csv_text() for r in serial.results] == [r.csv_text() for r in par.results]
    assert [(r.scenario, r.seed) for r in par.results] == [("S1", 1), ("S1", 2), ("S4", 1), ("S4", 2)]


def test_batch_failure_names_pair(district, monkeypatch):
    def boom(*a, **k):
        raise ValueError("bad")

    monkeypatch.setattr(engine, "synthesize_population", boom)
    with pytest.raises(RunError, match="scenario S1 seed 7"):
        batch_run([STANDARD_SCENARIOS["S1"]], [7], district, SimConfig(horizon=5), workers=1)
    with pytest.raises(ValueError):
        batch_run([], [1], district)


def test_threads_env(monkeypatch):
    monkeypatch.setenv("SOLACE_THREADS", "3")
    assert engine.default_workers() == 3
