from collections import Counter

import numpy as np
import pytest

from solace.population import (
    AgeGroup,
    Agent,
    GroupSpec,
    Location,
    PopulationSpec,
    Role,
    SynthesisError,
    build_households_and_roles,
    sample_disability,
    sample_max_speed,
    synthesize_population,
)
from solace.social import RelationKind

from conftest import make_env

SPEC = PopulationSpec()
A = AgeGroup


@pytest.fixture(scope="module")
def day(district):
    return synthesize_population(SPEC, "day", True, district, 11)


@pytest.fixture(scope="module")
def night(district):
    return synthesize_population(SPEC, "night", False, district, 11)


def test_day_counts_exact(day):
    got = Counter((a.age_group, a.location) for a in day.agents)
    for group in AgeGroup:
        for loc in Location:
            assert got[(group, loc)] == SPEC.groups[group].count(loc, "day"), (group, loc)
    assert len(day.agents) == 4352 == 83 + 331 + 1842 + 1243 + 853


def test_group_totals_match_across_time_of_day(day, night):
    d = Counter(a.age_group for a in day.agents)
    n = Counter(a.age_group for a in night.agents)
    assert d == n
    assert d[A.CHILD_0_2] == 83 and d[A.ADULT_15_29] == 1842
    assert sum(a.age_group is A.ELDERLY_60P and a.location is Location.WORK for a in day.agents) == 215


def test_speed_caps(day):
    for a in day.agents:
        cap = SPEC.groups[a.age_group].speed_cap
        lo = 0.5 * cap * (0.5 if a.disabled else 1.0)
        hi = cap * (0.5 if a.disabled else 1.0)
        assert lo - 1e-12 <= a.vmax <= hi + 1e-12


def test_no_disabled_children_and_flag_off(day, night):
    assert not any(a.disabled for a in day.agents if a.age_group.is_child)
    assert any(a.disabled for a in day.agents)
    assert not any(a.disabled for a in night.agents)


def test_sample_disability_rates():
    rng = np.random.default_rng(5)
    assert not any(sample_disability(A.CHILD_3_14, SPEC, rng) for _ in range(1000))
    rate = np.mean([sample_disability(A.ELDERLY_60P, SPEC, rng) for _ in range(100_000)])
    assert 0.102 - 0.01 <= rate <= 0.361 + 0.01
    spec = PopulationSpec()
    spec.groups[A.ADULT_15_29] = GroupSpec((0.0, 0.0), 3.83, {})
    assert not any(sample_disability(A.ADULT_15_29, spec, rng) for _ in range(1000))


def test_sample_max_speed_ranges():
    rng = np.random.default_rng(6)
    assert sample_max_speed(A.CHILD_0_2, False, SPEC, rng) == 0
    v = [sample_max_speed(A.ADULT_30_59, False, SPEC, rng) for _ in range(2000)]
    assert 1.915 <= min(v) and max(v) <= 3.83
    v = [sample_max_speed(A.ELDERLY_60P, True, SPEC, rng) for _ in range(2000)]
    assert 0.2775 <= min(v) and max(v) <= 0.555


def test_group_spec_validation():
    with pytest.raises(ValueError):
        GroupSpec((5.0, 1.0), 1.0, {})
    with pytest.raises(ValueError):
        GroupSpec((0.0, 1.0), -1.0, {})
    with pytest.raises(ValueError):
        GroupSpec((0.0, 1.0), 1.0, {"Home": (-1, 0)})


@pytest.mark.parametrize("fixture", ["day", "night"])
def test_no_parentless_children(fixture, request):
    pop = request.getfixturevalue(fixture)
    net = pop.network
    for a in pop.agents:
        if a.age_group.is_child:
            parents = [o for o, k in net.relations_of(a.id) if k is RelationKind.PARENT]
            assert 1 <= len(parents) <= 2
            assert all(pop.agents[p].age_group is A.ADULT_30_59 for p in parents)


def test_households_share_home(day):
    for hh in day.households:
        for aid in hh.members:
            a = day.agents[aid]
            assert a.household == hh.id
            if a.location is Location.HOME:
                assert a.building == hh.home


def test_school_children_have_teachers(day):
    net = day.network
    for a in day.agents:
        if a.location is Location.SCHOOL and a.age_group.is_child:
            assert a.guardians
            for t in a.guardians:
                teacher = day.agents[t]
                assert teacher.role is Role.TEACHER and teacher.building == a.building
                assert net.relation(t, a.id) is RelationKind.COLLEAGUE


def test_network_symmetric(day):
    assert day.network.check_symmetry() == []


def test_determinism(district):
    def dump(pop):
        return [(a.id, a.age_group, a.disabled, a.vmax, a.location, a.role, a.household, a.building,
                 a.position, tuple(a.guardians)) for a in pop.agents], sorted(pop.network.links.items())

    p1 = synthesize_population(SPEC, "day", True, district, 3)
    p2 = synthesize_population(SPEC, "day", True, district, 3)
    p3 = synthesize_population(SPEC, "day", True, district, 4)
    assert dump(p1) == dump(p2)
    assert dump(p1) != dump(p3)


def test_minimal_family():
    env = make_env([[(0, 0), (100, 0)]], safe=[(100, -5, 110, 5)],
                   buildings=[(10, 5, 30, 25, {"use": "home"})])
    agents = [Agent(0, A.CHILD_3_14, False, 2.0, Location.HOME),
              Agent(1, A.ADULT_30_59, False, 3.0, Location.HOME),
              Agent(2, A.ADULT_30_59, False, 3.0, Location.HOME)]
    spec = PopulationSpec(second_parent_probability=1.0)
    households, net = build_households_and_roles(agents, env, np.random.default_rng(0), spec)
    assert len(households) == 1
    assert net.relation(1, 0) is RelationKind.CHILD and net.relation(0, 1) is RelationKind.PARENT
    assert net.relation(2, 0) is RelationKind.CHILD and net.relation(0, 2) is RelationKind.PARENT
    assert net.relation(1, 2) is RelationKind.PARTNER
    assert len({a.building for a in agents}) == 1


def test_parent_deficit_reported():
    env = make_env([[(0, 0), (100, 0)]], safe=[(100, -5, 110, 5)],
                   buildings=[(10, 5, 30, 25, {"use": "home"})])
    agents = [Agent(i, A.CHILD_3_14, False, 2.0, Location.HOME) for i in range(3)]
    spec = PopulationSpec(family_size_weights=(1.0,))
    with pytest.raises(SynthesisError, match="3 more needed"):
        build_households_and_roles(agents, env, np.random.default_rng(0), spec)


def test_missing_school_building_is_synthesis_error():
    env = make_env([[(0, 0), (100, 0)]], safe=[(100, -5, 110, 5)],
                   buildings=[(10, 5, 30, 25, {"use": "home"}), (40, 5, 60, 25, {"use": "work"})])
    with pytest.raises(SynthesisError, match="school"):
        synthesize_population(SPEC, "day", False, env, 1)


def test_use_fallback_mapping():
    env = make_env([[(0, 0), (200, 0)]], safe=[(200, -5, 210, 5)],
                   buildings=[(10, 5, 60, 55, {"use": "home"})])
    groups = {
        A.CHILD_0_2: GroupSpec((0, 0), 0.0, {}),
        A.CHILD_3_14: GroupSpec((0, 0), 2.23, {"School": (2, 0)}),
        A.ADULT_15_29: GroupSpec((0, 0), 3.83, {"Work": (1, 0)}),
        A.ADULT_30_59: GroupSpec((0, 0), 3.83, {"Work": (3, 0)}),
        A.ELDERLY_60P: GroupSpec((0, 0), 1.11, {"Outdoors": (1, 0)}),
    }
    spec = PopulationSpec(groups=groups, use_fallback={"school": "work", "work": "home"})
    pop = synthesize_population(spec, "day", False, env, 2)
    assert len(pop.agents) == 7
    assert any(a.role is Role.TEACHER for a in pop.agents)
    for a in pop.agents:
        if a.location is Location.OUTDOORS:
            assert env.building_at(a.position) is None and env.safe_area_at(a.position) is None
        else:
            assert env.building_at(a.position) is not None
