"""Synthetic population from census-style counts and percentage ranges.

Counts per (age group, location, time of day) are absolute and reproduced
exactly; percentages (disability) are used as probabilities.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Point

from .geo import Environment, Point2D, id_key
from .social import RelationKind, SocialNetwork


class AgeGroup(str, enum.Enum):
    CHILD_0_2 = "Child0_2"
    CHILD_3_14 = "Child3_14"
    ADULT_15_29 = "Adult15_29"
    ADULT_30_59 = "Adult30_59"
    ELDERLY_60P = "Elderly60p"

    @property
    def is_child(self) -> bool:
        return self in (AgeGroup.CHILD_0_2, AgeGroup.CHILD_3_14)

    @property
    def category(self) -> str:
        if self.is_child:
            return "child"
        return "elderly" if self is AgeGroup.ELDERLY_60P else "adult"


class Location(str, enum.Enum):
    HOME = "Home"
    WORK = "Work"
    SCHOOL = "School"
    PUBLIC = "Public"
    OUTDOORS = "Outdoors"


class Role(str, enum.Enum):
    NONE = "None"
    PARENT = "Parent"
    TEACHER = "Teacher"


BUILDING_USE = {Location.HOME: "home", Location.WORK: "work", Location.SCHOOL: "school", Location.PUBLIC: "public"}


class SynthesisError(ValueError):
    pass


@dataclass
class GroupSpec:
    disabled_pct: tuple[float, float]
    speed_cap: float
    counts: dict[Location, tuple[int, int]]

    def __post_init__(self):
        lo, hi = self.disabled_pct
        if not 0 <= lo <= hi <= 100:
            raise ValueError(f"disabled percentage range must satisfy 0 <= lo <= hi <= 100, got {self.disabled_pct}")
        if self.speed_cap < 0:
            raise ValueError("speed cap must be non-negative")
        self.counts = {Location(k): (int(v[0]), int(v[1])) for k, v in self.counts.items()}
        if any(c < 0 for pair in self.counts.values() for c in pair):
            raise ValueError("location counts must be non-negative")

    def count(self, location: Location, time_of_day: str) -> int:
        day, night = self.counts.get(location, (0, 0))
        return day if str(time_of_day).lower() == "day" else night


def _counts(home, work, school, public, outdoors):
    return {Location.HOME: home, Location.WORK: work, Location.SCHOOL: school,
            Location.PUBLIC: public, Location.OUTDOORS: outdoors}


def default_groups() -> dict[AgeGroup, GroupSpec]:
    """Census distribution at initialization, (day, night) per location."""
    return {
        AgeGroup.CHILD_0_2: GroupSpec((0.0, 0.0), 0.0, _counts((75, 83), (0, 0), (0, 0), (0, 0), (8, 0))),
        AgeGroup.CHILD_3_14: GroupSpec((0.0, 0.0), 2.23, _counts((0, 331), (0, 0), (298, 0), (0, 0), (33, 0))),
        AgeGroup.ADULT_15_29: GroupSpec((1.2, 2.8), 3.83, _counts((209, 1842), (547, 0), (902, 0), (0, 0), (184, 0))),
        AgeGroup.ADULT_30_59: GroupSpec((1.3, 12.3), 3.83, _counts((0, 1243), (1119, 0), (0, 0), (0, 0), (124, 0))),
        AgeGroup.ELDERLY_60P: GroupSpec((10.2, 36.1), 1.11, _counts((553, 853), (215, 0), (0, 0), (0, 0), (85, 0))),
    }


@dataclass
class PopulationSpec:
    groups: dict[AgeGroup, GroupSpec] = field(default_factory=default_groups)
    speed_floor_fraction: float = 0.5
    disabled_speed_factor: float = 0.5
    class_size: int = 25
    family_size_weights: tuple[float, ...] = (0.45, 0.40, 0.15)
    second_parent_probability: float = 0.7
    couple_probability: float = 0.5
    use_fallback: dict[str, str] = field(default_factory=dict)

    def total(self, time_of_day: str) -> int:
        return sum(g.count(loc, time_of_day) for g in self.groups.values() for loc in Location)

    def group_total(self, group: AgeGroup, time_of_day: str) -> int:
        return sum(self.groups[group].count(loc, time_of_day) for loc in Location)


@dataclass(eq=False)
class Agent:
    id: int
    age_group: AgeGroup
    disabled: bool
    vmax: float
    location: Location
    role: Role = Role.NONE
    household: int | None = None
    building: object = None
    position: Point2D | None = None
    guardians: list[int] = field(default_factory=list)

    @property
    def category(self) -> str:
        return self.age_group.category


@dataclass
class Household:
    id: int
    members: dict[int, RelationKind]
    home: object


@dataclass
class Population:
    agents: list[Agent]
    network: SocialNetwork
    households: list[Household]
    time_of_day: str = "day"

    def __iter__(self):
        return iter((self.agents, self.network))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def disability_rates(spec: PopulationSpec, rng) -> dict[AgeGroup, float]:
    """One disability probability per group, drawn from its percent range."""
    rates = {}
    for group in AgeGroup:
        lo, hi = spec.groups[group].disabled_pct
        rates[group] = 0.0 if group.is_child else float(rng.uniform(lo, hi)) / 100.0
    return rates


def sample_disability(group: AgeGroup, spec: PopulationSpec, rng, rate: float | None = None) -> bool:
    if AgeGroup(group).is_child:
        return False
    if rate is None:
        lo, hi = spec.groups[group].disabled_pct
        rate = float(rng.uniform(lo, hi)) / 100.0
    return bool(rng.random() < rate)


def sample_max_speed(group: AgeGroup, disabled: bool, spec: PopulationSpec, rng) -> float:
    cap = spec.groups[AgeGroup(group)].speed_cap
    v = float(rng.uniform(spec.speed_floor_fraction * cap, cap)) if cap > 0 else 0.0
    return v * spec.disabled_speed_factor if disabled else v


def _buildings_for(env: Environment, location: Location, spec: PopulationSpec) -> list:
    use = BUILDING_USE[location]
    seen = set()
    while use not in seen:
        found = [b.id for b in env.buildings if b.use == use]
        if found:
            return found
        seen.add(use)
        use = spec.use_fallback.get(use, use)
    return []


def _random_point_in(shape, rng, tries: int = 200) -> Point2D:
    minx, miny, maxx, maxy = shape.bounds
    for _ in range(tries):
        x, y = rng.uniform(minx, maxx), rng.uniform(miny, maxy)
        if shape.contains(Point(x, y)):
            return Point2D(float(x), float(y))
    c = shape.representative_point()
    return Point2D(c.x, c.y)


def random_outdoor_point(env: Environment, rng, tries: int = 500) -> Point2D:
    """Uniform point on the street surface, outside buildings and safe areas."""
    g = env.road_graph
    lengths = np.array([e.length for e in g.edges])
    cum = np.cumsum(lengths) / lengths.sum()
    for _ in range(tries):
        e = g.edges[min(int(np.searchsorted(cum, rng.random(), side="right")), len(g.edges) - 1)]
        a, b = g.nodes[e.a], g.nodes[e.b]
        t = rng.random()
        off = rng.uniform(-e.width / 2, e.width / 2)
        ux, uy = (b.x - a.x) / e.length, (b.y - a.y) / e.length
        p = Point2D(a.x + (b.x - a.x) * t - uy * off, a.y + (b.y - a.y) * t + ux * off)
        if not env.inside_bbox(p):
            continue
        if env.safe_area_at(p) is None and env.building_at(p) is None:
            return p
    raise SynthesisError("could not find an outdoor point off buildings and safe areas")


def _family_sizes(n_children: int, weights, rng) -> list[int]:
    probs = np.asarray(weights, dtype=float)
    probs = probs / probs.sum()
    sizes = []
    left = n_children
    while left > 0:
        s = int(rng.choice(len(probs), p=probs)) + 1
        s = min(s, left)
        sizes.append(s)
        left -= s
    return sizes


def build_households_and_roles(agents: list[Agent], env: Environment, rng, spec: PopulationSpec | None = None):
    """Group agents into households, assign Parent/Teacher roles and guardians.

    Returns ``(households, network)``. Work, school and public agents must
    already carry their building; home buildings are chosen here.
    """
    spec = spec or PopulationSpec()
    rng = _rng(rng)
    network = SocialNetwork()
    homes = _buildings_for(env, Location.HOME, spec)
    if not homes:
        raise SynthesisError("no building with use 'home' (and no fallback mapping)")

    by_id = {a.id: a for a in agents}
    children = [a for a in agents if a.age_group.is_child]
    # keep siblings at the same location kind
    order = rng.permutation(len(children))
    children = sorted((children[i] for i in order), key=lambda a: list(Location).index(a.location))

    def pool(group):
        members = [a for a in agents if a.age_group is group]
        idx = rng.permutation(len(members))
        out = {loc: [] for loc in Location}
        for i in idx:
            out[members[i].location].append(members[i])
        return out

    parents = pool(AgeGroup.ADULT_30_59)
    carers = {g: pool(g) for g in (AgeGroup.ELDERLY_60P, AgeGroup.ADULT_15_29)}
    taken: set[int] = set()

    def take(pools, preferred: list[Location]):
        for loc in preferred:
            while pools[loc]:
                a = pools[loc].pop()
                if a.id not in taken:
                    taken.add(a.id)
                    return a
        return None

    households: list[Household] = []

    def new_household(members: dict[int, RelationKind]):
        hh = Household(len(households), members, homes[int(rng.integers(len(homes)))])
        households.append(hh)
        for aid in members:
            by_id[aid].household = hh.id
            if by_id[aid].location is Location.HOME:
                by_id[aid].building = hh.home
        return hh

    sizes = _family_sizes(len(children), spec.family_size_weights, rng)
    deficit = 0
    start = 0
    for size in sizes:
        kids = children[start:start + size]
        start += size
        loc = kids[0].location
        preference = [loc] + [l for l in (Location.WORK, Location.HOME, Location.OUTDOORS, Location.PUBLIC, Location.SCHOOL) if l != loc]
        first = take(parents, preference)
        if first is None:
            deficit += 1
            continue
        members = {first.id: RelationKind.PARENT}
        first.role = Role.PARENT
        adults = [first]
        if rng.random() < spec.second_parent_probability:
            second = take(parents, [first.location] + [l for l in Location if l != first.location])
            if second is not None:
                second.role = Role.PARENT
                members[second.id] = RelationKind.PARENT
                network.add_link(first.id, second.id, RelationKind.PARTNER)
                adults.append(second)
        for k in kids:
            members[k.id] = RelationKind.CHILD
            for p in adults:
                network.add_link(p.id, k.id, RelationKind.CHILD)
        for i, k in enumerate(kids):
            for k2 in kids[i + 1:]:
                network.add_link(k.id, k2.id, RelationKind.SIBLING)
        # a child away from school needs an adult from the household beside it
        needs_carer = [k for k in kids if k.location is not Location.SCHOOL
                       and not any(p.location is k.location for p in adults)]
        if needs_carer:
            loc = needs_carer[0].location
            carer = take(carers[AgeGroup.ELDERLY_60P], [loc]) or take(carers[AgeGroup.ADULT_15_29], [loc])
            if carer is not None:
                members[carer.id] = RelationKind.KIN
                for other in adults + kids:
                    network.add_link(carer.id, other.id, RelationKind.KIN)
                adults.append(carer)
        for k in kids:
            if k.location is Location.SCHOOL:
                continue
            near = [p.id for p in adults if p.location is k.location]
            k.guardians = near[:1] if near else [adults[0].id]
        new_household(members)
    if deficit:
        raise SynthesisError(f"not enough Adult30_59 agents to parent all children: {deficit} more needed")

    # everyone else: couples within an age group, or singles
    for group in (AgeGroup.ADULT_15_29, AgeGroup.ADULT_30_59, AgeGroup.ELDERLY_60P):
        rest = [a for a in agents if a.age_group is group and a.id not in taken]
        rest = [rest[i] for i in rng.permutation(len(rest))]
        i = 0
        while i < len(rest):
            a = rest[i]
            if i + 1 < len(rest) and rng.random() < spec.couple_probability:
                b = rest[i + 1]
                network.add_link(a.id, b.id, RelationKind.PARTNER)
                new_household({a.id: RelationKind.PARTNER, b.id: RelationKind.PARTNER})
                i += 2
            else:
                new_household({a.id: RelationKind.SELF})
                i += 1
            taken.update(m for m in households[-1].members)

    _assign_teachers(agents, env, rng, spec, network)

    # colleagues share a workplace
    by_building: dict = {}
    for a in agents:
        if a.location is Location.WORK and a.building is not None:
            by_building.setdefault(a.building, []).append(a.id)
    for bid in sorted(by_building, key=id_key):
        ids = sorted(by_building[bid])
        for i, x in enumerate(ids):
            for y in ids[i + 1:]:
                if network.relation(x, y) is None:
                    network.add_link(x, y, RelationKind.COLLEAGUE)
    return households, network


def _assign_teachers(agents, env, rng, spec: PopulationSpec, network: SocialNetwork):
    pupils: dict = {}
    for a in agents:
        if a.age_group.is_child and a.location is Location.SCHOOL:
            pupils.setdefault(a.building, []).append(a)
    if not pupils:
        return
    candidates = [a for a in agents if a.age_group is AgeGroup.ADULT_30_59
                  and a.location is Location.WORK and a.role is Role.NONE]
    candidates = [candidates[i] for i in rng.permutation(len(candidates))]
    for school in sorted(pupils, key=id_key):
        kids = pupils[school]
        need = max(1, math.ceil(len(kids) / spec.class_size))
        if len(candidates) < need:
            raise SynthesisError(f"school {school!r} needs {need} teachers, only {len(candidates)} Adult30_59 workers left")
        teachers = [candidates.pop() for _ in range(need)]
        for t in teachers:
            t.role = Role.TEACHER
            t.building = school
        for k in kids:
            k.guardians = sorted(t.id for t in teachers)
            for t in teachers:
                network.add_link(t.id, k.id, RelationKind.COLLEAGUE)


def synthesize_population(spec: PopulationSpec, time_of_day: str, include_disabled: bool,
                          env: Environment, seed) -> Population:
    rng = _rng(seed)
    time_of_day = str(time_of_day).lower()
    rates = disability_rates(spec, rng)
    agents: list[Agent] = []
    for group in AgeGroup:
        gspec = spec.groups[group]
        for loc in Location:
            for _ in range(gspec.count(loc, time_of_day)):
                disabled = sample_disability(group, spec, rng, rates[group])
                if not include_disabled:
                    disabled = False
                vmax = sample_max_speed(group, disabled, spec, rng)
                agents.append(Agent(len(agents), group, disabled, vmax, loc))

    for loc in (Location.WORK, Location.SCHOOL, Location.PUBLIC):
        located = [a for a in agents if a.location is loc]
        if not located:
            continue
        options = _buildings_for(env, loc, spec)
        if not options:
            raise SynthesisError(f"{len(located)} agents at {loc.value} but no building with use "
                                 f"'{BUILDING_USE[loc]}' and no fallback mapping")
        picks = rng.integers(len(options), size=len(located))
        for a, i in zip(located, picks):
            a.building = options[int(i)]

    households, network = build_households_and_roles(agents, env, rng, spec)

    # adults first so that outdoor children can stand beside their guardian
    for a in sorted(agents, key=lambda a: (a.age_group.is_child, a.id)):
        if a.location is Location.OUTDOORS:
            g = a.guardians[0] if a.guardians else None
            if a.age_group.is_child and g is not None and agents[g].location is Location.OUTDOORS:
                a.position = agents[g].position
            else:
                a.position = random_outdoor_point(env, rng)
        else:
            a.position = _random_point_in(env.building_by_id[a.building].shape, rng)
    return Population(agents, network, households, time_of_day)
