"""BDI-lite decision layer.

Beliefs are revised from percepts, desires are generated from beliefs with
unique priorities, the highest-priority desire becomes the intention and a
plan from a fixed library (Evacuate, Seek, Group, Follow, Stay) executes it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .social import RelationKind, relation_ranks

QUAKE_FELT_THRESHOLD = 5
STALE_AFTER = 120.0
CHILD_WAIT = 600.0
APPROACH_STRAIGHT = 25.0


class PreEvacBehavior(str, enum.Enum):
    SEEK_FAMILY = "SeekFamily"
    MILLING = "Milling"
    HERDING = "Herding"
    PROTECT_PROPERTY = "ProtectProperty"
    SEEK_PETS = "SeekPets"
    HELP_OTHERS = "HelpOthers"


@dataclass(frozen=True)
class BehaviorRule:
    probability: float
    min_duration: float = 0.0
    max_duration: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must be in [0, 1], got {self.probability}")
        if not 0.0 <= self.min_duration <= self.max_duration:
            raise ValueError("durations must satisfy 0 <= min <= max")


B = PreEvacBehavior

# assumptions, not survey data
DEFAULT_BEHAVIORS: dict[PreEvacBehavior, BehaviorRule] = {
    B.SEEK_FAMILY: BehaviorRule(0.4, 0.0, 0.0),
    B.MILLING: BehaviorRule(0.5, 10.0, 60.0),
    B.HERDING: BehaviorRule(0.3, 5.0, 30.0),
    B.PROTECT_PROPERTY: BehaviorRule(0.2, 20.0, 90.0),
    B.SEEK_PETS: BehaviorRule(0.1, 15.0, 60.0),
    B.HELP_OTHERS: BehaviorRule(0.15, 10.0, 60.0),
}


def behavior_table(overrides: Mapping | None = None) -> dict[PreEvacBehavior, BehaviorRule]:
    table = dict(DEFAULT_BEHAVIORS)
    for key, value in (overrides or {}).items():
        if isinstance(value, BehaviorRule):
            table[PreEvacBehavior(key)] = value
        elif isinstance(value, Mapping):
            dur = value.get("duration", (value.get("min_duration", 0.0), value.get("max_duration", 0.0)))
            table[PreEvacBehavior(key)] = BehaviorRule(float(value["probability"]), float(dur[0]), float(dur[1]))
        else:
            p, lo, hi = value
            table[PreEvacBehavior(key)] = BehaviorRule(float(p), float(lo), float(hi))
    return table


@dataclass
class PreEvacPlan:
    behaviors: list[tuple[PreEvacBehavior, float]]
    delay: float

    @property
    def seeks_family(self) -> bool:
        return any(b is B.SEEK_FAMILY for b, _ in self.behaviors)


def choose_pre_evacuation(kin_missing: bool, table: Mapping | None, rng: np.random.Generator) -> PreEvacPlan:
    """Include each behavior independently and sum the sampled durations.

    Two uniforms are consumed per behavior whatever the outcome, so one
    agent's choices never shift another agent's draws.
    """
    table = DEFAULT_BEHAVIORS if table is None else table
    chosen, delay = [], 0.0
    for behavior in PreEvacBehavior:
        rule = table.get(behavior)
        u_in, u_dur = rng.random(), rng.random()
        if rule is None:
            continue
        if behavior is B.SEEK_FAMILY and not kin_missing:
            continue
        if u_in < rule.probability:
            duration = rule.min_duration + (rule.max_duration - rule.min_duration) * u_dur
            chosen.append((behavior, duration))
            delay += duration
    return PreEvacPlan(chosen, delay)


# --- beliefs ---------------------------------------------------------------

SELF = "self"

_FAMILY = {"safe": "safety", "unsafe": "safety", "location-known": "whereabouts", "missing": "whereabouts"}


@dataclass(frozen=True)
class Belief:
    subject: object
    predicate: str
    timestamp: float
    location: tuple[float, float] | None = None

    @property
    def family(self) -> str:
        return _FAMILY[self.predicate]


class BeliefSet(dict):
    """At most one belief per (subject, predicate family)."""

    def add(self, belief: Belief):
        self[(belief.subject, belief.family)] = belief

    def get_pred(self, subject, family):
        b = self.get((subject, family))
        return None if b is None else b.predicate

    def holds(self, subject, predicate) -> bool:
        b = self.get((subject, _FAMILY[predicate]))
        return b is not None and b.predicate == predicate


def revise_beliefs(beliefs: BeliefSet, percepts, t: float, *, quake_felt: bool = False,
                   level: int | None = None, threshold: int = QUAKE_FELT_THRESHOLD,
                   in_safe_area: bool = False, positions: Mapping | None = None,
                   expected_here=()) -> BeliefSet:
    """Update ``beliefs`` in place from this tick's observations.

    ``percepts`` are :class:`~solace.social.Percept` objects and ``positions``
    maps perceived ids to where they were seen. ``expected_here`` lists
    household members the agent expects at its own location; any of them not
    perceived becomes ``missing``.
    """
    if quake_felt and level is not None and level >= threshold:
        beliefs.add(Belief(SELF, "unsafe", t))
    if in_safe_area:
        beliefs.add(Belief(SELF, "safe", t))
    seen = set()
    for p in percepts:
        seen.add(p.agent_id)
        loc = None if positions is None else tuple(positions[p.agent_id])
        beliefs.add(Belief(p.agent_id, "location-known", t, loc))
    for kin in expected_here:
        if kin not in seen:
            prior = beliefs.get((kin, "whereabouts"))
            beliefs.add(Belief(kin, "missing", t, None if prior is None else prior.location))
    return beliefs


# --- desires and intentions -----------------------------------------------


class DesireKind(str, enum.Enum):
    BE_SAFE = "BeSafe"
    KIN_SAFE = "KinSafe"
    STAY_SAFE = "StaySafe"


@dataclass(frozen=True)
class Desire:
    kind: DesireKind
    priority: int
    target: int | None = None


class Plan(str, enum.Enum):
    EVACUATE = "Evacuate"
    SEEK = "Seek"
    GROUP = "Group"
    FOLLOW = "Follow"
    STAY = "Stay"


@dataclass(frozen=True)
class Intention:
    desire: Desire
    plan: Plan

    @property
    def target(self):
        return self.desire.target


def generate_desires(beliefs: BeliefSet, kin: Mapping[int, RelationKind], *, responsible: set | frozenset = frozenset(),
                     seeking: set | frozenset = frozenset(), table: Mapping | None = None) -> list[Desire]:
    """Desires with unique priorities (1 = highest).

    Kin desires come first, ordered by relation priority, for members the
    agent is responsible for, has chosen to seek, or (children) believes
    missing, unless believed safe. Being safe, or staying safe once
    arrived, comes after.
    """
    ranks = relation_ranks(table) if table is not None else relation_ranks()
    wanted = []
    for aid, kind in kin.items():
        if beliefs.holds(aid, "safe"):
            continue
        if aid in responsible or aid in seeking:
            wanted.append((ranks[RelationKind(kind)], aid))
        elif RelationKind(kind) is RelationKind.CHILD and beliefs.holds(aid, "missing"):
            wanted.append((ranks[RelationKind(kind)], aid))
    desires = [Desire(DesireKind.KIN_SAFE, i + 1, aid) for i, (_, aid) in enumerate(sorted(wanted))]
    n = len(desires)
    if beliefs.holds(SELF, "safe"):
        desires.append(Desire(DesireKind.STAY_SAFE, n + 1))
    elif beliefs.holds(SELF, "unsafe"):
        desires.append(Desire(DesireKind.BE_SAFE, n + 1))
    return desires


def select_intention(beliefs: BeliefSet, desires, *, teacher: bool = False, dependent: bool = False) -> Intention | None:
    """Adopt the highest-priority desire and the first applicable plan.

    Teachers satisfy kin desires with Group, dependents (children waiting for
    a guardian) with Follow.
    """
    if not desires:
        return None
    top = min(desires, key=lambda d: d.priority)
    if top.kind is DesireKind.KIN_SAFE:
        return Intention(top, Plan.GROUP if teacher else Plan.SEEK)
    if top.kind is DesireKind.STAY_SAFE:
        return Intention(top, Plan.STAY)
    if dependent:
        return Intention(top, Plan.FOLLOW)
    return Intention(top, Plan.EVACUATE)


# --- agent state machine ---------------------------------------------------


class StateKind(str, enum.Enum):
    NORMAL = "Normal"
    PRE_EVACUATING = "PreEvacuating"
    EVACUATING = "Evacuating"
    SEEKING = "Seeking"
    LEADING = "Leading"
    FOLLOWING = "Following"
    ARRIVED = "Arrived"
    TRAPPED = "Trapped"


S = StateKind

LEGAL_TRANSITIONS = {
    (S.NORMAL, S.PRE_EVACUATING),
    (S.NORMAL, S.ARRIVED),
    (S.PRE_EVACUATING, S.EVACUATING),
    (S.PRE_EVACUATING, S.SEEKING),
    (S.PRE_EVACUATING, S.FOLLOWING),
    (S.PRE_EVACUATING, S.ARRIVED),
    (S.SEEKING, S.EVACUATING),
    (S.SEEKING, S.LEADING),
    (S.SEEKING, S.FOLLOWING),
    (S.SEEKING, S.TRAPPED),
    (S.EVACUATING, S.SEEKING),
    (S.EVACUATING, S.FOLLOWING),
    (S.EVACUATING, S.ARRIVED),
    (S.EVACUATING, S.TRAPPED),
    (S.LEADING, S.ARRIVED),
    (S.LEADING, S.TRAPPED),
    (S.LEADING, S.SEEKING),
    (S.FOLLOWING, S.ARRIVED),
    (S.FOLLOWING, S.TRAPPED),
    (S.ARRIVED, S.SEEKING),
}


def is_legal(src: StateKind, dst: StateKind) -> bool:
    return (StateKind(src), StateKind(dst)) in LEGAL_TRANSITIONS


@dataclass(eq=False)
class Mind:
    """Per-agent BDI state kept by the engine."""

    state: StateKind = S.NORMAL
    beliefs: BeliefSet = field(default_factory=BeliefSet)
    kin: dict[int, RelationKind] = field(default_factory=dict)
    responsible: set[int] = field(default_factory=set)
    seeking: set[int] = field(default_factory=set)
    expected: dict[int, tuple] = field(default_factory=dict)
    expected_building: dict[int, object] = field(default_factory=dict)
    teacher: bool = False
    dependent: bool = False
    pre_end: float = 0.0
    pre_plan: PreEvacPlan | None = None
    intention: Intention | None = None
    target: int | None = None
    phase: str = ""
    waypoints: list = field(default_factory=list)
    settled: set[int] = field(default_factory=set)
    leader: int | None = None
    followers: list[int] = field(default_factory=list)
    area: object = None
    ever_arrived: bool = False
    returns_left: int = 0
    seen: set[int] = field(default_factory=set)


# --- actions ----------------------------------------------------------------


@dataclass
class Action:
    """What one agent does this tick; applied by the engine in id order."""

    kind: str  # "wait" | "move" | "adopt" | "evacuate" | "transition"
    path: list | None = None
    target: int | None = None
    state: StateKind | None = None
    events: list[tuple[str, str]] = field(default_factory=list)
    intention: Intention | None = None
    phase: str = ""
    waypoints: list | None = None


WAIT = "wait"
MOVE = "move"
ADOPT = "adopt"
EVACUATE = "evacuate"
TRANSITION = "transition"


def believed_location(mind: Mind, target: int, t: float):
    """Last seen position while fresh, otherwise the scenario-initial one."""
    b = mind.beliefs.get((target, "whereabouts"))
    if b is not None and b.predicate == "location-known" and b.location is not None and t - b.timestamp <= STALE_AFTER:
        return b.location
    return mind.expected.get(target)


def search_waypoints(shape, start, spacing: float) -> list[tuple[float, float]]:
    """Grid of points covering ``shape`` so that every interior point lies
    within ``spacing / sqrt(2)`` of one of them, visited nearest-first."""
    from shapely.geometry import Point

    spacing = max(spacing, 0.5)
    minx, miny, maxx, maxy = shape.bounds
    nx_ = max(1, math.ceil((maxx - minx) / spacing))
    ny_ = max(1, math.ceil((maxy - miny) / spacing))
    sx, sy = (maxx - minx) / nx_, (maxy - miny) / ny_
    pts = []
    for i in range(nx_):
        for j in range(ny_):
            p = (minx + (i + 0.5) * sx, miny + (j + 0.5) * sy)
            if shape.intersects(Point(p).buffer(max(sx, sy) / 2, quad_segs=2)):
                pts.append(p)
    ordered, here = [], tuple(start)
    while pts:
        k = min(range(len(pts)), key=lambda i: (math.dist(here, pts[i]), pts[i]))
        here = pts.pop(k)
        ordered.append(here)
    return ordered


def next_action(aid: int, world, dt: float) -> Action:
    """Decide one agent's action from the frozen snapshot in ``world``.

    ``world`` is the engine's read view (positions, minds, agents, env,
    parameters). The returned action is applied later in ascending id order.
    """
    mind = world.minds[aid]
    t = world.t
    state = mind.state
    if state in (S.ARRIVED, S.TRAPPED, S.NORMAL, S.FOLLOWING):
        if state is S.ARRIVED:
            return _arrived_check(aid, mind, world)
        return Action(WAIT)

    if state is S.PRE_EVACUATING:
        if t < mind.pre_end:
            return Action(WAIT)
        return _deliberate(aid, mind, world)

    if state in (S.SEEKING,):
        return _seek_step(aid, mind, world, dt)

    # Evacuating / Leading only reach here when their path ended without arrival
    return Action(EVACUATE)


def _deliberate(aid, mind: Mind, world) -> Action:
    kin = {k: v for k, v in mind.kin.items() if k not in mind.settled}
    desires = generate_desires(mind.beliefs, kin, responsible=mind.responsible - mind.settled,
                               seeking=mind.seeking - mind.settled, table=world.bonds)
    if mind.dependent and not mind.responsible:
        # a waiting child whose wait is over walks off alone
        intention = select_intention(mind.beliefs, desires)
    else:
        intention = select_intention(mind.beliefs, desires, teacher=mind.teacher)
    if intention is None:
        return Action(WAIT)
    if intention.plan is Plan.EVACUATE:
        return Action(EVACUATE, intention=intention)
    if intention.plan is Plan.STAY:
        return Action(WAIT, intention=intention)
    if intention.plan is Plan.GROUP:
        return Action(TRANSITION, state=S.SEEKING, intention=intention, phase="group",
                      events=[("group", str(len(mind.responsible - mind.settled)))])
    return Action(TRANSITION, state=S.SEEKING, intention=intention, target=intention.target,
                  phase="travel", events=[("seek", str(intention.target))])


def _next_goal(aid, mind: Mind, world) -> Action:
    """After collecting or abandoning someone: seek the next one or leave."""
    kin = {k: v for k, v in mind.kin.items() if k not in mind.settled}
    desires = generate_desires(mind.beliefs, kin, responsible=mind.responsible - mind.settled,
                               seeking=mind.seeking - mind.settled, table=world.bonds)
    intention = select_intention(mind.beliefs, desires)
    if intention is not None and intention.plan is Plan.SEEK:
        return Action(TRANSITION, state=S.SEEKING, intention=intention, target=intention.target,
                      phase="travel", events=[("seek", str(intention.target))])
    return Action(EVACUATE, intention=intention)


def _arrived_check(aid, mind: Mind, world) -> Action:
    """Arrived parents revisit whether each child is accounted for."""
    if mind.returns_left <= 0 or not world.altruistic:
        return Action(WAIT)
    me = world.position(aid)
    for kid, kind in sorted(mind.kin.items()):
        if kind is not RelationKind.CHILD or mind.beliefs.holds(kid, "safe"):
            continue
        if world.minds[kid].leader == aid or kid in mind.followers:
            continue
        radius = world.radius(kind)
        if math.dist(me, world.position(kid)) <= radius:
            continue
        events = [("call", str(kid)), ("re_enter", str(kid))]
        desire = Desire(DesireKind.KIN_SAFE, 1, kid)
        return Action(TRANSITION, state=S.SEEKING, intention=Intention(desire, Plan.SEEK), target=kid,
                      phase="travel", events=events + [("seek", str(kid))])
    return Action(WAIT)


def _seek_step(aid, mind: Mind, world, dt) -> Action:
    me = world.position(aid)
    speed = world.group_speed(aid)
    if mind.phase == "group":
        return _group_step(aid, mind, world, dt, me, speed)

    target = mind.target
    if target is None:
        return _next_goal(aid, mind, world)
    tpos = world.position(target)
    kind = mind.kin.get(target, RelationKind.STRANGER)
    d = math.dist(me, tpos)
    perceived = d <= world.radius(kind)
    events = []
    if perceived and target not in mind.seen:
        events.append(("perceive", str(target)))
    if perceived:
        if d <= max(speed * dt, 1e-9) and world.can_join(aid, target):
            return Action(ADOPT, target=target, events=events)
        if not world.can_join(aid, target):
            # already safe or out of reach as a group: stop looking
            return Action(EVACUATE, events=events + [("give_up", str(target))], target=target)
        return Action(MOVE, path=world.path_to(me, tpos, same_place=d <= APPROACH_STRAIGHT),
                      phase="approach", events=events)

    if mind.phase == "approach":
        # lost sight of the target; head to where it was believed to be
        return Action(MOVE, path=world.path_to(me, believed_location(mind, target, world.t)),
                      phase="travel", events=events)
    if mind.phase == "travel":
        if world.path_done(aid):
            where = believed_location(mind, target, world.t)
            shape = world.building_shape(mind.expected_building.get(target))
            spacing = world.radius(kind) * math.sqrt(2)
            if shape is not None:
                wps = search_waypoints(shape, me, spacing)
            else:
                wps = [(where[0] + dx, where[1] + dy) for dx in (-spacing, 0, spacing)
                       for dy in (-spacing, 0, spacing)]
            return Action(MOVE, path=None, phase="search", waypoints=wps,
                          events=events + [("missing", str(target))])
        if world.has_path(aid):
            return Action(WAIT, events=events)
        where = believed_location(mind, target, world.t)
        if where is None:
            return Action(EVACUATE, events=events + [("give_up", str(target))], target=target)
        path = world.path_to(me, where, same_place=world.same_building(aid, target))
        if path is None:
            return Action(EVACUATE, events=events + [("give_up", str(target))], target=target)
        return Action(MOVE, path=path, phase="travel", events=events)
    if mind.phase == "search":
        if world.has_path(aid) and not world.path_done(aid):
            return Action(WAIT, events=events)
        if not mind.waypoints:
            return Action(EVACUATE, events=events + [("give_up", str(target))], target=target)
        nxt, rest = mind.waypoints[0], mind.waypoints[1:]
        return Action(MOVE, path=[me, nxt], phase="search", waypoints=rest, events=events)
    return Action(WAIT, events=events)


def _group_step(aid, mind: Mind, world, dt, me, speed) -> Action:
    """Teacher: collect perceivable pupils in priority order, then leave."""
    pending = [k for k in sorted(mind.responsible - mind.settled) if world.can_join(aid, k)]
    cands = [(k, world.position(k)) for k in pending]
    percepts = world.perceive(aid, cands)
    events = [("perceive", str(p.agent_id)) for p in percepts if p.agent_id not in mind.seen]
    if not percepts:
        return Action(EVACUATE, events=events)
    best = percepts[0]
    tpos = world.position(best.agent_id)
    if best.distance <= max(speed * dt, 1e-9):
        return Action(ADOPT, target=best.agent_id, events=events)
    return Action(MOVE, path=world.path_to(me, tpos, same_place=True), target=best.agent_id,
                  phase="group", events=events)
