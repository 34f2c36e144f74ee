"""Deterministic discrete-time scheduler.

One run: synthesize the population, fire the earthquake at t=0, block
streets under debris, then tick every agent with a two-phase update (all
decisions read a frozen snapshot, then commit in ascending id) until the
horizon. Movement along paths is vectorized; decisions run in Python only
for agents whose timers expire or whose plan needs percepts.
"""

from __future__ import annotations

import heapq
import io
import math
import os
import statistics
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import behavior as bh
from .behavior import Action, Mind, StateKind
from .geo import Environment, apply_debris_blocking, route_to_nearest_safe_area, shortest_path
from .population import AgeGroup, Location, PopulationSpec, Role, synthesize_population
from .quake import DEBRIS_WIDTH_FRACTION, DEFAULT_DAMAGE, EarthquakeEvent, apply_earthquake, soil_modifier_at
from .social import (
    PD_NORMAL,
    AttachmentProfile,
    BondTable,
    EnvironmentBias,
    RelationKind,
    bond_strength,
    perceive,
    perception_distance,
)

STREAMS = ("population", "damage", "behavior")
CATEGORIES = ("adult", "elderly", "child", "disabled", "all")
CSV_HEADER = ("t,adult_arr,adult_frac,elderly_arr,elderly_frac,child_arr,child_frac,disabled_arr,"
              "disabled_frac,all_arr,all_frac,trapped,enroute,preevac")
TRACE_HEADER = "t,agent_id,event,detail"

S = StateKind
_STATE_CODES = {s: i for i, s in enumerate(StateKind)}
_ENROUTE = [_STATE_CODES[s] for s in (S.EVACUATING, S.SEEKING, S.LEADING, S.FOLLOWING)]


class RunError(RuntimeError):
    pass


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per subsystem, keyed by a stable name hash."""
    return {name: np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())]) for name in STREAMS}


@dataclass(frozen=True)
class Scenario:
    name: str
    time_of_day: str = "day"
    intensity: int = 6
    include_disabled: bool = False
    k: float | None = None
    profile: str = "altruistic"
    seed: int = 0

    def __post_init__(self):
        if not 1 <= int(self.intensity) <= 12:
            raise ValueError(f"intensity must be in [1, 12], got {self.intensity}")
        if str(self.time_of_day).lower() not in ("day", "night"):
            raise ValueError(f"time_of_day must be day or night, got {self.time_of_day!r}")
        AttachmentProfile(str(self.profile).capitalize())


# the four reference scenarios
STANDARD_SCENARIOS = {
    "S1": Scenario("S1", "day", 6, False),
    "S2": Scenario("S2", "night", 6, False),
    "S3": Scenario("S3", "day", 6, True),
    "S4": Scenario("S4", "day", 8, False),
}


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0
    horizon: float = 1000.0
    cadence: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        steps = self.horizon / self.dt
        if self.horizon < 0 or abs(steps - round(steps)) > 1e-9:
            raise ValueError("horizon must be a non-negative multiple of dt")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")

    @property
    def n_ticks(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class ModelParams:
    population: PopulationSpec = field(default_factory=PopulationSpec)
    behaviors: dict = field(default_factory=lambda: dict(bh.DEFAULT_BEHAVIORS))
    bonds: BondTable = field(default_factory=BondTable)
    pd_normal: float = PD_NORMAL
    damage_defaults: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_DAMAGE.items()})
    debris_width_fraction: float = DEBRIS_WIDTH_FRACTION
    width_aware_blocking: bool = False
    passability: float = 1.0
    felt_threshold: int = bh.QUAKE_FELT_THRESHOLD
    child_wait: float = bh.CHILD_WAIT
    return_budget: int = 1
    grouping: bool = True  # teachers collect their pupils before leaving


@dataclass
class MetricsFrame:
    t: float
    arrived: dict[str, int]
    totals: dict[str, int]
    trapped: int = 0
    enroute: int = 0
    preevac: int = 0
    normal: int = 0

    def fraction(self, category: str) -> float:
        n = self.totals[category]
        return self.arrived[category] / n if n else 0.0

    @property
    def population(self) -> int:
        return self.totals["all"]

    def tally_sum(self) -> int:
        return self.arrived["all"] + self.trapped + self.enroute + self.preevac + self.normal


def _fmt_t(t: float) -> str:
    return f"{t:.10g}"


@dataclass
class RunResult:
    scenario: str
    seed: int
    frames: list[MetricsFrame]
    trace: list[tuple]
    blocked_edges: list[int] = field(default_factory=list)
    arrival_time: np.ndarray | None = None
    categories: dict[str, np.ndarray] | None = None
    re_entered: int = 0

    @property
    def final(self) -> MetricsFrame:
        return self.frames[-1]

    @property
    def tallies(self) -> dict[str, int]:
        f = self.final
        return {"arrived": f.arrived["all"], "trapped": f.trapped, "en-route": f.enroute,
                "pre-evacuating": f.preevac, "normal": f.normal}

    def csv_text(self) -> str:
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for f in self.frames:
            cells = [_fmt_t(f.t)]
            for c in CATEGORIES:
                cells += [str(f.arrived[c]), f"{f.fraction(c):.6f}"]
            # agents untouched by the quake have not started moving either
            cells += [str(f.trapped), str(f.enroute), str(f.preevac + f.normal)]
            out.write(",".join(cells) + "\n")
        return out.getvalue()

    def trace_csv_text(self) -> str:
        out = io.StringIO()
        out.write(TRACE_HEADER + "\n")
        for t, aid, event, detail in self.trace:
            out.write(f"{_fmt_t(t)},{aid},{event},{detail}\n")
        return out.getvalue()

    def write(self, out_dir) -> tuple[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        base = os.path.join(str(out_dir), f"{self.scenario}_{self.seed}")
        with open(base + ".csv", "w", newline="") as fh:
            fh.write(self.csv_text())
        with open(base + "_trace.csv", "w", newline="") as fh:
            fh.write(self.trace_csv_text())
        return base + ".csv", base + "_trace.csv"

    def able_fraction(self, t_index: int = -1) -> float:
        f = self.frames[t_index]
        able_n = f.totals["all"] - f.totals["disabled"]
        able_arr = f.arrived["all"] - f.arrived["disabled"]
        return able_arr / able_n if able_n else 0.0


class Simulation:
    """A single run. Also serves as the read view passed to ``next_action``."""

    def __init__(self, scenario: Scenario, env: Environment, config: SimConfig | None = None,
                 params: ModelParams | None = None, seed: int | None = None):
        self.scenario = scenario
        self.config = config or SimConfig()
        self.params = params or ModelParams()
        self.seed = scenario.seed if seed is None else int(seed)
        self.env = env.fork()
        self.streams = rng_streams(self.seed)
        self.t = 0.0
        self.trace: list[tuple] = []
        self.re_entered = 0

        p = self.params
        self.profile = AttachmentProfile(str(scenario.profile).capitalize())
        self.altruistic = self.profile is AttachmentProfile.ALTRUISTIC
        self.bias = EnvironmentBias.for_time(scenario.time_of_day, scenario.k)
        self.bonds = p.bonds
        self._radius = {kind: perception_distance(p.pd_normal, self.bias.k,
                                                  bond_strength(p.bonds, kind, self.profile))
                        for kind in RelationKind}

        self.population = synthesize_population(p.population, scenario.time_of_day, scenario.include_disabled,
                                                self.env, self.streams["population"])
        self.agents = self.population.agents
        self.network = self.population.network
        self.network.attachment_profile = self.profile

        self.event = EarthquakeEvent(int(scenario.intensity))
        self.quake = apply_earthquake(self.event, self.env, self.streams["damage"],
                                      p.debris_width_fraction, p.damage_defaults)
        apply_debris_blocking(self.env, self.quake.debris, p.width_aware_blocking, p.passability)
        self._graph_version = self.env.road_graph.version

        n = len(self.agents)
        self.n = n
        self.pos = np.array([a.position for a in self.agents], dtype=float).reshape(n, 2)
        self.snap = self.pos.copy()
        self.vmax = np.array([a.vmax for a in self.agents], dtype=float)
        self.speed = self.vmax.copy()
        self.s = np.zeros(n)
        self.plen = np.zeros(n)
        self.moving = np.zeros(n, dtype=bool)
        self.seg = np.zeros(n, dtype=np.int64)
        self.seg_p0 = np.zeros((n, 2))
        self.seg_dir = np.zeros((n, 2))
        self.seg_s0 = np.zeros(n)
        self.seg_s1 = np.zeros(n)
        self.carrier = np.full(n, -1, dtype=np.int64)
        self.state_code = np.full(n, _STATE_CODES[S.NORMAL], dtype=np.int64)
        self.arrived = np.zeros(n, dtype=bool)
        self.arrival_time = np.full(n, np.nan)
        self.paths: list = [None] * n
        self.path_edges: list = [None] * n
        self.dest_area: list = [None] * n

        self.cat_masks = {
            "adult": np.array([a.category == "adult" for a in self.agents], dtype=bool),
            "elderly": np.array([a.category == "elderly" for a in self.agents], dtype=bool),
            "child": np.array([a.category == "child" for a in self.agents], dtype=bool),
            "disabled": np.array([a.disabled for a in self.agents], dtype=bool),
            "all": np.ones(n, dtype=bool),
        }
        self.cat_totals = {c: int(m.sum()) for c, m in self.cat_masks.items()}

        self.minds: list[Mind] = []
        self.seekers: set[int] = set()
        self.check_next: set[int] = set()
        self._pre_heap: list[tuple[float, int]] = []
        self._start_safe = [a.id for a in self.agents if self.env.safe_area_at(a.position) is not None]
        self._init_minds()
        self.frames: list[MetricsFrame] = [self.record_frame()]

    # -- read view used by behavior.next_action ------------------------------

    def position(self, aid: int):
        return (float(self.snap[aid, 0]), float(self.snap[aid, 1]))

    def radius(self, kind) -> float:
        return self._radius[RelationKind(kind)]

    def group_speed(self, aid: int) -> float:
        return float(self.speed[aid])

    def perceive(self, aid: int, candidates):
        return perceive(aid, self.position(aid), candidates, self.network, self.bias,
                        self.params.pd_normal, self.bonds)

    def has_path(self, aid: int) -> bool:
        return self.paths[aid] is not None

    def path_done(self, aid: int) -> bool:
        return self.paths[aid] is not None and self.s[aid] >= self.plen[aid]

    def building_shape(self, bid):
        b = self.env.building_by_id.get(bid) if bid is not None else None
        return None if b is None else b.shape

    def same_building(self, a: int, b: int) -> bool:
        ba, bb = self.agents[a].building, self.agents[b].building
        return ba is not None and ba == bb and self.agents[a].location is not Location.OUTDOORS

    def is_dependent(self, aid: int) -> bool:
        return self.altruistic and self.agents[aid].age_group.is_child

    def can_join(self, leader: int, target: int) -> bool:
        if leader == target:
            return False
        mt = self.minds[target]
        if mt.state in (S.ARRIVED, S.TRAPPED):
            return False
        if mt.state is S.FOLLOWING and (mt.leader == leader or self.is_dependent(target)):
            return False
        if self.minds[leader].leader == target:
            return False
        return True

    def path_to(self, p, q, same_place: bool = False):
        if q is None:
            return None
        if same_place or math.dist(p, q) <= bh.APPROACH_STRAIGHT:
            return [tuple(p), tuple(q)]
        n0, n1 = self.env.nearest_node(p), self.env.nearest_node(q)
        nodes = shortest_path(self.env, n0, n1)
        if nodes is None:
            return None
        g = self.env.road_graph
        return [tuple(p)] + [tuple(g.nodes[v]) for v in nodes] + [tuple(q)]

    # -- setup ---------------------------------------------------------------

    def _level_at(self, agent) -> int:
        if agent.building is not None and agent.location is not Location.OUTDOORS:
            return self.quake.levels[agent.building]
        level = self.event.intensity + soil_modifier_at(agent.position, self.env.soil_zones)
        return max(1, min(12, level))

    def _expected_place(self, agent):
        if agent.location is Location.OUTDOORS or agent.building is None:
            return tuple(agent.position)
        return tuple(self.env.building_by_id[agent.building].centroid)

    def _init_minds(self):
        p = self.params
        rng = self.streams["behavior"]
        agents = self.agents
        household = {hh.id: hh for hh in self.population.households}
        wards: dict[int, set[int]] = {}
        for a in agents:
            for g in a.guardians:
                wards.setdefault(g, set()).add(a.id)

        for a in agents:
            m = Mind()
            self.minds.append(m)
            level = self._level_at(a)
            felt = level >= p.felt_threshold
            kin_missing = set()
            if self.altruistic:
                members = household[a.household].members if a.household is not None else {}
                for other in members:
                    if other != a.id:
                        kind = self.network.relation(a.id, other)
                        if kind is not None:
                            m.kin[other] = kind
                if a.role is Role.TEACHER:
                    for k in wards.get(a.id, ()):
                        m.kin[k] = self.network.relation(a.id, k) or RelationKind.COLLEAGUE
                m.teacher = a.role is Role.TEACHER and p.grouping
                if a.role is not Role.TEACHER or p.grouping:
                    m.responsible = set(wards.get(a.id, ()))
                m.dependent = a.age_group.is_child and bool(a.guardians)
                m.returns_left = p.return_budget if a.role is Role.PARENT else 0
                here = []
                for k in sorted(m.kin):
                    other = agents[k]
                    m.expected[k] = self._expected_place(other)
                    m.expected_building[k] = other.building if other.location is not Location.OUTDOORS else None
                    m.beliefs.add(bh.Belief(k, "location-known", 0.0, m.expected[k]))
                    if other.age_group.is_child and other.guardians and a.id not in other.guardians:
                        m.beliefs.add(bh.Belief(k, "safe", 0.0))
                    co_located = (other.location is a.location and
                                  (other.building == a.building if a.location is not Location.OUTDOORS
                                   else tuple(other.position) == tuple(a.position)))
                    if co_located:
                        here.append(k)
                cands = [(k, tuple(agents[k].position)) for k in here]
                percepts = perceive(a.id, tuple(a.position), cands, self.network, self.bias, p.pd_normal, self.bonds)
                for pc in percepts:
                    m.seen.add(pc.agent_id)
                    self.trace.append((0.0, a.id, "perceive", str(pc.agent_id)))
                bh.revise_beliefs(m.beliefs, percepts, 0.0, quake_felt=True, level=level,
                                  threshold=p.felt_threshold, positions={k: agents[k].position for k in here},
                                  expected_here=here)
                kin_missing = {k for k in here if m.beliefs.holds(k, "missing")
                               and k not in m.responsible and not agents[k].age_group.is_child}
            else:
                bh.revise_beliefs(m.beliefs, [], 0.0, quake_felt=True, level=level, threshold=p.felt_threshold)

            if not felt:
                continue
            self._set_state(a.id, S.PRE_EVACUATING)
            if a.vmax <= 0:
                m.pre_end = math.inf
            elif m.dependent:
                m.pre_end = p.child_wait
            else:
                plan = bh.choose_pre_evacuation(bool(kin_missing), p.behaviors, rng)
                m.pre_plan = plan
                m.pre_end = plan.delay
                if plan.seeks_family:
                    m.seeking = set(kin_missing)
                if plan.behaviors:
                    detail = ";".join(f"{b.value}:{d:.1f}" for b, d in plan.behaviors)
                    self.trace.append((0.0, a.id, "pre_evac", detail))
            desires = bh.generate_desires(m.beliefs, m.kin, responsible=m.responsible, seeking=m.seeking,
                                          table=self.bonds)
            m.intention = bh.select_intention(m.beliefs, desires, teacher=m.teacher, dependent=m.dependent)
            if math.isfinite(m.pre_end):
                heapq.heappush(self._pre_heap, (m.pre_end, a.id))

    # -- state bookkeeping ---------------------------------------------------

    def _emit(self, aid: int, event: str, detail: str = ""):
        self.trace.append((self.t, aid, event, detail))

    def _set_state(self, aid: int, new: StateKind):
        m = self.minds[aid] if aid < len(self.minds) else None
        old = m.state if m is not None else S.NORMAL
        if old is new:
            return
        if not bh.is_legal(old, new):
            raise RunError(f"illegal transition {old.value}->{new.value} for agent {aid}")
        if m is not None:
            m.state = new
        self.state_code[aid] = _STATE_CODES[new]
        self.trace.append((self.t, aid, "state", f"{old.value}->{new.value}"))
        if new is S.SEEKING:
            self.seekers.add(aid)
        else:
            self.seekers.discard(aid)

    def _clear_path(self, aid: int):
        self.paths[aid] = None
        self.path_edges[aid] = None
        self.moving[aid] = False
        self.s[aid] = 0.0
        self.plen[aid] = 0.0

    def _set_path(self, aid: int, points, edges=None, area=None):
        pts = [tuple(map(float, points[0]))]
        for q in points[1:]:
            q = (float(q[0]), float(q[1]))
            if q != pts[-1]:
                pts.append(q)
        arr = np.array(pts, dtype=float)
        seglen = np.hypot(*np.diff(arr, axis=0).T) if len(arr) > 1 else np.zeros(0)
        cum = np.concatenate([[0.0], np.cumsum(seglen)])
        self.paths[aid] = (arr, cum)
        self.path_edges[aid] = edges
        self.dest_area[aid] = area
        self.s[aid] = 0.0
        self.plen[aid] = cum[-1]
        self._load_segment(aid, 0)
        self.moving[aid] = cum[-1] > 0

    def _load_segment(self, aid: int, k: int):
        arr, cum = self.paths[aid]
        if len(arr) < 2:
            self.seg_p0[aid] = arr[0]
            self.seg_dir[aid] = 0.0
            self.seg_s0[aid] = self.seg_s1[aid] = 0.0
            return
        k = min(k, len(arr) - 2)
        self.seg[aid] = k
        length = cum[k + 1] - cum[k]
        self.seg_p0[aid] = arr[k]
        self.seg_dir[aid] = (arr[k + 1] - arr[k]) / length if length > 0 else 0.0
        self.seg_s0[aid] = cum[k]
        self.seg_s1[aid] = cum[k + 1]

    def _recompute_speed(self, leader: int):
        m = self.minds[leader]
        v = self.vmax[leader]
        for f in m.followers:
            if self.vmax[f] > 0:
                v = min(v, self.vmax[f])
        self.speed[leader] = v

    # -- actions -------------------------------------------------------------

    def _apply(self, aid: int, act: Action):
        m = self.minds[aid]
        for event, detail in act.events:
            if event == "perceive":
                if int(detail) in m.seen:
                    continue
                m.seen.add(int(detail))
            elif event == "give_up":
                m.settled.add(int(detail))
            elif event == "missing":
                tgt = int(detail)
                m.beliefs.add(bh.Belief(tgt, "missing", self.t, m.expected.get(tgt)))
            elif event == "re_enter":
                m.returns_left -= 1
                self.re_entered += 1
            self._emit(aid, event, detail)
        if act.intention is not None:
            m.intention = act.intention
        if act.kind == bh.WAIT:
            return
        if act.kind == bh.TRANSITION:
            if m.state is S.ARRIVED:
                m.area = None
                m.beliefs.add(bh.Belief(bh.SELF, "unsafe", self.t))
            self._set_state(aid, act.state)
            m.target = act.target
            m.phase = act.phase
            m.waypoints = []
            self._clear_path(aid)
        elif act.kind == bh.MOVE:
            if act.path is not None:
                self._set_path(aid, act.path)
            else:
                self._clear_path(aid)
            if act.phase:
                m.phase = act.phase
            if act.waypoints is not None:
                m.waypoints = list(act.waypoints)
        elif act.kind == bh.ADOPT:
            self._adopt(aid, act.target)
        elif act.kind == bh.EVACUATE:
            self._evacuate(aid)

    def _attach(self, joiner: int, leader: int):
        mj, ml = self.minds[joiner], self.minds[leader]
        moved = [joiner] + list(mj.followers)
        for f in moved:
            self.pos[f] = self.pos[leader]
            self.minds[f].leader = leader
            self.carrier[f] = leader
            self._clear_path(f)
            if f == joiner:
                self._set_state(f, S.FOLLOWING)
                self._emit(f, "follow", str(leader))
            ml.followers.append(f)
        mj.followers = []
        self._recompute_speed(joiner)
        self._recompute_speed(leader)

    def _adopt(self, aid: int, target: int):
        if not self.can_join(aid, target):
            return
        m, mt = self.minds[aid], self.minds[target]
        # step onto the target; followers travel with the adopter
        self.pos[aid] = self.pos[target]
        for f in m.followers:
            self.pos[f] = self.pos[target]
        free = mt.state in (S.PRE_EVACUATING, S.EVACUATING, S.NORMAL)
        if self.is_dependent(target) or free:
            self._attach(target, aid)
            m.settled.add(target)
            m.target = None if m.phase != "group" else m.target
            if m.phase != "group":
                m.phase = ""
            self._clear_path(aid)
        else:
            root = mt.leader if mt.state is S.FOLLOWING else target
            m.settled.add(target)
            self._attach(aid, root)

    def _evacuate(self, aid: int):
        m = self.minds[aid]
        leading = bool(m.followers)
        here = tuple(self.pos[aid])
        route = route_to_nearest_safe_area(self.env, here)
        cur = m.state
        moving_state = S.LEADING if leading else S.EVACUATING
        if not route:
            if cur is S.PRE_EVACUATING:
                self._set_state(aid, S.EVACUATING)
            self._trap(aid)
            return
        if cur is not moving_state:
            if cur is S.PRE_EVACUATING and leading:
                self._set_state(aid, S.EVACUATING)
                # a leader always starts from Seeking; this branch is defensive
            self._set_state(aid, moving_state)
        if not route.nodes:
            self._clear_path(aid)
            self._arrive(aid, route.safe_area)
            return
        g = self.env.road_graph
        pts = [here] + [tuple(g.nodes[v]) for v in route.nodes]
        pts.append(tuple(self.env.entry_point(route.safe_area, route.nodes[-1])))
        self._set_path(aid, pts, edges=list(route.edges), area=route.safe_area)
        self._recompute_speed(aid)

    def _arrive(self, aid: int, area):
        m = self.minds[aid]
        group = [aid] + list(m.followers)
        for f in group:
            mf = self.minds[f]
            self._set_state(f, S.ARRIVED)
            mf.area = area
            mf.leader = None
            mf.beliefs.add(bh.Belief(bh.SELF, "safe", self.t))
            self.carrier[f] = -1
            self._clear_path(f)
            if not self.arrived[f]:
                self.arrived[f] = True
                self.arrival_time[f] = self.t
            if mf.returns_left > 0 and f != aid:
                self.check_next.add(f)
        m.followers = []
        self.speed[aid] = self.vmax[aid]
        if m.returns_left > 0:
            self.check_next.add(aid)

    def _trap(self, aid: int):
        m = self.minds[aid]
        for f in [aid] + list(m.followers):
            self._set_state(f, S.TRAPPED)
            self._clear_path(f)
        self._emit(aid, "trapped", str(len(m.followers)))

    # -- tick ----------------------------------------------------------------

    def _due(self) -> set[int]:
        due = set()
        heap = self._pre_heap
        while heap and heap[0][0] <= self.t + 1e-9:
            _, aid = heapq.heappop(heap)
            if self.minds[aid].state is S.PRE_EVACUATING:
                due.add(aid)
        return due

    def _reroute(self):
        blocked = self.env.road_graph.blocked
        for aid in range(self.n):
            edges = self.path_edges[aid]
            if edges and any(e in blocked for e in edges):
                m = self.minds[aid]
                self._emit(aid, "reroute", "")
                if m.state in (S.EVACUATING, S.LEADING):
                    self._evacuate(aid)
                else:
                    self._clear_path(aid)
        self._graph_version = self.env.road_graph.version

    def step(self):
        """Advance one tick: decide on the snapshot, commit, move, record."""
        dt = self.config.dt
        if self.t == 0.0:
            for aid in self._start_safe:
                if not self.arrived[aid]:
                    m = self.minds[aid]
                    if m.state is S.NORMAL:
                        self._set_state(aid, S.ARRIVED)
                        self.arrived[aid] = True
                        self.arrival_time[aid] = self.t
                        m.area = self.env.safe_area_at(self.agents[aid].position)
                    elif m.state is S.PRE_EVACUATING:
                        self._arrive(aid, self.env.safe_area_at(self.agents[aid].position))
        if self.env.road_graph.version != self._graph_version:
            self._reroute()
        self.snap = self.pos.copy()
        deciders = self._due() | self.seekers | self.check_next
        self.check_next = set()
        decided = [(aid, self.minds[aid].state, bh.next_action(aid, self, dt)) for aid in sorted(deciders)]
        for aid, seen_state, act in decided:
            # an earlier commit this tick (e.g. being adopted) overrides the decision
            if self.minds[aid].state is seen_state:
                self._apply(aid, act)
        self._move(dt)
        self.t = round(self.t + dt, 9)
        return self

    def _move(self, dt: float):
        idx = np.flatnonzero(self.moving)
        if idx.size:
            s_new = np.minimum(self.s[idx] + self.speed[idx] * dt, self.plen[idx])
            self.s[idx] = s_new
            for i in idx[s_new > self.seg_s1[idx]]:
                _, cum = self.paths[i]
                k = int(np.searchsorted(cum, self.s[i], side="left")) - 1
                self._load_segment(i, max(k, 0))
            self.pos[idx] = self.seg_p0[idx] + self.seg_dir[idx] * (self.s[idx] - self.seg_s0[idx])[:, None]
            for i in idx[s_new >= self.plen[idx]]:
                i = int(i)
                self.pos[i] = self.paths[i][0][-1]
                self.moving[i] = False
                if self.minds[i].state in (S.EVACUATING, S.LEADING) and self.dest_area[i] is not None:
                    self.pos[self.minds[i].followers] = self.pos[i]
                    self.t, t0 = self.t + dt, self.t
                    self._arrive(i, self.dest_area[i])
                    self.t = t0
        f = np.flatnonzero(self.carrier >= 0)
        if f.size:
            self.pos[f] = self.pos[self.carrier[f]]

    def record_frame(self) -> MetricsFrame:
        arrived = {c: int((m & self.arrived).sum()) for c, m in self.cat_masks.items()}
        live = ~self.arrived
        code = self.state_code
        return MetricsFrame(
            t=self.t,
            arrived=arrived,
            totals=dict(self.cat_totals),
            trapped=int((live & (code == _STATE_CODES[S.TRAPPED])).sum()),
            enroute=int((live & np.isin(code, _ENROUTE)).sum()),
            preevac=int((live & (code == _STATE_CODES[S.PRE_EVACUATING])).sum()),
            normal=int((live & (code == _STATE_CODES[S.NORMAL])).sum()),
        )

    def run(self) -> RunResult:
        cadence = self.config.cadence
        for tick in range(1, self.config.n_ticks + 1):
            self.step()
            if tick % cadence == 0 or tick == self.config.n_ticks:
                self.frames.append(self.record_frame())
        return self.result()

    def result(self) -> RunResult:
        trace = sorted(self.trace, key=lambda r: r[0]) if self.trace else []
        return RunResult(
            scenario=self.scenario.name,
            seed=self.seed,
            frames=self.frames,
            trace=trace,
            blocked_edges=sorted(self.env.road_graph.blocked),
            arrival_time=self.arrival_time.copy(),
            categories={c: m.copy() for c, m in self.cat_masks.items()},
            re_entered=self.re_entered,
        )


def run(scenario: Scenario, env: Environment, config: SimConfig | None = None,
        params: ModelParams | None = None, seed: int | None = None) -> RunResult:
    return Simulation(scenario, env, config, params, seed).run()


# -- batches -----------------------------------------------------------------


@dataclass
class SummaryRow:
    scenario: str
    category: str
    mean_final_frac: float
    sd: float
    n: int


@dataclass
class BatchResult:
    results: list[RunResult]
    summary: list[SummaryRow]
    paired: list[dict]

    def by_scenario(self) -> dict[str, list[RunResult]]:
        out: dict[str, list[RunResult]] = {}
        for r in self.results:
            out.setdefault(r.scenario, []).append(r)
        return out

    def summary_csv_text(self) -> str:
        lines = ["scenario,category,mean_final_frac,sd,n"]
        for row in self.summary:
            lines.append(f"{row.scenario},{row.category},{row.mean_final_frac:.6f},{row.sd:.6f},{row.n}")
        return "\n".join(lines) + "\n"

    def paired_csv_text(self) -> str:
        lines = ["scenario_a,scenario_b,category,n,a_greater,b_greater,ties,mean_diff"]
        for p in self.paired:
            lines.append(f"{p['a']},{p['b']},{p['category']},{p['n']},{p['a_greater']},{p['b_greater']},"
                         f"{p['ties']},{p['mean_diff']:.6f}")
        return "\n".join(lines) + "\n"


def summarize(results: Sequence[RunResult]) -> tuple[list[SummaryRow], list[dict]]:
    groups: dict[str, dict[int, RunResult]] = {}
    order: list[str] = []
    for r in results:
        if r.scenario not in groups:
            order.append(r.scenario)
        groups.setdefault(r.scenario, {})[r.seed] = r
    summary = []
    for name in order:
        runs = list(groups[name].values())
        for c in CATEGORIES:
            vals = [r.final.fraction(c) for r in runs]
            sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
            summary.append(SummaryRow(name, c, statistics.fmean(vals), sd, len(vals)))
    paired = []
    for i, a in enumerate(order):
        for b in order[i + 1:]:
            seeds = sorted(set(groups[a]) & set(groups[b]))
            for c in CATEGORIES:
                diffs = [groups[a][s].final.fraction(c) - groups[b][s].final.fraction(c) for s in seeds]
                paired.append({
                    "a": a, "b": b, "category": c, "n": len(diffs),
                    "a_greater": sum(d > 0 for d in diffs), "b_greater": sum(d < 0 for d in diffs),
                    "ties": sum(d == 0 for d in diffs),
                    "mean_diff": statistics.fmean(diffs) if diffs else 0.0,
                })
    return summary, paired


_WORKER_ENV: Environment | None = None


def _worker_init(env):
    global _WORKER_ENV
    _WORKER_ENV = env


def _worker_run(job):
    scenario, seed, config, params = job
    try:
        return run(scenario, _WORKER_ENV, config, params, seed)
    except Exception as exc:  # re-raised in the parent with the failing pair
        return RunError(f"scenario {scenario.name} seed {seed}: {exc}")


def default_workers() -> int:
    raw = os.environ.get("SOLACE_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def batch_run(scenarios: Sequence[Scenario], seeds: Sequence[int], env: Environment,
              config: SimConfig | None = None, params: ModelParams | None = None,
              workers: int | None = None) -> BatchResult:
    """Run every (scenario, seed) pair; results keep input order."""
    if not scenarios or not seeds:
        raise ValueError("batch needs at least one scenario and one seed")
    jobs = [(sc, int(seed), config, params) for sc in scenarios for seed in seeds]
    workers = default_workers() if workers is None else max(1, int(workers))
    results: list[RunResult] = []
    if workers == 1:
        for sc, seed, cfg, prm in jobs:
            try:
                results.append(run(sc, env, cfg, prm, seed))
            except Exception as exc:
                raise RunError(f"scenario {sc.name} seed {seed}: {exc}") from exc
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init, initargs=(env,)) as pool:
            for out in pool.map(_worker_run, jobs):
                if isinstance(out, Exception):
                    pool.shutdown(cancel_futures=True)
                    raise out
                results.append(out)
    summary, paired = summarize(results)
    return BatchResult(results, summary, paired)


def with_seed(scenario: Scenario, seed: int) -> Scenario:
    return replace(scenario, seed=int(seed))
