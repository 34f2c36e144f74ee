"""Attachment relations, bond strengths and bond-boosted perception."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping


class RelationKind(str, enum.Enum):
    SELF = "Self"
    CHILD = "Child"
    PARTNER = "Partner"
    PARENT = "Parent"
    SIBLING = "Sibling"
    KIN = "Kin"
    FRIEND = "Friend"
    ACQUAINTANCE = "Acquaintance"
    COLLEAGUE = "Colleague"
    STRANGER = "Stranger"


class AttachmentProfile(str, enum.Enum):
    ALTRUISTIC = "Altruistic"
    EGOISTIC = "Egoistic"


R = RelationKind

# Mean emotional bond strengths for France (0-10 scale). Child and Colleague
# are not surveyed: Child sits above Partner, Colleague reuses Acquaintance.
DEFAULT_BONDS: dict[RelationKind, float] = {
    R.SELF: 0.0,
    R.CHILD: 9.5,
    R.PARTNER: 8.82,
    R.PARENT: 7.77,
    R.SIBLING: 7.51,
    R.KIN: 5.29,
    R.FRIEND: 7.57,
    R.ACQUAINTANCE: 3.84,
    R.COLLEAGUE: 3.84,
    R.STRANGER: 2.17,
}

RECIPROCAL = {R.CHILD: R.PARENT, R.PARENT: R.CHILD}

# visibility exponent k
K_DAY = 1.0
K_NIGHT = 0.2
K_FOG = 0.8

PD_NORMAL = 50.0


class BondTable(dict):
    """RelationKind -> bond strength in [0, 10]; Self is pinned to 0."""

    def __init__(self, values: Mapping | None = None):
        super().__init__(DEFAULT_BONDS)
        for key, value in (values or {}).items():
            self[RelationKind(key)] = float(value)
        for key, value in self.items():
            if not 0.0 <= value <= 10.0:
                raise ValueError(f"bond strength for {key.value} must be in [0, 10], got {value}")
        if self[R.SELF] != 0.0:
            raise ValueError("bond strength for Self must be 0")


@dataclass(frozen=True)
class EnvironmentBias:
    k: float = K_DAY

    def __post_init__(self):
        if not 0.0 < self.k <= 1.0:
            raise ValueError(f"k must be in (0, 1], got {self.k}")

    @classmethod
    def for_time(cls, time_of_day: str, override: float | None = None) -> "EnvironmentBias":
        if override is not None:
            return cls(override)
        return cls({"day": K_DAY, "night": K_NIGHT, "fog": K_FOG}[str(time_of_day).lower()])


def bond_strength(table: Mapping, relation: RelationKind, profile=AttachmentProfile.ALTRUISTIC) -> float:
    if AttachmentProfile(profile) is AttachmentProfile.EGOISTIC:
        return 0.0
    return float(table[RelationKind(relation)])


def perception_distance(pd_normal: float, k: float, sd_bond: float) -> float:
    """Bond-boosted perception range: ``pd_normal**k * (1 + sd_bond / 10)``.

    ``k`` is applied as an exponent, so night-time ranges shrink sharply.
    """
    if not (pd_normal > 0 and math.isfinite(pd_normal)):
        raise ValueError(f"pd_normal must be positive, got {pd_normal}")
    if not 0.0 < k <= 1.0:
        raise ValueError(f"k must be in (0, 1], got {k}")
    if not 0.0 <= sd_bond <= 10.0:
        raise ValueError(f"sd_bond must be in [0, 10], got {sd_bond}")
    return pd_normal**k * (1.0 + sd_bond / 10.0)


def relation_ranks(table: Mapping | None = None) -> dict[RelationKind, int]:
    """Child, Partner and Parent first, then the rest by descending bond."""
    table = table or DEFAULT_BONDS
    fixed = [R.CHILD, R.PARTNER, R.PARENT]
    rest = [r for r in RelationKind if r not in fixed and r is not R.SELF]
    # equal bonds share a rank (Acquaintance/Colleague by default)
    distinct = sorted({table[r] for r in rest}, reverse=True)
    ranks = {r: i for i, r in enumerate(fixed)}
    for r in rest:
        ranks[r] = len(fixed) + distinct.index(table[r])
    ranks[R.SELF] = -1
    return ranks


_DEFAULT_RANKS = relation_ranks()


def relation_priority_order(relations: Iterable, table: Mapping | None = None) -> list:
    ranks = _DEFAULT_RANKS if table is None else relation_ranks(table)
    return [aid for aid, kind in sorted(relations, key=lambda r: (ranks[RelationKind(r[1])], r[0]))]


@dataclass
class SocialNetwork:
    links: dict[int, dict[int, RelationKind]] = field(default_factory=dict)
    attachment_profile: AttachmentProfile = AttachmentProfile.ALTRUISTIC

    def add_link(self, a: int, b: int, kind: RelationKind):
        """Add ``a -> b`` as ``kind`` and the reciprocal ``b -> a``."""
        if a == b:
            raise ValueError("an agent cannot be linked to itself")
        kind = RelationKind(kind)
        self.links.setdefault(a, {})[b] = kind
        self.links.setdefault(b, {})[a] = RECIPROCAL.get(kind, kind)

    def relation(self, a: int, b: int) -> RelationKind | None:
        return self.links.get(a, {}).get(b)

    def relations_of(self, a: int) -> list[tuple[int, RelationKind]]:
        return sorted(self.links.get(a, {}).items())

    def check_symmetry(self) -> list[tuple[int, int]]:
        bad = []
        for a, row in self.links.items():
            for b, kind in row.items():
                back = self.links.get(b, {}).get(a)
                if a == b or back is None or back != RECIPROCAL.get(kind, kind):
                    bad.append((a, b))
        return bad


@dataclass(frozen=True)
class Percept:
    agent_id: int
    relation: RelationKind
    distance: float


def perceive(self_id: int, self_pos, candidates, network: SocialNetwork, bias: EnvironmentBias,
             pd_normal: float = PD_NORMAL, table: Mapping | None = None) -> list[Percept]:
    """Candidates within their relation's perception range, priority-ordered.

    ``candidates`` is an iterable of ``(agent_id, (x, y))``. Unrelated agents
    use the Stranger bond; egoistic networks perceive nobody.
    """
    if network.attachment_profile is AttachmentProfile.EGOISTIC:
        return []
    table = table or DEFAULT_BONDS
    ranks = _DEFAULT_RANKS if table is DEFAULT_BONDS else relation_ranks(table)
    row = network.links.get(self_id, {})
    base = pd_normal**bias.k
    sx, sy = self_pos
    out = []
    for cid, (cx, cy) in candidates:
        if cid == self_id:
            continue
        kind = row.get(cid, R.STRANGER)
        d = math.hypot(cx - sx, cy - sy)
        if d <= base * (1.0 + table[kind] / 10.0):
            out.append(Percept(cid, kind, d))
    out.sort(key=lambda p: (ranks[p.relation], p.distance, p.agent_id))
    return out
