"""Earthquake event: local intensity, building damage and debris zones."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Point, Polygon

from .geo import BuildingFootprint, Environment, SoilZone, id_key

# Placeholder fragility defaults per typology; config, not ground truth.
DEFAULT_DAMAGE = {
    6: {"masonry": 0.25, "concrete": 0.05},
    8: {"masonry": 0.70, "concrete": 0.30},
}

DEBRIS_WIDTH_FRACTION = 0.5


@dataclass(frozen=True)
class EarthquakeEvent:
    intensity: int
    onset_time: float = 0.0
    duration: float = 30.0
    epicentre: tuple[float, float] | None = None  # accepted, not used for attenuation

    def __post_init__(self):
        if not 1 <= int(self.intensity) <= 12:
            raise ValueError(f"intensity must be in [1, 12], got {self.intensity}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")


class DamageState(str, enum.Enum):
    INTACT = "Intact"
    DAMAGED = "Damaged"


@dataclass(eq=False)
class DebrisZone:
    polygon: list
    source: object
    shape: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.shape is None:
            self.shape = Polygon(self.polygon)


def soil_modifier_at(point, soil: list[SoilZone]) -> int:
    p = Point(point)
    for zone in soil:
        if zone.shape.covers(p):
            return zone.intensity_modifier
    return 0


def local_intensity(event: EarthquakeEvent, building: BuildingFootprint, soil: list[SoilZone]) -> int:
    level = int(event.intensity) + soil_modifier_at(building.centroid, soil)
    return max(1, min(12, level))


def damage_probability(building: BuildingFootprint, level: int, defaults=None) -> float:
    """Probability of damage at ``level``; falls back to the nearest defined
    level (the lower one on ties), then to the typology defaults."""
    table = building.damage_probabilities
    if not table:
        defaults = DEFAULT_DAMAGE if defaults is None else defaults
        table = {int(lvl): row[building.typology] for lvl, row in defaults.items() if building.typology in row}
    if not table:
        return 0.0
    if level in table:
        return float(table[level])
    nearest = min(table, key=lambda lvl: (abs(lvl - level), lvl))
    return float(table[nearest])


def sample_damage(building: BuildingFootprint, level: int, rng=None, draw: float | None = None,
                  defaults=None) -> DamageState:
    """Damage the building with its level probability.

    Pass the building's single uniform ``draw`` to keep outcomes nested across
    intensity levels; otherwise one value is taken from ``rng``.
    """
    if draw is None:
        draw = float(rng.random())
    p = damage_probability(building, level, defaults)
    return DamageState.DAMAGED if draw < p else DamageState.INTACT


def generate_debris(building: BuildingFootprint, state: DamageState,
                    width_fraction: float = DEBRIS_WIDTH_FRACTION) -> DebrisZone | None:
    if width_fraction < 0:
        raise ValueError("width_fraction must be non-negative")
    if DamageState(state) is DamageState.INTACT:
        return None
    width = width_fraction * building.height
    shape = building.shape.buffer(width, join_style="mitre") if width > 0 else building.shape
    return DebrisZone(list(shape.exterior.coords), building.id, shape)


@dataclass
class QuakeOutcome:
    levels: dict
    states: dict
    debris: list[DebrisZone]

    @property
    def damaged(self) -> list:
        return [bid for bid, s in self.states.items() if s is DamageState.DAMAGED]


def apply_earthquake(event: EarthquakeEvent, env: Environment, rng: np.random.Generator,
                     width_fraction: float = DEBRIS_WIDTH_FRACTION, defaults=None) -> QuakeOutcome:
    """Sample damage for every building (ascending id) and build debris."""
    buildings = sorted(env.buildings, key=lambda b: id_key(b.id))
    draws = rng.random(len(buildings))
    levels, states, debris = {}, {}, []
    for b, u in zip(buildings, draws):
        level = local_intensity(event, b, env.soil_zones)
        state = sample_damage(b, level, draw=float(u), defaults=defaults)
        levels[b.id], states[b.id] = level, state
        zone = generate_debris(b, state, width_fraction)
        if zone is not None:
            debris.append(zone)
    return QuakeOutcome(levels, states, debris)
