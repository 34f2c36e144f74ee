"""Scenario configuration files.

A config is a YAML mapping layered over the bundled ``defaults.yaml``. The
defaults double as the schema: a key that does not exist there is an error,
except inside the few open maps listed in ``OPEN_MAPS`` (scenario names,
damage levels, building-use fallbacks).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from . import behavior as bh
from .engine import ModelParams, Scenario, SimConfig
from .population import AgeGroup, GroupSpec, Location, PopulationSpec
from .social import BondTable, RelationKind

# paths whose children are user-named; their values still follow a template
OPEN_MAPS = {("scenarios",): ("S1",), ("quake", "damage"): None, ("population", "use_fallback"): None}


class ConfigError(ValueError):
    pass


def defaults() -> dict:
    text = (resources.files("solace") / "data" / "defaults.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, over: dict, path: tuple, schema: dict):
    for key, value in over.items():
        here = path + (key,)
        dotted = ".".join(map(str, here))
        if path in OPEN_MAPS:
            template_path = OPEN_MAPS[path]
            if template_path is None:
                base[key] = copy.deepcopy(value)
                continue
            template = schema
            for p in template_path:
                template = template[p]
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted}: expected a mapping")
            target = base.setdefault(key, copy.deepcopy(template))
            _merge(target, value, here + ("*",), template)
            continue
        if key not in schema:
            raise ConfigError(f"unknown key '{dotted.replace('.*', '')}'")
        if isinstance(schema[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted}: expected a mapping")
            _merge(base[key], value, here, schema[key])
        else:
            base[key] = copy.deepcopy(value)


def _merge_into(base: dict, over: dict):
    schema = defaults()
    _merge(base, over, (), schema)
    return base


def parse_set(expr: str) -> dict:
    """``a.b.c=value`` -> nested mapping; the value is parsed as YAML."""
    if "=" not in expr:
        raise ConfigError(f"--set expects key=value, got {expr!r}")
    key, raw = expr.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"--set has an empty key: {expr!r}")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"--set {key}: {exc}") from exc
    out: dict = value
    for p in reversed(parts):
        out = {p: out}
    return out


def load_config(path=None, overrides=()) -> dict:
    """Resolved config mapping: defaults <- file <- ``--set`` overrides."""
    cfg = defaults()
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge_into(cfg, doc)
        base_dir = path.resolve().parent
    for expr in overrides:
        _merge_into(cfg, parse_set(expr))
    env = cfg["environment"]
    for key in ("buildings", "roads", "safe_areas", "soil"):
        if env.get(key):
            env[key] = str((base_dir / env[key]).resolve())
    validate(cfg)
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None)


# -- typed views ---------------------------------------------------------------


def scenario(cfg: dict, name: str, seed: int | None = None) -> Scenario:
    if name not in cfg["scenarios"]:
        raise ConfigError(f"unknown scenario '{name}' (known: {', '.join(map(str, cfg['scenarios']))})")
    row = cfg["scenarios"][name]
    try:
        return Scenario(name=str(name), time_of_day=str(row["time_of_day"]).lower(),
                        intensity=int(row["intensity"]), include_disabled=bool(row["include_disabled"]),
                        k=None if row["k"] is None else float(row["k"]), profile=str(row["profile"]).lower(),
                        seed=int(cfg["seed"] if seed is None else seed))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenarios.{name}: {exc}") from exc


def sim_config(cfg: dict) -> SimConfig:
    s = cfg["sim"]
    try:
        return SimConfig(dt=float(s["dt"]), horizon=float(s["horizon"]), cadence=int(s["cadence"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sim: {exc}") from exc


def population_spec(cfg: dict) -> PopulationSpec:
    p = cfg["population"]
    groups = {}
    for name, g in p["groups"].items():
        try:
            group = AgeGroup(name)
        except ValueError:
            raise ConfigError(f"unknown key 'population.groups.{name}'") from None
        counts = {}
        for loc, pair in g["counts"].items():
            try:
                counts[Location(loc)] = tuple(pair)
            except ValueError:
                raise ConfigError(f"unknown key 'population.groups.{name}.counts.{loc}'") from None
            if len(pair) != 2:
                raise ConfigError(f"population.groups.{name}.counts.{loc}: expected [day, night]")
        groups[group] = GroupSpec(tuple(g["disabled_pct"]), float(g["speed_max"]), counts)
    return PopulationSpec(groups=groups, speed_floor_fraction=float(p["speed_floor_fraction"]),
                          disabled_speed_factor=float(p["disabled_speed_factor"]),
                          class_size=int(p["class_size"]),
                          family_size_weights=tuple(float(w) for w in p["family_size_weights"]),
                          second_parent_probability=float(p["second_parent_probability"]),
                          couple_probability=float(p["couple_probability"]),
                          use_fallback={str(k): str(v) for k, v in (p["use_fallback"] or {}).items()})


def model_params(cfg: dict) -> ModelParams:
    q, m = cfg["quake"], cfg["model"]
    for name in cfg["bonds"]:
        if name not in {r.value for r in RelationKind}:
            raise ConfigError(f"unknown key 'bonds.{name}'")
    behaviors = {}
    for name, rule in cfg["behaviors"].items():
        if name not in {b.value for b in bh.PreEvacBehavior}:
            raise ConfigError(f"unknown key 'behaviors.{name}'")
        unknown = set(rule) - {"probability", "duration"}
        if unknown:
            raise ConfigError(f"unknown key 'behaviors.{name}.{sorted(unknown)[0]}'")
        behaviors[name] = rule
    try:
        damage = {int(level): {str(t): float(v) for t, v in row.items()} for level, row in q["damage"].items()}
        return ModelParams(
            population=population_spec(cfg),
            behaviors=bh.behavior_table(behaviors),
            bonds=BondTable(cfg["bonds"]),
            pd_normal=float(m["pd_normal"]),
            damage_defaults=damage,
            debris_width_fraction=float(q["debris_width_fraction"]),
            width_aware_blocking=bool(q["width_aware_blocking"]),
            passability=float(q["passability"]),
            felt_threshold=int(q["felt_threshold"]),
            child_wait=float(m["child_wait"]),
            return_budget=int(m["return_budget"]),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def validate(cfg: dict):
    """Build every typed view once so that bad values fail early."""
    sim_config(cfg)
    model_params(cfg)
    for name in cfg["scenarios"]:
        scenario(cfg, name)
    if cfg["scenario"] not in cfg["scenarios"]:
        raise ConfigError(f"scenario '{cfg['scenario']}' is not defined under scenarios")
    try:
        int(cfg["seed"])
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {cfg['seed']!r}") from None


def load_environment_from(cfg: dict):
    from . import load_district
    from .geo import load_environment

    env = cfg["environment"]
    paths = [env.get(k) for k in ("buildings", "roads", "safe_areas")]
    if all(paths):
        return load_environment(*paths, env.get("soil"), cell_size=float(env["cell_size"]),
                                snap_tolerance=float(env["snap_tolerance"]))
    if any(paths):
        raise ConfigError("environment needs buildings, roads and safe_areas together")
    return load_district(str(env["district"]))


@dataclass
class Resolved:
    cfg: dict
    params: ModelParams
    sim: SimConfig

    @classmethod
    def from_cfg(cls, cfg: dict) -> "Resolved":
        return cls(cfg, model_params(cfg), sim_config(cfg))
