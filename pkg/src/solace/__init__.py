"""Agent-based seismic evacuation simulator driven by social attachment."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def district_dir(name: str = "district_a") -> Path:
    return Path(str(resources.files("solace") / "data" / name))


def load_district(name: str = "district_a"):
    """Load a bundled district by name."""
    from .geo import load_environment

    root = district_dir(name)
    files = json.loads((root / "manifest.json").read_text())["files"]
    soil = files.get("soil")
    return load_environment(root / files["buildings"], root / files["roads"], root / files["safe_areas"],
                            root / soil if soil else None)
