import json

import pytest

from solace import load_district
from solace.geo import BuildingFootprint, Environment, SafeArea, SoilZone, build_road_graph


def rect(x0, y0, x1, y1):
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def make_env(segments, safe=(), buildings=(), soil=(), cell_size=25.0):
    """Small in-memory environment.

    ``segments`` are point lists (width 6); ``safe`` and ``buildings`` are
    rectangles (x0, y0, x1, y1); buildings may carry a trailing dict of
    extra fields.
    """
    graph = build_road_graph([(list(s), 6.0) for s in segments])
    areas = [SafeArea(f"s{i}", rect(*r)) for i, r in enumerate(safe)]
    blds = []
    for i, b in enumerate(buildings):
        extra = b[4] if len(b) > 4 else {}
        blds.append(BuildingFootprint(extra.pop("id", i), rect(*b[:4]), extra.pop("height", 10.0), **extra))
    zones = [SoilZone(f"z{i}", rect(*z[:4]), z[4]) for i, z in enumerate(soil)]
    return Environment(blds, zones, areas, graph, cell_size=cell_size)


def write_fc(path, features, crs="urn:ogc:def:crs:EPSG::2154"):
    doc = {"type": "FeatureCollection", "features": features}
    if crs:
        doc["crs"] = {"type": "name", "properties": {"name": crs}}
    path.write_text(json.dumps(doc))
    return path


def polygon_feature(fid, ring, **props):
    ring = [list(p) for p in ring]
    return {"type": "Feature", "id": fid, "properties": props,
            "geometry": {"type": "Polygon", "coordinates": [ring + [ring[0]]]}}


def line_feature(fid, pts, **props):
    return {"type": "Feature", "id": fid, "properties": props,
            "geometry": {"type": "LineString", "coordinates": [list(p) for p in pts]}}


@pytest.fixture(scope="session")
def district():
    return load_district()


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", "") != "call" or "test_criterion_" not in rep.nodeid:
                continue
            lines += [ln for ln in rep.capstdout.splitlines() if ln.startswith("ACCEPTANCE")]
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in sorted(lines):
            terminalreporter.write_line(ln)
