"""Generate the bundled synthetic district (projected meters, EPSG:2154-like).

A square street grid with 80 m blocks. Every sixth line is a wide boulevard
whose setback exceeds any debris reach; the narrow streets in between can be
blocked by rubble from tall damaged buildings. Parks on the periphery are the
safe areas. Output is deterministic for a given --seed.

    python3 scripts/make_district.py --out src/solace/data/district_a
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

CRS = {"type": "name", "properties": {"name": "urn:ogc:def:crs:EPSG::2154"}}


def _fc(features):
    return {"type": "FeatureCollection", "crs": CRS, "features": features}


def _rect(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]


def make(n_blocks=24, block=80.0, boulevard_every=6, street_width=8.0, boulevard_width=24.0,
         setback=9.0, boulevard_setback=14.0, gap=4.0, parks=((0, 11), (0, 12), (23, 11), (23, 12),
                                                                   (11, 0), (12, 0), (11, 23), (12, 23)),
         schools=((6, 6), (18, 6), (6, 18), (18, 18), (12, 12), (6, 12), (18, 12)),
         heights=(6.0, 21.0), concrete_share=0.5, work_share=0.15, public_share=0.05,
         ox=650000.0, oy=6860000.0, seed=2024):
    rng = np.random.default_rng(seed)
    size = n_blocks * block

    def is_blvd(i):
        return i % boulevard_every == 0

    roads = []
    for i in range(n_blocks + 1):
        width = boulevard_width if is_blvd(i) else street_width
        c = i * block
        xs = [ox + j * block for j in range(n_blocks + 1)]
        roads.append({"type": "Feature", "id": f"h{i}", "properties": {"width": width},
                      "geometry": {"type": "LineString", "coordinates": [[x, oy + c] for x in xs]}})
        roads.append({"type": "Feature", "id": f"v{i}", "properties": {"width": width},
                      "geometry": {"type": "LineString",
                                   "coordinates": [[ox + c, oy + j * block] for j in range(n_blocks + 1)]}})

    park_set = set(parks)
    safe = []
    for k, (bi, bj) in enumerate(sorted(park_set)):
        x0, y0 = ox + bi * block, oy + bj * block
        safe.append({"type": "Feature", "id": f"park{k:02d}", "properties": {},
                     "geometry": {"type": "Polygon", "coordinates": [_rect(x0, y0, x0 + block, y0 + block)]}})

    school_set = set(schools)
    buildings = []
    bid = 0
    for bi in range(n_blocks):
        for bj in range(n_blocks):
            if (bi, bj) in park_set:
                continue
            x0, y0 = ox + bi * block, oy + bj * block
            left = boulevard_setback if is_blvd(bi) else setback
            right = boulevard_setback if is_blvd(bi + 1) else setback
            bottom = boulevard_setback if is_blvd(bj) else setback
            top = boulevard_setback if is_blvd(bj + 1) else setback
            ix0, ix1 = x0 + left, x0 + block - right
            iy0, iy1 = y0 + bottom, y0 + block - top
            mx, my = (ix0 + ix1) / 2, (iy0 + iy1) / 2
            cells = [(ix0, iy0, mx - gap / 2, my - gap / 2), (mx + gap / 2, iy0, ix1, my - gap / 2),
                     (ix0, my + gap / 2, mx - gap / 2, iy1), (mx + gap / 2, my + gap / 2, ix1, iy1)]
            for q, (a, b, c, d) in enumerate(cells):
                if (bi, bj) in school_set and q == 0:
                    use = "school"
                else:
                    u = rng.random()
                    use = "work" if u < work_share else "public" if u < work_share + public_share else "home"
                typology = "concrete" if rng.random() < concrete_share else "masonry"
                h = float(np.round(rng.uniform(*heights), 1))
                buildings.append({"type": "Feature", "id": f"b{bid:04d}",
                                  "properties": {"height": h, "typology": typology, "use": use,
                                                 "vulnerability_class": "B" if typology == "masonry" else "D"},
                                  "geometry": {"type": "Polygon",
                                               "coordinates": [_rect(round(a, 3), round(b, 3),
                                                                     round(c, 3), round(d, 3))]}})
                bid += 1

    # one patch of soft ground (+1) and one of rock (-1), aligned to blocks
    soil = [
        {"type": "Feature", "id": "soft", "properties": {"intensity_modifier": 1},
         "geometry": {"type": "Polygon", "coordinates": [_rect(ox + 2 * block, oy + 2 * block,
                                                               ox + 8 * block, oy + 7 * block)]}},
        {"type": "Feature", "id": "rock", "properties": {"intensity_modifier": -1},
         "geometry": {"type": "Polygon", "coordinates": [_rect(ox + 15 * block, oy + 15 * block,
                                                               ox + 21 * block, oy + 20 * block)]}},
    ]
    return {"buildings": _fc(buildings), "roads": _fc(roads), "safe_areas": _fc(safe), "soil": _fc(soil)}, size


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="src/solace/data/district_a")
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args(argv)
    layers, size = make(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, fc in layers.items():
        path = out / f"{name}.geojson"
        path.write_text(json.dumps(fc, separators=(",", ":")) + "\n")
        files[name] = path.name
    manifest = {"name": "district_a", "crs": "EPSG:2154", "extent_m": size, "generator_seed": args.seed,
                "files": files, "n_buildings": len(layers["buildings"]["features"])}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {out} ({manifest['n_buildings']} buildings)")


if __name__ == "__main__":
    main()
