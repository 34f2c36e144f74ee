"""Arrival-curve charts.

``render_svg`` writes a dependency-free SVG. Polyline vertices are the CSV's
own ``t`` and fraction strings inside a flipped data-coordinate group, so a
chart can be read back to the exact values it was drawn from. The batch
report uses matplotlib for PNG overviews.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


class ChartError(ValueError):
    pass


@dataclass
class ChartSpec:
    inputs: list
    categories: list = field(default_factory=lambda: ["all"])
    output: str = "chart.svg"
    title: str = "Arrivals"
    labels: list | None = None


@dataclass
class Series:
    label: str
    t: list[str]
    y: list[str]


def read_series(path, categories) -> tuple[list[str], list[Series]]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            header = reader.fieldnames or []
    except OSError as exc:
        raise ChartError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ChartError(f"{path}: no data")
    if "t" not in header:
        raise ChartError(f"{path}: missing column 't'")
    out = []
    for cat in categories:
        col = f"{cat}_frac"
        if col not in header:
            raise ChartError(f"{path}: missing column '{col}'")
        out.append(Series(f"{path.stem}:{cat}", [r["t"] for r in rows], [r[col] for r in rows]))
    return [r["t"] for r in rows], out


def load_chart_series(spec: ChartSpec) -> list[Series]:
    if not spec.inputs:
        raise ChartError("no data")
    if not spec.categories:
        raise ChartError("select at least one series")
    grid = None
    series: list[Series] = []
    for path in spec.inputs:
        t, s = read_series(path, spec.categories)
        if grid is None:
            grid = t
        elif [float(v) for v in t] != [float(v) for v in grid]:
            raise ChartError(f"{path}: t column differs from {spec.inputs[0]}")
        series.extend(s)
    if spec.labels:
        if len(spec.labels) != len(series):
            raise ChartError(f"{len(spec.labels)} labels given for {len(series)} series")
        for s, label in zip(series, spec.labels):
            s.label = label
    return series


def _ticks(hi: float, n: int = 5) -> list[float]:
    if hi <= 0:
        return [0.0]
    raw = hi / n
    mag = 10 ** len(str(int(raw))) / 10 if raw >= 1 else 1.0
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    out, v = [], 0.0
    while v <= hi + 1e-9:
        out.append(round(v, 6))
        v += step
    return out


def render_svg(series: list[Series], title: str = "Arrivals", width: int = 720, height: int = 440) -> str:
    if not series or not series[0].t:
        raise ChartError("no data")
    left, right, top, bottom = 64, 170, 40, 52
    pw, ph = width - left - right, height - top - bottom
    t_max = max(float(v) for s in series for v in s.t) or 1.0
    sx, sy = pw / t_max, float(ph)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f"<title>{escape(title)}</title>",
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{left + pw / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]
    # axes and grid
    parts.append(f'<g class="axes" stroke="#444" fill="none">'
                 f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>'
                 f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/></g>')
    for v in _ticks(t_max):
        x = left + v * sx
        parts.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 5}" stroke="#444"/>'
                     f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle">{v:g}</text>')
    for v in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        y = top + ph - v * ph
        parts.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>'
                     f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end">{v:.1f}</text>')
    parts.append(f'<text class="xlabel" x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">t (s)</text>')
    parts.append(f'<text class="ylabel" transform="translate(18 {top + ph / 2}) rotate(-90)" '
                 f'text-anchor="middle">arrival fraction</text>')

    # data group: x in seconds, y in [0, 1] with the origin at the bottom left
    parts.append(f'<g class="data" transform="translate({left} {top + ph}) scale({sx:.10g} {-sy:.10g})">')
    for i, s in enumerate(series):
        pts = " ".join(f"{t},{y}" for t, y in zip(s.t, s.y))
        parts.append(f'<polyline data-label="{escape(s.label)}" fill="none" stroke="{PALETTE[i % len(PALETTE)]}" '
                     f'stroke-width="1.8" vector-effect="non-scaling-stroke" points="{pts}"/>')
    parts.append("</g>")

    lx = left + pw + 16
    parts.append('<g class="legend">')
    for i, s in enumerate(series):
        y = top + 10 + 18 * i
        parts.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 22}" y2="{y}" stroke="{PALETTE[i % len(PALETTE)]}" '
                     f'stroke-width="2.5"/><text x="{lx + 28}" y="{y + 4}">{escape(s.label)}</text>')
    parts.append("</g></svg>")
    return "\n".join(parts) + "\n"


def write_chart(spec: ChartSpec) -> Path:
    svg = render_svg(load_chart_series(spec), spec.title)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    return out


def read_polylines(svg_text: str) -> list[tuple[str, list[tuple[float, float]]]]:
    """Parse the data polylines back out of a chart produced here."""
    import xml.etree.ElementTree as ET

    root = ET.fromstring(svg_text)
    out = []
    for el in root.iter("{http://www.w3.org/2000/svg}polyline"):
        pts = [tuple(float(v) for v in p.split(",")) for p in el.get("points").split()]
        out.append((el.get("data-label"), pts))
    return out


def batch_report(batch, out_dir, categories=("adult", "elderly", "child", "disabled", "all")) -> list[Path]:
    """Mean arrival curve per scenario, one PNG panel per category."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = batch.by_scenario()
    written = []
    cats = [c for c in categories
            if any(r.final.totals[c] for runs in groups.values() for r in runs)]
    fig, axes = plt.subplots(1, len(cats), figsize=(3.6 * len(cats), 3.4), sharey=True, squeeze=False)
    for ax, cat in zip(axes[0], cats):
        for i, (name, runs) in enumerate(groups.items()):
            if not any(r.final.totals[cat] for r in runs):
                continue
            t = np.array([f.t for f in runs[0].frames])
            y = np.mean([[f.fraction(cat) for f in r.frames] for r in runs], axis=0)
            ax.plot(t, y, color=PALETTE[i % len(PALETTE)], label=f"{name} (n={len(runs)})", lw=1.5)
        ax.set_title(cat)
        ax.set_xlabel("t (s)")
        ax.set_ylim(0, 1)
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("mean arrival fraction")
    axes[0][-1].legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    path = out_dir / "arrivals.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    # final-fraction spread per scenario
    fig, ax = plt.subplots(figsize=(5, 3.4))
    names = list(groups)
    data = [[r.final.fraction("all") for r in groups[n]] for n in names]
    ax.boxplot(data)
    ax.set_xticks(range(1, len(names) + 1), names)
    ax.set_ylabel("final arrival fraction (all)")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    path = out_dir / "final_fraction.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
