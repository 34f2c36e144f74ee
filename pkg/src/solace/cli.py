"""Command-line front end.

    solace run config.yaml --seed 42 --out results/
    solace batch config.yaml --scenarios S1,S2,S4 --seeds 1..30 --out results/
    solace chart results/S1_42.csv --categories all,child --out s1.svg
    solace validate config.yaml

Exit codes: 0 success, 1 configuration error, 2 environment error,
3 runtime error. Messages go to standard error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import config as cf
from .charts import ChartError, ChartSpec, batch_report, write_chart
from .engine import RunError, batch_run, run
from .geo import GeoError, ValidationError
from .population import SynthesisError

EXIT_CONFIG, EXIT_ENV, EXIT_RUNTIME = 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def parse_seeds(text: str) -> list[int]:
    """``1..30`` (inclusive), ``5..5`` or ``1,4,9``."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split("..", 1))
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        seeds = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(EXIT_CONFIG, f"bad seed range {text!r}; use a..b or a,b,c") from None
    if not seeds:
        raise CliError(EXIT_CONFIG, "no seeds given")
    return seeds


def _resolve(args, extra=()):
    try:
        return cf.load_config(args.config, list(args.set or ()) + list(extra))
    except cf.ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc


def _environment(cfg):
    try:
        return cf.load_environment_from(cfg)
    except cf.ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    except (GeoError, ValidationError, OSError) as exc:
        raise CliError(EXIT_ENV, f"environment: {exc}") from exc


def _runtime(fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except SynthesisError as exc:
        raise CliError(EXIT_ENV, f"population: {exc}") from exc
    except (RunError, ValueError, RuntimeError) as exc:
        raise CliError(EXIT_RUNTIME, str(exc)) from exc


def cmd_run(args) -> int:
    extra = []
    if args.scenario:
        extra.append(f"scenario={args.scenario}")
    if args.seed is not None:
        extra.append(f"seed={args.seed}")
    cfg = _resolve(args, extra)
    if args.print_effective_config:
        sys.stdout.write(cf.dump_config(cfg))
        return 0
    resolved = cf.Resolved.from_cfg(cfg)
    scenario = cf.scenario(cfg, cfg["scenario"])
    env = _environment(cfg)
    t0 = time.perf_counter()
    result = _runtime(run, scenario, env, resolved.sim, resolved.params, int(cfg["seed"]))
    paths = result.write(args.out)
    f = result.final
    print(f"{scenario.name} seed {result.seed}: all {f.fraction('all'):.3f} arrived, "
          f"{f.trapped} trapped, {time.perf_counter() - t0:.1f}s -> {paths[0]}", file=sys.stderr)
    return 0


def cmd_batch(args) -> int:
    cfg = _resolve(args)
    if args.print_effective_config:
        sys.stdout.write(cf.dump_config(cfg))
        return 0
    names = [n.strip() for n in (args.scenarios or cfg["scenario"]).split(",") if n.strip()]
    try:
        scenarios = [cf.scenario(cfg, n) for n in names]
    except cf.ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    seeds = parse_seeds(args.seeds) if args.seeds else [int(cfg["seed"])]
    resolved = cf.Resolved.from_cfg(cfg)
    env = _environment(cfg)
    out = Path(args.out)
    t0 = time.perf_counter()
    batch = _runtime(batch_run, scenarios, seeds, env, resolved.sim, resolved.params, args.workers)
    for r in batch.results:
        r.write(out)
    (out / "summary.csv").write_text(batch.summary_csv_text())
    (out / "paired.csv").write_text(batch.paired_csv_text())
    if not args.no_report:
        batch_report(batch, out)
    print(f"{len(batch.results)} runs in {time.perf_counter() - t0:.1f}s -> {out / 'summary.csv'}",
          file=sys.stderr)
    return 0


def cmd_chart(args) -> int:
    cats = [c.strip() for c in args.categories.split(",") if c.strip()]
    labels = [s.strip() for s in args.labels.split(",")] if args.labels else None
    spec = ChartSpec(inputs=list(args.csv), categories=cats, output=args.out, title=args.title, labels=labels)
    try:
        path = write_chart(spec)
    except ChartError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    cfg = _resolve(args)
    env = _environment(cfg)
    g = env.road_graph
    print(f"config ok: {len(cfg['scenarios'])} scenarios; environment ok: {len(env.buildings)} buildings, "
          f"{len(g.nodes)} nodes, {len(g.edges)} edges, {len(env.safe_areas)} safe areas", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="solace", description="Seismic evacuation simulator with social attachment.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", nargs="?", help="YAML scenario config (defaults when omitted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (repeatable)")
        p.add_argument("--print-effective-config", action="store_true",
                       help="print the fully resolved config and exit")

    p = sub.add_parser("run", help="run one scenario")
    common(p)
    p.add_argument("--scenario", help="scenario name (default: config 'scenario')")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run scenarios x seeds and summarize")
    common(p)
    p.add_argument("--scenarios", help="comma-separated names, e.g. S1,S2,S4")
    p.add_argument("--seeds", help="a..b inclusive, or a,b,c")
    p.add_argument("--out", default="results")
    p.add_argument("--workers", type=int, help="worker processes (default: SOLACE_THREADS or CPU count)")
    p.add_argument("--no-report", action="store_true", help="skip the matplotlib figures")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("chart", help="SVG arrival chart from result CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--categories", default="all", help="comma-separated: adult,elderly,child,disabled,all")
    p.add_argument("--out", default="chart.svg")
    p.add_argument("--title", default="Arrivals")
    p.add_argument("--labels", help="comma-separated legend labels, one per series")
    p.set_defaults(func=cmd_chart)

    p = sub.add_parser("validate", help="check a config and its environment")
    common(p)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
