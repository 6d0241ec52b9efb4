"""Command line entry point.

Usage::

    adacong run CONFIG [--seeds 1,2,3] [--out DIR] [--jobs N]
    adacong sweep CONFIG --param gamma --values 0.5,1,2 [--seeds ...] [--out DIR] [--jobs N]
    adacong render DIR [--metric reward] [--split train] [--smooth 10] [--out chart.svg]

Exit codes: 0 success, 1 a run (or render) failed, 2 invalid configuration or arguments.
The default output root is ``$ADACONG_OUT`` or ``./runs``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, load
from .runner import load_records, run, sweep
from .svg import render_curves

ENV_OUT = "ADACONG_OUT"
EXIT_OK, EXIT_RUN_FAILED, EXIT_CONFIG = 0, 1, 2


def parse_seeds(text: str) -> list[int]:
    """``"1,2,5"`` or ``"1-5"`` (inclusive), or a mix of both."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def parse_values(text: str) -> list:
    """Comma-separated values; each is read as JSON when possible, else as a string."""
    out = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        try:
            out.append(json.loads(part))
        except json.JSONDecodeError:
            out.append(part)
    return out


def output_dir(args, cfg_output: str | None, config_path: str) -> Path:
    if args.out:
        return Path(args.out)
    if cfg_output:
        return Path(cfg_output)
    root = Path(os.environ.get(ENV_OUT, "runs"))
    return root / Path(config_path).stem


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adacong", description="Conformal guidance experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="experiment JSON")
        sp.add_argument("--seeds", type=parse_seeds, help="override the config seeds, e.g. 1-5 or 1,3,7")
        sp.add_argument("--out", help=f"output directory (default ${ENV_OUT}/<config name>)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")

    common(sub.add_parser("run", help="run every baseline x seed cell"))
    sp = sub.add_parser("sweep", help="one full run per parameter value")
    common(sp)
    sp.add_argument("--param", required=True)
    sp.add_argument("--values", required=True, type=parse_values)

    rp = sub.add_parser("render", help="SVG learning curves from a run directory")
    rp.add_argument("dir")
    rp.add_argument("--metric")
    rp.add_argument("--split")
    rp.add_argument("--smooth", type=int, default=1)
    rp.add_argument("--out", help="output file (default <dir>/<metric>.svg)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "render":
        return _render(args)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load(args.config)
        if args.seeds:
            cfg = cfg.with_seeds(args.seeds)
    except ConfigError as exc:
        for line in exc.format_lines():
            print(line, file=sys.stderr)
        return EXIT_CONFIG
    out = output_dir(args, cfg.output, args.config)

    if args.command == "run":
        res = run(cfg, out, args.jobs)
        sys.stdout.write((out / "summary.md").read_text())
        ok = res.ok
    else:
        try:
            res = sweep(cfg, args.param, args.values, out, args.jobs)
        except ConfigError as exc:
            for line in exc.format_lines():
                print(line, file=sys.stderr)
            return EXIT_CONFIG
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        sys.stdout.write(res.table())
        ok = res.ok
    print(f"artefacts in {out}")
    if not ok:
        print("some runs failed; see failures.txt", file=sys.stderr)
        return EXIT_RUN_FAILED
    return EXIT_OK


def _render(args) -> int:
    d = Path(args.dir)
    if not d.is_dir():
        print(f"error: {d} is not a directory", file=sys.stderr)
        return EXIT_CONFIG
    try:
        records = load_records(d)
        metric, split = args.metric, args.split
        if (d / "config.json").is_file():
            spec = EXPERIMENTS[json.loads((d / "config.json").read_text())["experiment"]]
            if metric is None:
                metric = spec.summary_metric
                split = split or spec.summary_split
        path = Path(args.out) if args.out else d / f"{metric or 'curves'}.svg"
        render_curves(records, path, metric, split, smooth=args.smooth)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
