"""prereqrec command line: synthetic data, pipeline stages, sweeps."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from . import synth
from .config import SECTIONS, apply_overrides, default_output, field_types, load_config
from .data import DataError

log = logging.getLogger("prereqrec")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_STAGE = 0, 2, 3, 4


def _flag(section: str, key: str) -> str:
    return f"--{section}-{key.replace('_', '-')}"


def add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI file with [data] [extraction] [pkl] [kem] [bem] [pdrs] [eval] sections")
    p.add_argument("--data-dir", help="directory input files resolve against (default: the config's directory)")
    p.add_argument("--output", help=f"run directory (default: ${'{'}PREREQREC_OUTPUT{'}'} or {default_output()})")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    for section, cls in SECTIONS.items():
        g = p.add_argument_group(f"[{section}] overrides")
        for key, kind in field_types(cls).items():
            g.add_argument(_flag(section, key), dest=f"ov__{section}__{key}", metavar=kind.upper(), default=None)


def build_config(args):
    cfg = load_config(args.config)
    if args.data_dir:
        cfg.base_dir = args.data_dir
    by_section: dict = {}
    for name, value in vars(args).items():
        if name.startswith("ov__") and value is not None:
            _, section, key = name.split("__")
            by_section.setdefault(section, {})[key] = value
    for section, values in by_section.items():
        apply_overrides(cfg, section, values)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.output:
        cfg.output = args.output
    return cfg


def cmd_synth(args) -> int:
    fields = {f.name for f in dataclasses.fields(synth.SyntheticSpec)}
    spec = synth.SyntheticSpec(**{k: getattr(args, k) for k in fields if getattr(args, k, None) is not None})
    try:
        spec.validate()
    except ValueError as exc:
        log.error("invalid synthetic spec: %s", exc)
        return EXIT_USAGE
    paths = synth.generate(spec).write(args.out)
    for name in sorted(paths):
        print(f"{name}\t{paths[name]}")
    return EXIT_OK


def cmd_stages(args, stages) -> int:
    cfg = build_config(args)
    log.info("config %s seed %d -> %s", cfg.hash(), cfg.seed, cfg.output)
    report = pl.run_all(cfg, stages)
    if report is not None:
        print_report(report)
    return EXIT_OK


def print_report(report):
    rows = report.rows()
    print(f"{'scenario':<14}{'variant':<28}{'metric':<8}{'k':>4}  value")
    for r in rows:
        print(f"{r['scenario']:<14}{r['variant']:<28}{r['metric']:<8}{r['k']:>4}  {r['value']:.4f}")


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    rows = pl.run_sweep(cfg, args.axis, jobs=max(1, args.jobs))
    cols = [c for c in rows[0] if c != "error"] if rows else []
    print("\t".join(cols))
    for r in rows:
        cells = [f"{r[c]:.4f}" if isinstance(r.get(c), float) else str(r.get(c, "")) for c in cols]
        if "error" in r:
            cells.append("ERROR " + r["error"])
        print("\t".join(cells))
    return EXIT_STAGE if any("error" in r for r in rows) else EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prereqrec", description=__doc__)
    ap.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic corpus with planted prerequisite chains")
    s.add_argument("--out", required=True)
    for f in dataclasses.fields(synth.SyntheticSpec):
        s.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=type(f.default), default=None)

    for stage in pl.STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        add_config_flags(p)
    p = sub.add_parser("run", help="run the pipeline end to end, or from/only the given stages")
    add_config_flags(p)
    p.add_argument("--stage", action="append", choices=pl.STAGES, help="restrict to this stage (repeatable)")
    p = sub.add_parser("sweep", help="layer, dimension-grid, KEM-dimension or ablation sweep")
    add_config_flags(p)
    p.add_argument("--axis", required=True, choices=pl.SWEEP_AXES)
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "run":
            stages = [s for s in pl.STAGES if s in set(args.stage)] if args.stage else list(pl.STAGES)
            return cmd_stages(args, stages)
        return cmd_stages(args, [args.command])
    except (FileNotFoundError, DataError) as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT
    except pl.StageError as exc:
        log.error("%s", exc)
        return EXIT_STAGE
    except ValueError as exc:  # bad config keys or values
        log.error("configuration error: %s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
