"""Command-line front end: ``hazsim {validate,grid,sample,replay}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import tempfile
from pathlib import Path

from . import __version__
from .behaviors import sample_drunk_ratio, sample_hold, sample_offset
from .config import echo_config, parse_config
from .core import HAZARD_KINDS, SAMPLE_KEY, ConfigError, RandomStream, SamplingError, draw_truncated_gaussian
from .experiment import ExperimentConfig, run_grid, run_validation
from .io import (
    output_dir,
    read_manifest,
    write_b2b,
    write_collisions,
    write_grid_by_behavior,
    write_grid_matrix,
    write_manifest,
    write_redlight,
    write_traces,
)

log = logging.getLogger("hazsim")

SAMPLERS = {
    "eq1": lambda st, cfg: sample_offset(st, cfg.profile("crimp_occupy")),
    "eq2": lambda st, cfg: sample_hold(st, cfg.profile("crimp_occupy").hold_lo, cfg.profile("crimp_occupy").hold_hi),
    "eq3": lambda st, cfg: sample_drunk_ratio(st, cfg.profile("drunk_drug")),
    "eq4": lambda st, cfg: sample_hold(st, cfg.profile("drunk_drug").hold_lo, cfg.profile("drunk_drug").hold_hi),
    "eq5": lambda st, cfg: _loss(st, cfg.profile("distracted")),
}


def _loss(stream, p):
    return draw_truncated_gaussian(stream, p.loss_mean, p.loss_sd, p.loss_lo, p.loss_hi)


def load_config(path: str | None) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    return parse_config(text)


def execute(cfg: ExperimentConfig, out: Path, workers: int | None = None) -> int:
    """Run ``cfg`` and write CSVs, ``config.txt`` and ``manifest.json`` under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    status = 0
    if cfg.mode == "validate":
        rep = run_validation(cfg)
        for run in rep.runs:
            write_traces(out / f"seed_{run.seed}" / "traces.csv", run.traces)
            write_collisions(out / f"seed_{run.seed}" / "collisions.csv", run.events)
        write_b2b(out / "b2b.csv", rep)
        write_redlight(out / "redlight.csv", rep)
    else:
        grid = run_grid(cfg, workers=workers)
        for (d, p, s), cell in sorted(grid.cells.items()):
            write_collisions(out / "cells" / f"d{d}_p{p:g}_s{s}" / "collisions.csv", cell.events)
        for key, err in sorted(grid.errors.items()):
            print(f"cell {key}: {err}", file=sys.stderr)
            status = 1
        if not grid.errors:
            write_grid_matrix(out / "grid_matrix.csv", grid)
            if 1.0 in grid.penetrations:
                write_grid_by_behavior(out / "grid_by_behavior.csv", grid)
    text = echo_config(cfg)
    (out / "config.txt").write_text(text, encoding="utf-8")
    write_manifest(out, text, cfg.run_seeds)
    return status


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    over = {"mode": "validate", "behavior": args.behavior}
    if args.seeds:
        over["seeds"] = tuple(args.seeds)
    elif cfg.mode != "validate" or cfg.behavior != args.behavior:
        over["seeds"] = None  # fall back to the per-behavior defaults
    cfg = dataclasses.replace(cfg, **over)
    cfg = dataclasses.replace(cfg, seeds=cfg.run_seeds)
    out = output_dir(args.out)
    status = execute(cfg, out)
    print(f"validate {args.behavior}: wrote {out}")
    return status


def cmd_grid(args) -> int:
    cfg = dataclasses.replace(load_config(args.config), mode="grid", behavior=None)
    if args.seeds:
        cfg = dataclasses.replace(cfg, seeds=tuple(args.seeds))
    out = output_dir(args.out)
    status = execute(cfg, out, workers=args.workers)
    print(f"grid: wrote {out}")
    return status


def cmd_sample(args) -> int:
    if args.n < 0:
        raise ConfigError("--n must be non-negative")
    cfg = load_config(args.config)
    stream = RandomStream(args.seed, SAMPLE_KEY)
    draw = SAMPLERS[args.dist]
    fh = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for _ in range(args.n):
            fh.write(f"{draw(stream, cfg)!r}\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_replay(args) -> int:
    path = Path(args.manifest)
    man = read_manifest(path)
    cfg = parse_config(man["config"])
    if tuple(man["seeds"]) != tuple(cfg.run_seeds):
        print(f"replay: manifest seeds {man['seeds']} disagree with config seeds {list(cfg.run_seeds)}",
              file=sys.stderr)
        return 1
    with tempfile.TemporaryDirectory(prefix="hazsim-replay-") as tmp:
        out = Path(tmp)
        status = execute(cfg, out, workers=args.workers)
        got = read_manifest(out / "manifest.json")["files"]
    want = man["files"]
    bad = sorted(k for k in set(want) | set(got) if want.get(k) != got.get(k))
    if bad:
        for k in bad:
            print(f"replay: digest mismatch for {k}", file=sys.stderr)
        return 1
    print(f"replay: {len(want)} files match")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hazsim", description="Hazardous driving behavior traffic simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="single-ego behavior validation runs")
    v.add_argument("--behavior", required=True, choices=HAZARD_KINDS)
    v.add_argument("--seeds", type=int, nargs="+")
    v.add_argument("--config")
    v.add_argument("--out")
    v.set_defaults(func=cmd_validate)

    g = sub.add_parser("grid", help="density x penetration collision grid")
    g.add_argument("--config")
    g.add_argument("--seeds", type=int, nargs="+")
    g.add_argument("--workers", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_grid)

    s = sub.add_parser("sample", help="dump raw sampler draws, one per line")
    s.add_argument("--dist", required=True, choices=sorted(SAMPLERS))
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=10)
    s.add_argument("--config")
    s.add_argument("--output", help="file to write instead of stdout")
    s.set_defaults(func=cmd_sample)

    r = sub.add_parser("replay", help="re-run a manifest and verify file digests")
    r.add_argument("--manifest", required=True)
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SamplingError, ValueError, OSError) as exc:
        print(f"hazsim {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
