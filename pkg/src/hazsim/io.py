"""Bit-stable CSV emission and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

from . import __version__
from .core import HAZARD_KINDS, ms_to_kmh

TRACE_COLUMNS = ("t", "vehicle_id", "behavior", "v_kmh", "offset_m", "throttle", "brake", "steer", "leader_gap_m")
COLLISION_COLUMNS = ("t", "id_a", "id_b", "behavior_a", "behavior_b", "lane", "s")

OUT_ENV = "HAZSIM_OUT"


def output_dir(cli_value: str | None = None) -> Path:
    """Resolve the output directory: CLI flag, then the environment, then ``./hazsim_out``."""
    return Path(cli_value or os.environ.get(OUT_ENV) or "hazsim_out")


def fnum(x) -> str:
    """Four-decimal, locale-independent float formatting; None becomes an empty cell."""
    if x is None:
        return ""
    s = f"{x:.4f}"
    return "0.0000" if s == "-0.0000" else s


def _write(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_traces(path: Path, traces) -> Path:
    rows = sorted(traces, key=lambda s: (s.tick_t, s.vehicle))
    return _write(path, TRACE_COLUMNS, (
        (fnum(s.tick_t), s.vehicle, s.behavior, fnum(ms_to_kmh(s.v)), fnum(s.lateral_offset),
         fnum(s.control.throttle), fnum(s.control.brake), fnum(s.control.steer), fnum(s.leader_gap))
        for s in rows))


def write_collisions(path: Path, events) -> Path:
    rows = sorted(events, key=lambda e: (e.t, e.vehicle_a, e.vehicle_b))
    return _write(path, COLLISION_COLUMNS, (
        (fnum(e.t), e.vehicle_a, e.vehicle_b, e.behaviors[0], e.behaviors[1], e.lane, fnum(e.position))
        for e in rows))


def write_b2b(path: Path, report) -> Path:
    """One row per tracked vehicle group with a column per seed and the mean."""
    seeds = [r.seed for r in report.runs]
    header = ["vehicle"] + [f"seed_{s}" for s in seeds] + ["mean"]
    return _write(path, header, ([label] + [fnum(v) for v in vals] + [fnum(mean)]
                                 for label, vals, mean in report.b2b_table()))


def write_redlight(path: Path, report) -> Path:
    rows = []
    ratios = []
    for seed, runs, enc in report.ego_red_lights():
        ratio = 100.0 * runs / enc if enc else None
        if ratio is not None:
            ratios.append(ratio)
        rows.append((seed, runs, enc, fnum(ratio)))
    rows.append(("mean", "", "", fnum(sum(ratios) / len(ratios) if ratios else None)))
    return _write(path, ("seed", "runs", "encounters", "ratio_pct"), rows)


def write_grid_matrix(path: Path, grid) -> Path:
    header = ["density"] + [f"p_{p:g}" for p in grid.penetrations]
    return _write(path, header, ([d] + [fnum(v) for v in row] for d, row in zip(grid.densities, grid.matrix())))


def write_grid_by_behavior(path: Path, grid, penetration: float = 1.0) -> Path:
    table = grid.by_behavior(penetration)
    return _write(path, ("density",) + HAZARD_KINDS,
                  ([d] + [fnum(table[d][k]) for k in HAZARD_KINDS] for d in sorted(table)))


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_tree(root: Path, exclude=("manifest.json",)) -> dict[str, str]:
    """sha256 of every file below ``root`` keyed by POSIX relative path."""
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in exclude:
            out[p.relative_to(root).as_posix()] = sha256_file(p)
    return out


def write_manifest(root: Path, config_text: str, seeds) -> Path:
    manifest = {
        "tool": "hazsim",
        "version": __version__,
        "seeds": list(seeds),
        "config": config_text,
        "files": digest_tree(root),
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path: Path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("config", "files", "seeds"):
        if key not in data:
            raise ValueError(f"manifest {path} lacks '{key}'")
    return data
