"""Aggregate statistics over 2 Hz traces and event logs."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .core import MAX_OFFSET, BEHAVIOR_KINDS, ConfigError, ControlVector


class TraceSample(NamedTuple):
    tick_t: float
    vehicle: int
    behavior: str
    v: float
    lateral_offset: float
    control: ControlVector
    leader_gap: float | None


@dataclass
class RunReport:
    config: dict
    mean_b2b: dict[int, float | None] = field(default_factory=dict)
    red_lights: dict[int, tuple[int, int]] = field(default_factory=dict)  # id -> (encounters, runs)
    collisions_total: int = 0
    collisions_by_behavior: dict[str, int] = field(default_factory=dict)
    collisions_per_minute: float = 0.0
    penetration_rate: float = 0.0


def mean_b2b_distance(trace: Iterable[TraceSample], sensing_range: float = 50.0) -> float | None:
    """Mean leader gap over samples that have a leader within ``sensing_range``.

    Returns None when no sample has such a leader.
    """
    total = 0.0
    n = 0
    for smp in trace:
        g = smp.leader_gap
        if g is not None and g <= sensing_range:
            total += g
            n += 1
    return total / n if n else None


def red_light_ratio(encounters: Iterable[tuple[int, bool]]) -> float | None:
    """Percentage of red-light encounters that were run; None without encounters."""
    n = runs = 0
    for _vehicle, ran in encounters:
        n += 1
        runs += bool(ran)
    return 100.0 * runs / n if n else None


def mean_of_ratios(ratios: Iterable[float | None]) -> float | None:
    vals = [r for r in ratios if r is not None]
    return sum(vals) / len(vals) if vals else None


def penetration_rate(n_hazard: int, n_total: int) -> float:
    if n_total <= 0:
        raise ConfigError("penetration rate needs at least one vehicle")
    if not 0 <= n_hazard <= n_total:
        raise ConfigError(f"hazard count {n_hazard} outside [0, {n_total}]")
    return n_hazard / n_total


def collision_summary(events, duration: float) -> tuple[int, dict[str, int], float]:
    """Total count, per-behavior attribution (each participant once) and rate per minute."""
    if not duration > 0:
        raise ConfigError("duration must be positive")
    by = Counter()
    total = 0
    for ev in events:
        total += 1
        for tag in ev.behaviors:
            by[tag] += 1
    return total, dict(by), total / (duration / 60.0)


def offset_histogram(trace: Iterable, bin_width: float, bound: float = MAX_OFFSET):
    """Counts of lateral offsets in bins of ``bin_width`` spanning [-bound, bound].

    ``trace`` may hold TraceSamples or plain numbers. Returns ``(edges, counts)``.
    """
    if not bin_width > 0:
        raise ConfigError("bin_width must be positive")
    nbins = max(1, math.ceil(2 * bound / bin_width - 1e-9))
    lo = -nbins * bin_width / 2
    edges = [lo + i * bin_width for i in range(nbins + 1)]
    counts = [0] * nbins
    for smp in trace:
        x = smp if isinstance(smp, (int, float)) else smp.lateral_offset
        k = int((x - lo) // bin_width)
        counts[min(max(k, 0), nbins - 1)] += 1
    return edges, counts


def histogram_modes(edges, counts) -> list[float]:
    """Centres of strict local maxima of a histogram."""
    centres = [(edges[i] + edges[i + 1]) / 2 for i in range(len(counts))]
    out = []
    for i, c in enumerate(counts):
        left = counts[i - 1] if i > 0 else -1
        right = counts[i + 1] if i + 1 < len(counts) else -1
        if c > left and c >= right and c > 0:
            out.append(centres[i])
    return out


def by_vehicle(trace: Iterable[TraceSample]) -> dict[int, list[TraceSample]]:
    out: dict[int, list[TraceSample]] = {}
    for smp in trace:
        out.setdefault(smp.vehicle, []).append(smp)
    return out


def red_light_counts(records) -> dict[int, tuple[int, int]]:
    counts: dict[int, list[int]] = {}
    for rec in records:
        c = counts.setdefault(rec.vehicle, [0, 0])
        c[0] += 1
        c[1] += bool(rec.ran)
    return {k: (v[0], v[1]) for k, v in counts.items()}


def ranked_behaviors(by_behavior: dict[str, float], kinds=BEHAVIOR_KINDS[1:]) -> list[str]:
    """Hazard kinds sorted by collision attribution, highest first (ties by name)."""
    return sorted(kinds, key=lambda k: (-by_behavior.get(k, 0), k))
