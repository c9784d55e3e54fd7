"""World primitives: road network, vehicle state, clock and random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import NamedTuple

import numpy as np

# Headings. Lane ids are 4 * from_node + heading.
EAST, NORTH, WEST, SOUTH = 0, 1, 2, 3
HEADING_NAMES = ("E", "N", "W", "S")
_STEP = {EAST: (0, 1), NORTH: (1, 0), WEST: (0, -1), SOUTH: (-1, 0)}  # (drow, dcol)

MAX_OFFSET = 1.7

# Reserved stream keys; vehicle streams use the vehicle id directly.
ROUTE_KEY_BASE = 1 << 32
WORLD_KEY = (1 << 62) + 1
SPAWN_KEY = (1 << 62) + 2
SCENARIO_KEY = (1 << 62) + 3
SAMPLE_KEY = (1 << 62) + 4

BEHAVIOR_KINDS = ("normal", "speeding", "impeding", "crimp_occupy", "drunk_drug", "distracted")
HAZARD_KINDS = BEHAVIOR_KINDS[1:]


class ConfigError(ValueError):
    """Invalid parameters or configuration."""


class SamplingError(RuntimeError):
    """A distribution cannot be sampled (e.g. vanishing truncation mass)."""


def kmh_to_ms(v: float) -> float:
    return v / 3.6


def ms_to_kmh(v: float) -> float:
    return v * 3.6


class RandomStream:
    """Counter-based uniform stream keyed by ``(global_seed, stream_key)``.

    Backed by Philox, so the n-th draw depends only on the key pair and n.
    Uniforms are pulled in fixed-size blocks; the block size is part of the
    stream definition and must not change.
    """

    BLOCK = 256
    __slots__ = ("global_seed", "stream_key", "index", "_gen", "_buf", "_pos")

    def __init__(self, global_seed: int, stream_key: int):
        if global_seed < 0 or stream_key < 0:
            raise ConfigError("seed and stream key must be non-negative")
        self.global_seed = int(global_seed)
        self.stream_key = int(stream_key)
        key = ((self.global_seed & (2**64 - 1)) << 64) | (self.stream_key & (2**64 - 1))
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self._buf: list[float] = []
        self._pos = 0
        self.index = 0

    def random(self) -> float:
        """Next uniform in [0, 1)."""
        pos = self._pos
        if pos >= len(self._buf):
            self._buf = self._gen.random(self.BLOCK).tolist()
            pos = 0
        self._pos = pos + 1
        self.index += 1
        return self._buf[pos]

    def normal(self) -> float:
        """Standard normal via Box-Muller (consumes two uniforms)."""
        u1 = 1.0 - self.random()  # (0, 1]
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def choice(self, seq):
        return seq[min(int(self.random() * len(seq)), len(seq) - 1)]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = min(int(self.random() * (i + 1)), i)
            items[i], items[j] = items[j], items[i]

    def __repr__(self):
        return f"RandomStream(seed={self.global_seed}, key={self.stream_key}, index={self.index})"


def draw_uniform(stream: RandomStream, lo: float, hi: float) -> float:
    """Draw from U[lo, hi)."""
    if not lo < hi:
        raise ConfigError(f"uniform interval requires lo < hi, got [{lo}, {hi}]")
    x = lo + (hi - lo) * stream.random()
    if x >= hi:  # rounding at the top end
        x = math.nextafter(hi, lo)
    return x


def _std_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


@lru_cache(maxsize=256)
def truncation_mass(mean: float, sd: float, lo: float, hi: float) -> float:
    """Probability of [lo, hi] under N(mean, sd^2)."""
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    if a > 0:  # both in the upper tail: use survival functions for precision
        return _std_cdf(-a) - _std_cdf(-b)
    return _std_cdf(b) - _std_cdf(a)


MIN_TRUNCATION_MASS = 1e-6


def draw_truncated_gaussian(stream: RandomStream, mean: float, sd: float, lo: float, hi: float) -> float:
    """Draw from N(mean, sd^2) restricted to [lo, hi] by rejection."""
    if not sd > 0:
        raise ConfigError(f"sd must be positive, got {sd}")
    if not lo < hi:
        raise ConfigError(f"truncation requires lo < hi, got [{lo}, {hi}]")
    if truncation_mass(mean, sd, lo, hi) < MIN_TRUNCATION_MASS:
        raise SamplingError(f"N({mean}, {sd}^2) has negligible mass on [{lo}, {hi}]")
    while True:
        x = mean + sd * stream.normal()
        if lo <= x <= hi:
            return x


@dataclass(frozen=True)
class SignalPhase:
    """Fixed-time two-axis signal plan.

    East-west approaches are green on ``[0, green_s)`` of the local cycle and
    north-south approaches on ``[green_s + all_red_s, cycle_s - all_red_s)``;
    the remaining windows are all-red clearance.
    """

    cycle_s: float = 60.0
    green_s: float = 26.0
    offset_s: float = 0.0
    all_red_s: float = 4.0

    def __post_init__(self):
        if not 0 < self.green_s < self.cycle_s:
            raise ConfigError("signal requires 0 < green_s < cycle_s")
        if not 0 <= self.offset_s < self.cycle_s:
            raise ConfigError("signal requires 0 <= offset_s < cycle_s")
        if self.all_red_s < 0 or self.green_s + 2 * self.all_red_s >= self.cycle_s:
            raise ConfigError("all-red clearance leaves no north-south green")

    def is_green(self, axis: int, t: float) -> bool:
        tl = (t + self.offset_s) % self.cycle_s
        if axis == 0:
            return tl < self.green_s
        return self.green_s + self.all_red_s <= tl < self.cycle_s - self.all_red_s


@dataclass(frozen=True)
class Lane:
    id: int
    length: float
    width: float
    speed_limit: float
    successors: tuple[int, ...]
    from_node: int
    to_node: int
    heading: int
    opposite: int

    @property
    def axis(self) -> int:
        return self.heading % 2


@dataclass(frozen=True)
class Intersection:
    id: int
    incoming: tuple[int, ...]
    stop_line: float
    phase: SignalPhase


@dataclass(frozen=True)
class RoadNetwork:
    """Signalized grid on a torus: every block edge carries one lane each way."""

    lanes: tuple[Lane, ...]
    intersections: tuple[Intersection, ...]
    grid_dims: tuple[int, int]
    spawn_points: tuple[tuple[int, float], ...]
    box_half: float = 3.5

    def __post_init__(self):
        ids = {ln.id for ln in self.lanes}
        for ln in self.lanes:
            if ln.speed_limit <= 0:
                raise ConfigError(f"lane {ln.id}: speed limit must be positive")
            if any(s not in ids for s in ln.successors):
                raise ConfigError(f"lane {ln.id}: unknown successor")
        for node in self.intersections:
            for lid in node.incoming:
                if not 0 <= node.stop_line <= self.lanes[lid].length:
                    raise ConfigError(f"intersection {node.id}: stop line outside lane {lid}")

    def stop_line(self, lane_id: int) -> float:
        return self.intersections[self.lanes[lane_id].to_node].stop_line

    @cached_property
    def predecessors(self) -> dict[int, tuple[int, ...]]:
        preds: dict[int, list[int]] = {ln.id: [] for ln in self.lanes}
        for ln in self.lanes:
            for succ in ln.successors:
                preds[succ].append(ln.id)
        return {k: tuple(v) for k, v in preds.items()}

    @property
    def spawn_capacity(self) -> int:
        return len(self.spawn_points)


def build_network(
    rows: int,
    cols: int,
    block_len: float,
    speed_limit: float,
    world_stream: RandomStream,
    *,
    lane_width: float = 3.5,
    cycle_s: float = 60.0,
    green_s: float = 26.0,
    all_red_s: float = 4.0,
    stop_back: float = 6.0,
    spawn_spacing: float = 25.0,
    spawn_margin: float = 20.0,
) -> RoadNetwork:
    """Build a rows x cols signalized grid with wrap-around edges.

    Each intersection has four approaches; a vehicle leaving a lane may go
    straight or turn right. Signal offsets are drawn from ``world_stream``.
    """
    if rows < 1 or cols < 1:
        raise ConfigError(f"grid must be at least 1x1, got {rows}x{cols}")
    if block_len < 50:
        raise ConfigError(f"block_len must be >= 50 m, got {block_len}")
    if speed_limit <= 0:
        raise ConfigError("speed_limit must be positive")

    def node_at(r, c):
        return (r % rows) * cols + (c % cols)

    lanes = []
    for r in range(rows):
        for c in range(cols):
            n = node_at(r, c)
            for h in (EAST, NORTH, WEST, SOUTH):
                dr, dc = _STEP[h]
                m = node_at(r + dr, c + dc)
                lanes.append(Lane(
                    id=4 * n + h,
                    length=float(block_len),
                    width=lane_width,
                    speed_limit=float(speed_limit),
                    successors=(4 * m + h, 4 * m + (h + 3) % 4),  # straight, right turn
                    from_node=n,
                    to_node=m,
                    heading=h,
                    opposite=4 * m + (h + 2) % 4,
                ))
    incoming: dict[int, list[int]] = {n: [] for n in range(rows * cols)}
    for ln in lanes:
        incoming[ln.to_node].append(ln.id)
    nodes = []
    for n in range(rows * cols):
        offset = draw_uniform(world_stream, 0.0, cycle_s)
        nodes.append(Intersection(
            id=n,
            incoming=tuple(sorted(incoming[n])),
            stop_line=block_len - stop_back,
            phase=SignalPhase(cycle_s, green_s, offset, all_red_s),
        ))
    spawn = []
    for ln in lanes:
        s = spawn_margin
        while s <= block_len - stop_back - spawn_margin:
            spawn.append((ln.id, s))
            s += spawn_spacing
    return RoadNetwork(tuple(lanes), tuple(nodes), (rows, cols), tuple(spawn), box_half=lane_width)


class ControlVector(NamedTuple):
    throttle: float = 0.0
    brake: float = 0.0
    steer: float = 0.0


@dataclass(slots=True)
class VehicleState:
    """Kinematic and control state of one vehicle.

    ``s`` is the position of the vehicle centre along its lane. The routing and
    signal fields are simulator bookkeeping.
    """

    id: int
    lane: int
    s: float
    v: float = 0.0
    lateral_offset: float = 0.0
    length: float = 4.5
    width: float = 2.0
    control: ControlVector = ControlVector()
    behavior: str = "normal"
    rng_stream: int = 0
    next_lane: int = -1
    prev_lane: int = -1
    leader_gap: float | None = None
    gate: str | None = None  # latched reaction to the current red: "stop" or "go"
    encounter_open: bool = False

    @property
    def front(self) -> float:
        return self.s + 0.5 * self.length


@dataclass
class SimClock:
    dt: float = 0.05
    tick: int = 0

    @property
    def t(self) -> float:
        return self.tick * self.dt

    def advance(self) -> None:
        self.tick += 1


@dataclass
class StreamBank:
    """Lazily created per-purpose streams for one run."""

    global_seed: int
    _streams: dict[int, RandomStream] = field(default_factory=dict)

    def get(self, key: int) -> RandomStream:
        st = self._streams.get(key)
        if st is None:
            st = self._streams[key] = RandomStream(self.global_seed, key)
        return st

    def vehicle(self, vid: int) -> RandomStream:
        return self.get(vid)

    def route(self, vid: int) -> RandomStream:
        return self.get(ROUTE_KEY_BASE + vid)
