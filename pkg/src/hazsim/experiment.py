"""Scenario construction and the two study designs: single-ego validation and the density x penetration grid."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .behaviors import (
    PROFILE_TYPES,
    BehaviorProfile,
    CrimpOccupy,
    Distracted,
    DrunkDrug,
    Impeding,
    Normal,
    Speeding,
    behavior_directive,
)
from .core import (
    HAZARD_KINDS,
    SCENARIO_KEY,
    SPAWN_KEY,
    WORLD_KEY,
    ConfigError,
    SimClock,
    StreamBank,
    build_network,
    kmh_to_ms,
)
from .dynamics import CollisionEvent, FollowParams, RedLightRecord, World, replace_crashed, step_world
from .metrics import (
    RunReport,
    TraceSample,
    by_vehicle,
    collision_summary,
    mean_b2b_distance,
    penetration_rate,
    red_light_counts,
)

log = logging.getLogger(__name__)

DEFAULT_VALIDATION_SEEDS = {
    "speeding": (10, 11, 12),
    "impeding": (10, 11, 12),
    "drunk_drug": (10, 11, 12, 13, 14),
}


@dataclass(frozen=True)
class NetworkParams:
    rows: int = 3
    cols: int = 3
    block_len: float = 200.0
    speed_limit_kmh: float = 30.0
    cycle: float = 60.0
    green: float = 26.0
    all_red: float = 4.0


def default_profiles() -> dict[str, BehaviorProfile]:
    return {
        "normal": Normal(),
        "speeding": Speeding(),
        "impeding": Impeding(),
        "crimp_occupy": CrimpOccupy(),
        "drunk_drug": DrunkDrug(),
        "distracted": Distracted(),
    }


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "grid"
    behavior: str | None = None
    densities: tuple[int, ...] = (25, 50, 100, 150)
    penetrations: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    n_vehicles: int = 50
    duration: float = 300.0
    seeds: tuple[int, ...] | None = None
    record_hz: float = 2.0
    dt: float = 0.05
    sensing_range: float = 50.0
    network: NetworkParams = NetworkParams()
    profiles: dict = field(default_factory=default_profiles, hash=False)

    def __post_init__(self):
        if self.mode not in ("grid", "validate"):
            raise ConfigError(f"mode must be 'grid' or 'validate', got {self.mode!r}")
        if self.mode == "validate" and self.behavior not in HAZARD_KINDS:
            raise ConfigError(f"validate mode needs a hazard behavior, got {self.behavior!r}")
        if any(not 0 <= p <= 1 for p in self.penetrations):
            raise ConfigError("penetrations must lie in [0, 1]")
        if any(d <= 0 for d in self.densities) or self.n_vehicles <= 0:
            raise ConfigError("vehicle counts must be positive")
        if self.duration < 0:
            raise ConfigError("duration must be non-negative")
        if self.record_hz <= 0 or self.dt <= 0:
            raise ConfigError("record_hz and dt must be positive")

    @property
    def run_seeds(self) -> tuple[int, ...]:
        if self.seeds is not None:
            return self.seeds
        if self.mode == "validate":
            return DEFAULT_VALIDATION_SEEDS.get(self.behavior, (10,))
        return (10,)

    def profile(self, kind: str) -> BehaviorProfile:
        return self.profiles.get(kind) or PROFILE_TYPES[kind]()


def _new_world(config: ExperimentConfig, density: int, seed: int) -> tuple[World, list]:
    streams = StreamBank(seed)
    np_ = config.network
    net = build_network(np_.rows, np_.cols, np_.block_len, kmh_to_ms(np_.speed_limit_kmh),
                        streams.get(WORLD_KEY), cycle_s=np_.cycle, green_s=np_.green,
                        all_red_s=np_.all_red)
    if density > net.spawn_capacity:
        raise ConfigError(f"density {density} exceeds spawn capacity {net.spawn_capacity}")
    world = World(net, streams, clock=SimClock(config.dt), follow=FollowParams())
    points = list(net.spawn_points)
    streams.get(SCENARIO_KEY).shuffle(points)
    return world, points[:density]


def _populate(world: World, points, assignment: dict[int, BehaviorProfile]) -> None:
    for vid in sorted(assignment):
        lane, s = points[vid]
        world.add_vehicle(vid, lane, s, assignment[vid])
    world.n_total = len(assignment)


def hazard_count(penetration: float, density: int) -> int:
    return int(math.floor(penetration * density + 0.5))


def build_scenario(config: ExperimentConfig, density: int, penetration: float, seed: int):
    """Spawn ``density`` vehicles and stripe round(p * density) of them over the five hazard kinds."""
    if not 0 <= penetration <= 1:
        raise ConfigError(f"penetration {penetration} outside [0, 1]")
    world, points = _new_world(config, density, seed)
    ids = list(range(density))
    world.streams.get(SCENARIO_KEY).shuffle(ids)
    n_h = hazard_count(penetration, density)
    assignment = {vid: config.profile("normal") for vid in range(density)}
    for i, vid in enumerate(ids[:n_h]):
        assignment[vid] = config.profile(HAZARD_KINDS[i % len(HAZARD_KINDS)])
    _populate(world, points, assignment)
    return world, assignment


def build_validation_scenario(config: ExperimentConfig, kind: str, seed: int):
    """Vehicle 0 is the ego with behavior ``kind``; all others drive normally."""
    if kind not in HAZARD_KINDS:
        raise ConfigError(f"unknown hazard behavior {kind!r}")
    world, points = _new_world(config, config.n_vehicles, seed)
    assignment = {vid: config.profile("normal") for vid in range(config.n_vehicles)}
    assignment[0] = config.profile(kind)
    _populate(world, points, assignment)
    return world, assignment


def _decimation(dt: float, record_hz: float) -> int:
    ratio = 1.0 / (dt * record_hz)
    k = round(ratio)
    if k < 1 or abs(ratio - k) > 1e-9:
        raise ConfigError(f"record_hz {record_hz} does not divide the step rate {1 / dt}")
    return k


def compute_directives(world: World, hazardous=None) -> dict:
    """Advance every hazardous vehicle's behavior runtime and collect this tick's directives."""
    if hazardous is None:
        hazardous = {vid for vid, p in world.profiles.items() if p.kind != "normal"}
    out = {}
    for vid in sorted(world.vehicles):
        at_signal = world.signal_status(world.vehicles[vid])
        if vid in hazardous:
            out[vid] = behavior_directive(world.profiles[vid], world.runtimes[vid], world.clock,
                                          at_signal, world.streams.vehicle(vid))[0]
    return out


def run_single(world: World, assignment: dict[int, BehaviorProfile], duration: float,
               record_hz: float = 2.0, *, sensing_range: float = 50.0, keep_trace: bool = True,
               cell: dict | None = None):
    """Step ``world`` for ``duration`` seconds.

    Returns ``(traces, events, report)``; traces are 2 Hz samples in
    (time, vehicle id) order. Crashed vehicles are replaced every tick.
    """
    clock = world.clock
    dt = clock.dt
    decim = _decimation(dt, record_hz)
    n_ticks = round(duration / dt)
    spawn_stream = world.streams.get(SPAWN_KEY)
    hazardous = {vid for vid, p in world.profiles.items() if p.kind != "normal"}
    traces: list[TraceSample] = []
    gap_sum: dict[int, list] = {}
    events: list[CollisionEvent] = []

    for _ in range(n_ticks):
        new = step_world(world, compute_directives(world, hazardous), dt)
        if new:
            events.extend(new)
        replace_crashed(world, new, spawn_stream)
        if clock.tick % decim == 0:
            tt = clock.t
            for vid in sorted(world.vehicles):
                veh = world.vehicles[vid]
                g = veh.leader_gap
                if keep_trace:
                    traces.append(TraceSample(tt, vid, veh.behavior, veh.v, veh.lateral_offset,
                                              veh.control, g))
                acc = gap_sum.setdefault(vid, [0.0, 0])
                if g is not None and g <= sensing_range:
                    acc[0] += g
                    acc[1] += 1

    n_h = sum(1 for p in assignment.values() if p.kind != "normal")
    total, by_beh, per_min = collision_summary(events, duration) if duration > 0 else (0, {}, 0.0)
    report = RunReport(
        config=dict(cell or {}, duration=duration, record_hz=record_hz),
        mean_b2b={vid: (a[0] / a[1] if a[1] else None) for vid, a in sorted(gap_sum.items())},
        red_lights=red_light_counts(world.red_log),
        collisions_total=total,
        collisions_by_behavior=by_beh,
        collisions_per_minute=per_min,
        penetration_rate=penetration_rate(n_h, len(assignment)),
    )
    return traces, events, report


@dataclass
class SeedRun:
    seed: int
    traces: list[TraceSample]
    events: list[CollisionEvent]
    report: RunReport
    red_log: list[RedLightRecord]
    ego_log: list
    normals: tuple[int, ...]


@dataclass
class ValidationReport:
    kind: str
    runs: list[SeedRun]
    sensing_range: float = 50.0

    def b2b_table(self) -> list[tuple[str, list[float | None], float | None]]:
        """Rows ``(label, per-seed values, mean)`` for the ego, three sampled normals and all normals."""
        rows = []
        labels = ["ego"] + [f"normal_{i + 1}" for i in range(3)]
        for r, label in enumerate(labels):
            vals = []
            for run in self.runs:
                vid = 0 if r == 0 else (run.normals[r - 1] if r - 1 < len(run.normals) else None)
                vals.append(run.report.mean_b2b.get(vid) if vid is not None else None)
            rows.append((label, vals, _mean(vals)))
        vals = [self.normals_mean_b2b(run) for run in self.runs]
        rows.append(("normals_mean", vals, _mean(vals)))
        return rows

    def normals_mean_b2b(self, run: SeedRun) -> float | None:
        """Mean of the per-vehicle B2B means over all normal vehicles."""
        return _mean([g for vid, g in run.report.mean_b2b.items() if vid != 0])

    def ego_red_lights(self) -> list[tuple[int, int, int]]:
        """``(seed, runs, encounters)`` for the ego in each run."""
        out = []
        for run in self.runs:
            enc = [r for r in run.red_log if r.vehicle == 0]
            out.append((run.seed, sum(r.ran for r in enc), len(enc)))
        return out

    def distraction_windows(self, run: SeedRun) -> list[tuple[float, float]]:
        starts = [v for _, name, v in run.ego_log if name == "loss_start"]
        durs = [v for _, name, v in run.ego_log if name == "loss_duration"]
        return list(zip(starts, durs))


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return sum(vals) / len(vals) if vals else None


def run_validation(config: ExperimentConfig, kind: str | None = None, seeds=None) -> ValidationReport:
    kind = kind or config.behavior
    if kind not in HAZARD_KINDS:
        raise ConfigError(f"unknown hazard behavior {kind!r}")
    if seeds is None:
        seeds = config.seeds if config.seeds is not None else DEFAULT_VALIDATION_SEEDS.get(kind, (10,))
    runs = []
    for seed in seeds:
        world, assignment = build_validation_scenario(config, kind, seed)
        traces, events, report = run_single(
            world, assignment, config.duration, config.record_hz,
            sensing_range=config.sensing_range,
            cell={"mode": "validate", "behavior": kind, "n_vehicles": config.n_vehicles, "seed": seed})
        normals = tuple(sorted(v for v, p in assignment.items() if p.kind == "normal"))[:3]
        runs.append(SeedRun(seed, traces, events, report, list(world.red_log),
                            list(world.runtimes[0].log), normals))
        log.info("validate %s seed %d: %d collisions", kind, seed, report.collisions_total)
    return ValidationReport(kind, runs, config.sensing_range)


@dataclass
class CellResult:
    density: int
    penetration: float
    seed: int
    report: RunReport | None
    events: list[CollisionEvent]
    error: str | None = None
    traces: list[TraceSample] | None = None


def run_cell(config: ExperimentConfig, density: int, penetration: float, seed: int,
             keep_trace: bool = False) -> CellResult:
    try:
        world, assignment = build_scenario(config, density, penetration, seed)
    except ConfigError as exc:
        return CellResult(density, penetration, seed, None, [], str(exc))
    traces, events, report = run_single(
        world, assignment, config.duration, config.record_hz,
        sensing_range=config.sensing_range, keep_trace=keep_trace,
        cell={"mode": "grid", "density": density, "penetration": penetration, "seed": seed})
    return CellResult(density, penetration, seed, report, events, None, traces if keep_trace else None)


def _run_cell_args(args):
    return run_cell(*args)


@dataclass
class GridReport:
    densities: tuple[int, ...]
    penetrations: tuple[float, ...]
    seeds: tuple[int, ...]
    cells: dict[tuple[int, float, int], CellResult]

    @property
    def errors(self) -> dict:
        return {k: c.error for k, c in self.cells.items() if c.error}

    def matrix(self) -> list[list[float | None]]:
        """Mean total collisions per (density, penetration), averaged over seeds."""
        out = []
        for d in self.densities:
            row = []
            for p in self.penetrations:
                vals = [self.cells[(d, p, s)].report.collisions_total
                        for s in self.seeds if self.cells[(d, p, s)].report is not None]
                row.append(sum(vals) / len(vals) if vals else None)
            out.append(row)
        return out

    def by_behavior(self, penetration: float = 1.0) -> dict[int, dict[str, float]]:
        """Mean per-behavior collision attribution at one penetration, per density."""
        out = {}
        for d in self.densities:
            reps = [self.cells[(d, penetration, s)].report for s in self.seeds
                    if (d, penetration, s) in self.cells and self.cells[(d, penetration, s)].report]
            if not reps:
                continue
            out[d] = {k: sum(r.collisions_by_behavior.get(k, 0) for r in reps) / len(reps)
                      for k in HAZARD_KINDS}
        return out

    def comparable(self) -> tuple:
        """Everything that must agree between two runs of the same grid."""
        return tuple(
            (k, c.error, c.events, None if c.report is None else
             (c.report.collisions_total, sorted(c.report.collisions_by_behavior.items()),
              sorted(c.report.mean_b2b.items(), key=lambda kv: kv[0]), sorted(c.report.red_lights.items())))
            for k, c in sorted(self.cells.items()))


def run_grid(config: ExperimentConfig, workers: int | None = None, keep_trace: bool = False) -> GridReport:
    """Run every (density, penetration, seed) cell; cells may run in separate processes."""
    seeds = config.run_seeds
    keys = [(d, p, s) for d in config.densities for p in config.penetrations for s in seeds]
    if workers is None:
        workers = os.cpu_count() or 1
    args = [(config, d, p, s, keep_trace) for d, p, s in keys]
    if workers > 1 and len(keys) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_args, args))
    else:
        results = [_run_cell_args(a) for a in args]
    cells = {k: r for k, r in zip(keys, results)}
    return GridReport(tuple(config.densities), tuple(config.penetrations), tuple(seeds), cells)
