"""Hazardous driving behaviors as per-tick directives over baseline driving.

Each vehicle carries a static profile and a mutable runtime.
:func:`behavior_directive` advances the runtime (resampling timers, offsets,
speed ratios, distraction windows) using only the vehicle's own stream, and
returns the directive that modulates the car-following layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import (
    MAX_OFFSET,
    ConfigError,
    ControlVector,
    RandomStream,
    SimClock,
    draw_truncated_gaussian,
    draw_uniform,
)


@dataclass(frozen=True)
class Normal:
    kind = "normal"


@dataclass(frozen=True)
class Speeding:
    ratio: float = 1.5
    kind = "speeding"

    def __post_init__(self):
        if not self.ratio > 1:
            raise ConfigError(f"speeding.ratio must be > 1, got {self.ratio}")


@dataclass(frozen=True)
class Impeding:
    ratio: float = 0.5
    kind = "impeding"

    def __post_init__(self):
        if not 0 < self.ratio < 1:
            raise ConfigError(f"impeding.ratio must be in (0, 1), got {self.ratio}")


@dataclass(frozen=True)
class CrimpOccupy:
    offset_mean: float = 0.85  # mixture components sit at +/- offset_mean
    offset_sd: float = 0.5
    bound: float = 1.7
    hold_lo: float = 2.0
    hold_hi: float = 10.0
    speed_factor: float = 0.8
    kind = "crimp_occupy"

    def __post_init__(self):
        if not self.offset_sd > 0:
            raise ConfigError("crimp_occupy.offset_sd must be positive")
        if not 0 < self.bound <= MAX_OFFSET:
            raise ConfigError(f"crimp_occupy.bound must be in (0, {MAX_OFFSET}]")
        if not 0 < self.hold_lo < self.hold_hi:
            raise ConfigError("crimp_occupy requires 0 < hold_lo < hold_hi")
        if not self.speed_factor > 0:
            raise ConfigError("crimp_occupy.speed_factor must be positive")


@dataclass(frozen=True)
class DrunkDrug:
    p_run: float = 0.5
    ratio_mean: float = 1.0
    ratio_sd: float = 0.25
    ratio_lo: float = 0.5
    ratio_hi: float = 1.5
    hold_lo: float = 4.0
    hold_hi: float = 10.0
    kind = "drunk_drug"

    def __post_init__(self):
        if not 0 <= self.p_run <= 1:
            raise ConfigError(f"drunk_drug.p_run must be in [0, 1], got {self.p_run}")
        if not (self.ratio_sd > 0 and 0 < self.ratio_lo < self.ratio_hi):
            raise ConfigError("drunk_drug ratio distribution is invalid")
        if not 0 < self.hold_lo < self.hold_hi:
            raise ConfigError("drunk_drug requires 0 < hold_lo < hold_hi")


@dataclass(frozen=True)
class Distracted:
    t_cycle: float = 30.0
    loss_mean: float = 1.5
    loss_sd: float = 0.5
    loss_lo: float = 1.0
    loss_hi: float = 3.0
    kind = "distracted"

    def __post_init__(self):
        if not (self.loss_sd > 0 and 0 < self.loss_lo < self.loss_hi):
            raise ConfigError("distracted loss distribution is invalid")
        if not self.t_cycle > 2 * self.loss_hi:
            raise ConfigError(f"distracted.cycle must exceed {2 * self.loss_hi} s")


BehaviorProfile = Normal | Speeding | Impeding | CrimpOccupy | DrunkDrug | Distracted

PROFILE_TYPES = {cls.kind: cls for cls in (Normal, Speeding, Impeding, CrimpOccupy, DrunkDrug, Distracted)}


@dataclass(frozen=True, slots=True)
class Directive:
    target_speed_factor: float = 1.0
    gap_factor: float = 1.0
    lateral_offset_target: float = 0.0
    obey_signals: bool = True
    freeze_control: bool = False

    def __post_init__(self):
        if not (self.target_speed_factor > 0 and self.gap_factor > 0):
            raise ConfigError("directive factors must be positive")


NORMAL_DIRECTIVE = Directive()


@dataclass(slots=True)
class BehaviorRuntime:
    """Evolving per-vehicle behavior state.

    ``log`` collects every sampled quantity as ``(t, name, value)`` so runs can
    be audited against the samplers after the fact.
    """

    next_resample_t: float = 0.0
    current_offset: float = 0.0
    current_ratio: float = 1.0
    freeze_until_t: float = -math.inf
    frozen_control: ControlVector | None = None
    cycle_start_t: float | None = None
    loss_start_t: float = math.inf
    loss_duration: float = 0.0
    ignore_signals_now: bool = False
    encounter_active: bool = False
    directive: Directive = NORMAL_DIRECTIVE
    log: list = field(default_factory=list)


def sample_offset(stream: RandomStream, profile: CrimpOccupy | None = None) -> float:
    """Draw a lateral offset from the truncated two-component mixture.

    A fair coin picks the component, then the draw is rejected (coin included)
    until it falls inside the bounds.
    """
    p = profile or CrimpOccupy()
    while True:
        mean = -p.offset_mean if stream.random() < 0.5 else p.offset_mean
        x = mean + p.offset_sd * stream.normal()
        if -p.bound <= x <= p.bound:
            return x


def sample_hold(stream: RandomStream, lo: float, hi: float) -> float:
    if not 0 < lo < hi:
        raise ConfigError(f"hold interval requires 0 < lo < hi, got [{lo}, {hi}]")
    return draw_uniform(stream, lo, hi)


def sample_drunk_ratio(stream: RandomStream, profile: DrunkDrug | None = None) -> float:
    p = profile or DrunkDrug()
    return draw_truncated_gaussian(stream, p.ratio_mean, p.ratio_sd, p.ratio_lo, p.ratio_hi)


def schedule_distraction(
    stream: RandomStream,
    cycle_start: float,
    t_cycle: float,
    profile: Distracted | None = None,
) -> tuple[float, float]:
    """Pick one loss-of-attention window inside ``[cycle_start, cycle_start + t_cycle]``.

    Returns ``(loss_start, loss_duration)``. The duration is drawn first and
    bounds the admissible start times on both sides.
    """
    p = profile or Distracted()
    if not t_cycle > 2 * p.loss_hi:
        raise ConfigError(f"t_cycle must exceed {2 * p.loss_hi} s, got {t_cycle}")
    duration = draw_truncated_gaussian(stream, p.loss_mean, p.loss_sd, p.loss_lo, p.loss_hi)
    start = draw_uniform(stream, cycle_start + duration, cycle_start + t_cycle - duration)
    return start, duration


def new_runtime(profile: BehaviorProfile) -> BehaviorRuntime:
    rt = BehaviorRuntime()
    if isinstance(profile, Speeding):
        rt.directive = Directive(profile.ratio, 1.0 / profile.ratio)
    elif isinstance(profile, Impeding):
        rt.directive = Directive(profile.ratio, 1.0 / profile.ratio)
    return rt


def behavior_directive(
    profile: BehaviorProfile,
    runtime: BehaviorRuntime,
    clock: SimClock,
    at_signal: bool,
    stream: RandomStream,
) -> tuple[Directive, BehaviorRuntime]:
    """Advance ``runtime`` to ``clock.t`` and return the directive for this tick.

    ``at_signal`` is true while the vehicle is approaching a red stop line; a
    drunk driver decides once per such encounter whether to run it. The
    runtime is updated in place and returned for convenience.
    """
    t = clock.t
    kind = profile.kind

    if kind == "crimp_occupy":
        if t >= runtime.next_resample_t:
            off = sample_offset(stream, profile)
            hold = sample_hold(stream, profile.hold_lo, profile.hold_hi)
            runtime.current_offset = off
            runtime.next_resample_t = t + hold
            runtime.directive = Directive(profile.speed_factor, 1.0, off)
            runtime.log.append((t, "offset", off))
            runtime.log.append((t, "hold", hold))

    elif kind == "drunk_drug":
        changed = False
        if t >= runtime.next_resample_t:
            ratio = sample_drunk_ratio(stream, profile)
            hold = sample_hold(stream, profile.hold_lo, profile.hold_hi)
            runtime.current_ratio = ratio
            runtime.next_resample_t = t + hold
            runtime.log.append((t, "ratio", ratio))
            runtime.log.append((t, "hold", hold))
            changed = True
        if at_signal and not runtime.encounter_active:
            runtime.encounter_active = True
            runtime.ignore_signals_now = stream.random() < profile.p_run
            runtime.log.append((t, "run_red", runtime.ignore_signals_now))
            changed = True
        elif not at_signal and runtime.encounter_active:
            runtime.encounter_active = False
            runtime.ignore_signals_now = False
            changed = True
        if changed or runtime.directive is NORMAL_DIRECTIVE:
            runtime.directive = Directive(
                runtime.current_ratio, 1.0, 0.0, not runtime.ignore_signals_now
            )

    elif kind == "distracted":
        if runtime.cycle_start_t is None:
            runtime.cycle_start_t = math.floor(t / profile.t_cycle) * profile.t_cycle
            _schedule(profile, runtime, stream)
        while t >= runtime.cycle_start_t + profile.t_cycle:
            runtime.cycle_start_t += profile.t_cycle
            _schedule(profile, runtime, stream)
        frozen = runtime.loss_start_t <= t < runtime.loss_start_t + runtime.loss_duration
        if frozen != runtime.directive.freeze_control:
            runtime.directive = Directive(freeze_control=frozen)
            if not frozen:
                runtime.frozen_control = None
        runtime.freeze_until_t = runtime.loss_start_t + runtime.loss_duration if frozen else -math.inf

    return runtime.directive, runtime


def _schedule(profile: Distracted, runtime: BehaviorRuntime, stream: RandomStream) -> None:
    start, duration = schedule_distraction(stream, runtime.cycle_start_t, profile.t_cycle, profile)
    runtime.loss_start_t = start
    runtime.loss_duration = duration
    runtime.log.append((runtime.cycle_start_t, "loss_start", start))
    runtime.log.append((runtime.cycle_start_t, "loss_duration", duration))
