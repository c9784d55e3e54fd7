"""Baseline vehicle physics: car following, signals, collisions, crash replacement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .behaviors import NORMAL_DIRECTIVE, BehaviorProfile, BehaviorRuntime, Directive, new_runtime
from .core import (
    MAX_OFFSET,
    ConfigError,
    ControlVector,
    Intersection,
    RandomStream,
    RoadNetwork,
    SimClock,
    StreamBank,
    VehicleState,
)


@dataclass(frozen=True)
class FollowParams:
    desired_time_gap: float = 1.5
    min_standstill_gap: float = 2.0
    max_accel: float = 2.0
    comfortable_decel: float = 3.0
    accel_exponent: float = 4.0

    def __post_init__(self):
        if min(self.desired_time_gap, self.min_standstill_gap, self.max_accel,
               self.comfortable_decel, self.accel_exponent) <= 0:
            raise ConfigError("follow parameters must be positive")

    @property
    def max_brake(self) -> float:
        return 3.0 * self.comfortable_decel


def follow_accel(
    gap: float,
    v: float,
    v_lead: float,
    v_target: float,
    params: FollowParams,
    gap_factor: float = 1.0,
) -> float:
    """IDM acceleration towards ``v_target`` behind a leader ``gap`` metres ahead.

    ``gap = math.inf`` means no leader. ``gap_factor`` scales the desired time
    gap. The result is clipped to ``[-3 * comfortable_decel, max_accel]``.
    """
    a = params.max_accel
    acc = a * (1.0 - (v / v_target) ** params.accel_exponent)
    if gap != math.inf:
        dyn = v * params.desired_time_gap * gap_factor + v * (v - v_lead) / (
            2.0 * math.sqrt(a * params.comfortable_decel))
        s_star = params.min_standstill_gap + max(0.0, dyn)
        acc -= a * (s_star / max(gap, 1e-3)) ** 2
    return min(max(acc, -params.max_brake), a)


def equilibrium_gap(v: float, v_target: float, params: FollowParams, gap_factor: float = 1.0) -> float:
    """Steady-state gap of :func:`follow_accel` when following at constant speed ``v``."""
    s_star = params.min_standstill_gap + v * params.desired_time_gap * gap_factor
    return s_star / math.sqrt(1.0 - (v / v_target) ** params.accel_exponent)


class CollisionEvent(NamedTuple):
    t: float
    vehicle_a: int
    vehicle_b: int
    behaviors: tuple[str, str]
    lane: int
    position: float
    contact: str = ""  # same_lane, successor, oncoming or box


class RedLightRecord(NamedTuple):
    t: float
    vehicle: int
    behavior: str
    intersection: int
    ran: bool


@dataclass
class World:
    """Mutable state of one simulation run.

    ``vehicles`` holds live vehicles by id; crashed vehicles waiting for a free
    spawn point sit in ``pending``.
    """

    network: RoadNetwork
    streams: StreamBank
    clock: SimClock = field(default_factory=SimClock)
    follow: FollowParams = field(default_factory=FollowParams)
    vehicles: dict[int, VehicleState] = field(default_factory=dict)
    profiles: dict[int, BehaviorProfile] = field(default_factory=dict)
    runtimes: dict[int, BehaviorRuntime] = field(default_factory=dict)
    n_total: int = 0
    pending: list[int] = field(default_factory=list)
    contacts: set = field(default_factory=set)
    red_log: list[RedLightRecord] = field(default_factory=list)
    slew_rate: float = 1.0
    signal_lookahead: float = 50.0
    encounter_range: float = 15.0
    commit_decel: float = 4.5
    spawn_gap: float = 20.0

    def add_vehicle(self, vid: int, lane: int, s: float, profile: BehaviorProfile) -> VehicleState:
        veh = VehicleState(id=vid, lane=lane, s=s, behavior=profile.kind, rng_stream=vid)
        veh.next_lane = self.streams.route(vid).choice(self.network.lanes[lane].successors)
        self.vehicles[vid] = veh
        self.profiles[vid] = profile
        self.runtimes[vid] = new_runtime(profile)
        return veh

    def is_red(self, lane_id: int, t: float | None = None) -> bool:
        ln = self.network.lanes[lane_id]
        node = self.network.intersections[ln.to_node]
        return not node.phase.is_green(ln.axis, self.clock.t if t is None else t)

    def signal_status(self, veh: VehicleState) -> bool:
        """Update the vehicle's red-light latch; true while it approaches a red it can stop for."""
        ln = self.network.lanes[veh.lane]
        d = self.network.intersections[ln.to_node].stop_line - veh.front
        if d < 0:
            return False
        if not self.is_red(veh.lane):
            veh.gate = None
            return False
        if d > self.signal_lookahead or _queued(veh, d):
            return False
        if veh.gate is None:
            veh.gate = "go" if veh.v * veh.v > 2.0 * self.commit_decel * max(d, 1e-6) else "stop"
        return veh.gate == "stop"

    def lanes_sorted(self) -> dict[int, list[VehicleState]]:
        by_lane: dict[int, list[VehicleState]] = {}
        for veh in self.vehicles.values():
            by_lane.setdefault(veh.lane, []).append(veh)
        for lst in by_lane.values():
            lst.sort(key=_by_s)
        return by_lane


def _queued(veh: VehicleState, to_stop: float) -> bool:
    """True when another vehicle stands between ``veh`` and its stop line."""
    return veh.leader_gap is not None and veh.leader_gap < to_stop


def _by_s(veh: VehicleState) -> float:
    return veh.s


def signal_gate(
    vehicle: VehicleState,
    directive: Directive,
    intersection: Intersection,
    clock: SimClock,
    axis: int,
) -> float | None:
    """Stop-line position the vehicle must treat as a standing obstacle, if any.

    Vehicles that had already committed when the light turned red (``gate ==
    "go"``) and drivers ignoring signals get no virtual obstacle.
    """
    if not directive.obey_signals or vehicle.gate == "go":
        return None
    if vehicle.front > intersection.stop_line:
        return None
    if intersection.phase.is_green(axis, clock.t):
        return None
    return intersection.stop_line


def _leader(veh: VehicleState, lane_list: list[VehicleState], idx: int,
            by_lane: dict, lane_len: float) -> tuple[float, float]:
    """Bumper gap and speed of the vehicle ahead along the planned route."""
    if idx + 1 < len(lane_list):
        lead = lane_list[idx + 1]
        return lead.s - veh.s - 0.5 * (lead.length + veh.length), lead.v
    nxt = by_lane.get(veh.next_lane)
    if nxt:
        lead = nxt[0]
        return lane_len - veh.s + lead.s - 0.5 * (lead.length + veh.length), lead.v
    return math.inf, 0.0


def step_world(world: World, directives: dict[int, Directive], dt: float) -> list[CollisionEvent]:
    """Advance ``world`` by one tick in place and return collision onsets.

    Controls are computed for every vehicle from the pre-step snapshot
    (ascending id), then all vehicles are integrated semi-implicitly.
    """
    clock = world.clock
    if abs(dt - clock.dt) > 1e-12:
        raise ConfigError(f"step dt {dt} does not match clock dt {clock.dt}")
    net = world.network
    lanes = net.lanes
    nodes = net.intersections
    fp = world.follow
    t = clock.t
    a_max, b_max = fp.max_accel, fp.max_brake
    slew = world.slew_rate
    box_half = net.box_half
    by_lane = world.lanes_sorted()
    index = {veh.id: i for lst in by_lane.values() for i, veh in enumerate(lst)}

    plan = []
    for vid in sorted(world.vehicles):
        veh = world.vehicles[vid]
        d = directives.get(vid, NORMAL_DIRECTIVE)
        ln = lanes[veh.lane]
        node = nodes[ln.to_node]
        gap, v_lead = _leader(veh, by_lane[veh.lane], index[vid], by_lane, ln.length)
        veh.leader_gap = gap if gap != math.inf else None
        world.signal_status(veh)
        cap = d.target_speed_factor * ln.speed_limit
        if d.freeze_control:
            rt = world.runtimes[vid]
            if rt.frozen_control is None:
                rt.frozen_control = veh.control
            ctrl = rt.frozen_control
            acc = ctrl.throttle * a_max - ctrl.brake * b_max
            lat_rate = ctrl.steer * slew
        else:
            acc = follow_accel(gap, veh.v, v_lead, cap, fp, d.gap_factor)
            stop = signal_gate(veh, d, node, clock, ln.axis)
            if stop is None and d.obey_signals and veh.gate != "go":
                dist = node.stop_line - veh.front
                if 0 <= dist <= world.signal_lookahead and _box_blocked(veh, by_lane, box_half, fp):
                    stop = node.stop_line
            if stop is not None:
                acc = min(acc, follow_accel(stop - veh.front, veh.v, 0.0, cap, fp, d.gap_factor))
            lat = (d.lateral_offset_target - veh.lateral_offset) / dt
            lat_rate = min(max(lat, -slew), slew)
            if acc >= 0:
                ctrl = ControlVector(min(acc / a_max, 1.0), 0.0, lat_rate / slew)
            else:
                ctrl = ControlVector(0.0, min(-acc / b_max, 1.0), lat_rate / slew)
        plan.append((veh, acc, lat_rate, ctrl, cap))

    for veh, acc, lat_rate, ctrl, cap in plan:
        veh.control = ctrl
        front_old = veh.front
        v = veh.v + acc * dt
        veh.v = v = 0.0 if v < 0.0 else (cap if v > cap else v)
        veh.s += v * dt
        off = veh.lateral_offset + lat_rate * dt
        veh.lateral_offset = -MAX_OFFSET if off < -MAX_OFFSET else (MAX_OFFSET if off > MAX_OFFSET else off)
        ln = lanes[veh.lane]
        stop_line = nodes[ln.to_node].stop_line
        red = world.is_red(veh.lane, t)
        if front_old <= stop_line < veh.front:
            if veh.encounter_open:
                world.red_log.append(RedLightRecord(t + dt, veh.id, veh.behavior, ln.to_node, red))
                veh.encounter_open = False
        elif veh.front <= stop_line:
            if veh.encounter_open and not red:
                world.red_log.append(RedLightRecord(t + dt, veh.id, veh.behavior, ln.to_node, False))
                veh.encounter_open = False
            elif (red and not veh.encounter_open and veh.gate == "stop"
                  and stop_line - veh.front <= world.encounter_range
                  and not _queued(veh, stop_line - veh.front)):
                veh.encounter_open = True
        while veh.s > ln.length:
            veh.s -= ln.length
            veh.prev_lane = veh.lane
            veh.lane = veh.next_lane
            ln = lanes[veh.lane]
            veh.next_lane = world.streams.route(veh.id).choice(ln.successors)
            veh.gate = None
            veh.encounter_open = False

    clock.advance()
    return detect_collisions(world)


def _box_blocked(veh: VehicleState, by_lane: dict, box_half: float, fp: FollowParams) -> bool:
    """True if the next lane has no room to clear the intersection box."""
    nxt = by_lane.get(veh.next_lane)
    if not nxt:
        return False
    lead = nxt[0]
    return lead.s - 0.5 * lead.length < box_half + veh.length + fp.min_standstill_gap


def movements_conflict(a: tuple[int, int], b: tuple[int, int]) -> bool:
    """Whether two (approach heading, exit heading) movements share box space.

    Only straight and right-turn movements exist: paths from different
    approaches conflict when both go straight on crossing axes or when they
    merge into the same exit lane.
    """
    (a_in, a_out), (b_in, b_out) = a, b
    if a_in == b_in:
        return False
    if a_out == b_out:
        return True
    return a_in == a_out and b_in == b_out and (a_in - b_in) % 2 == 1


_UNIT = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))


def _box_footprint(veh: VehicleState, movement: tuple[int, int], heading: int, along: float, lane_width: float):
    """Axis-aligned footprint in intersection-centred coordinates.

    ``along`` is the signed distance of the vehicle centre past the node
    centre along ``heading``; lanes sit half a lane width right of the axis.
    """
    ex, ey = _UNIT[heading]
    lat = veh.lateral_offset - 0.5 * lane_width
    x = ex * along - ey * lat
    y = ey * along + ex * lat
    if heading % 2 == 0:
        return veh, movement, x, y, 0.5 * veh.length, 0.5 * veh.width
    return veh, movement, x, y, 0.5 * veh.width, 0.5 * veh.length


def _lat_overlap(oa: float, ob: float, wa: float, wb: float) -> bool:
    return abs(oa - ob) < 0.5 * (wa + wb)


def current_contacts(world: World) -> dict[tuple[int, int], str]:
    """Vehicle pairs whose footprints currently overlap, mapped to the contact type."""
    net = world.network
    lanes = net.lanes
    box_half = net.box_half
    by_lane = world.lanes_sorted()
    pairs: dict[tuple[int, int], str] = {}
    if not by_lane:
        return pairs
    max_len = max(v.length for v in world.vehicles.values())
    boxes: dict[int, list] = {}

    for lane_id, lst in by_lane.items():
        ln = lanes[lane_id]
        n = len(lst)
        for i in range(n):
            a = lst[i]
            for j in range(i + 1, n):
                b = lst[j]
                if b.s - a.s >= 0.5 * (a.length + b.length):
                    break
                if _lat_overlap(a.lateral_offset, b.lateral_offset, a.width, b.width):
                    pairs.setdefault((min(a.id, b.id), max(a.id, b.id)), "same_lane")
            to_end = ln.length - a.s
            if to_end < max_len:
                for b in by_lane.get(a.next_lane, ()):
                    if to_end + b.s >= 0.5 * (a.length + b.length):
                        break
                    if _lat_overlap(a.lateral_offset, b.lateral_offset, a.width, b.width):
                        pairs.setdefault((min(a.id, b.id), max(a.id, b.id)), "successor")
            reach = box_half + a.length
            if to_end < reach:
                boxes.setdefault(ln.to_node, []).append(
                    _box_footprint(a, (ln.heading, lanes[a.next_lane].heading), ln.heading,
                                   a.s - ln.length, ln.width))
            if a.prev_lane >= 0 and a.s < reach:
                boxes.setdefault(ln.from_node, []).append(
                    _box_footprint(a, (lanes[a.prev_lane].heading, ln.heading), ln.heading,
                                   a.s, ln.width))

        opp = by_lane.get(ln.opposite)
        if opp and lane_id < ln.opposite:
            # Overlap needs offsets pointing towards each other summing past this.
            need = ln.width - 0.5 * (max(v.width for v in lst) + max(v.width for v in opp))
            if max(v.lateral_offset for v in lst) + max(v.lateral_offset for v in opp) > need:
                for a in lst:
                    for b in opp:
                        if abs(a.s - (ln.length - b.s)) < 0.5 * (a.length + b.length) and _lat_overlap(
                                a.lateral_offset, ln.width - b.lateral_offset, a.width, b.width):
                            pairs.setdefault((min(a.id, b.id), max(a.id, b.id)), "oncoming")

    for occupants in boxes.values():
        for i in range(len(occupants)):
            a, ma, xa, ya, hxa, hya = occupants[i]
            for j in range(i + 1, len(occupants)):
                b, mb, xb, yb, hxb, hyb = occupants[j]
                # Turns switch heading at the node centre, so footprints alone
                # would flag harmless neighbours; require crossing paths too.
                if a.lane == b.lane or not movements_conflict(ma, mb):
                    continue
                if abs(xa - xb) < hxa + hxb and abs(ya - yb) < hya + hyb:
                    pairs.setdefault((min(a.id, b.id), max(a.id, b.id)), "box")
    return pairs


def detect_collisions(world: World) -> list[CollisionEvent]:
    """Collision onsets: contact pairs that were not in contact on the previous tick."""
    now = current_contacts(world)
    events = []
    t = world.clock.t
    for a, b in sorted(now.keys() - world.contacts):
        va, vb = world.vehicles[a], world.vehicles[b]
        events.append(CollisionEvent(t, a, b, (va.behavior, vb.behavior), va.lane, va.s, now[(a, b)]))
    world.contacts = set(now)
    return events


def _spot_free(world: World, lane_id: int, s: float, length: float, width: float, by_lane: dict) -> bool:
    lanes = world.network.lanes
    ln = lanes[lane_id]
    gap = world.spawn_gap
    for b in by_lane.get(lane_id, ()):
        if abs(b.s - s) - 0.5 * (b.length + length) < gap:
            return False
    for succ in ln.successors:
        for b in by_lane.get(succ, ()):
            if ln.length - s + b.s - 0.5 * (b.length + length) < gap:
                return False
    for pred in world.network.predecessors[lane_id]:
        for b in by_lane.get(pred, ()):
            if s + lanes[pred].length - b.s - 0.5 * (b.length + length) < gap:
                return False
    for b in by_lane.get(ln.opposite, ()):
        if (abs(ln.length - b.s - s) - 0.5 * (b.length + length) < gap
                and _lat_overlap(0.0, ln.width - b.lateral_offset, width, b.width)):
            return False
    return True


def replace_crashed(world: World, events: list[CollisionEvent], spawn_stream: RandomStream) -> list[int]:
    """Remove every vehicle involved in ``events`` and respawn waiting vehicles.

    Respawned vehicles keep id and behavior profile, start at rest on lane
    centre with a fresh runtime. Vehicles with no free spawn point stay pending
    and are retried on the next call. Returns the ids respawned now.
    """
    for ev in events:
        for vid in (ev.vehicle_a, ev.vehicle_b):
            if vid in world.vehicles:
                del world.vehicles[vid]
                world.pending.append(vid)
    if not world.pending:
        return []
    world.contacts = {p for p in world.contacts if p[0] in world.vehicles and p[1] in world.vehicles}
    points = world.network.spawn_points
    by_lane = world.lanes_sorted()
    respawned = []
    still = []
    for vid in sorted(world.pending):
        start = min(int(spawn_stream.random() * len(points)), len(points) - 1)
        placed = False
        for k in range(len(points)):
            lane_id, s = points[(start + k) % len(points)]
            if _spot_free(world, lane_id, s, 4.5, 2.0, by_lane):
                profile = world.profiles[vid]
                old_log = world.runtimes[vid].log
                veh = world.add_vehicle(vid, lane_id, s, profile)
                world.runtimes[vid].log = old_log
                by_lane.setdefault(lane_id, []).append(veh)
                by_lane[lane_id].sort(key=_by_s)
                respawned.append(vid)
                placed = True
                break
        if not placed:
            still.append(vid)
    world.pending = still
    return respawned
