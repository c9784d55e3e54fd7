import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from hazsim.core import (
    EAST,
    NORTH,
    SOUTH,
    WEST,
    ConfigError,
    ControlVector,
    RandomStream,
    SamplingError,
    SignalPhase,
    SimClock,
    StreamBank,
    VehicleState,
    build_network,
    draw_truncated_gaussian,
    draw_uniform,
    kmh_to_ms,
    ms_to_kmh,
    truncation_mass,
)


def net3(seed=10):
    return build_network(3, 3, 200.0, kmh_to_ms(30), RandomStream(seed, 99))


class TestRandomStream:
    def test_same_key_same_sequence(self):
        a, b = RandomStream(10, 3), RandomStream(10, 3)
        assert [a.random() for _ in range(600)] == [b.random() for _ in range(600)]

    def test_keys_are_independent(self):
        a, b, c = RandomStream(10, 3), RandomStream(10, 4), RandomStream(11, 3)
        xs = [a.random() for _ in range(50)]
        assert xs != [b.random() for _ in range(50)]
        assert xs != [c.random() for _ in range(50)]

    def test_draw_order_on_other_streams_irrelevant(self):
        bank1, bank2 = StreamBank(10), StreamBank(10)
        for _ in range(300):
            bank2.vehicle(7).random()
        assert bank1.vehicle(3).random() == bank2.vehicle(3).random()

    def test_index_counts_draws(self):
        s = RandomStream(1, 1)
        s.normal()
        s.random()
        assert s.index == 3

    def test_uniform_moments(self):
        s = RandomStream(5, 0)
        x = np.array([s.random() for _ in range(200_000)])
        assert x.min() >= 0 and x.max() < 1
        assert abs(x.mean() - 0.5) < 0.003

    def test_normal_moments(self):
        s = RandomStream(5, 1)
        x = np.array([s.normal() for _ in range(100_000)])
        assert abs(x.mean()) < 0.015
        assert abs(x.std() - 1) < 0.01

    def test_negative_seed_rejected(self):
        with pytest.raises(ConfigError):
            RandomStream(-1, 0)

    def test_shuffle_is_permutation(self):
        items = list(range(40))
        RandomStream(3, 3).shuffle(items)
        assert sorted(items) == list(range(40)) and items != list(range(40))


@given(st.integers(0, 2**32), st.floats(-100, 100), st.floats(0.001, 50))
@settings(max_examples=60, deadline=None)
def test_draw_uniform_in_half_open_interval(seed, lo, width):
    s = RandomStream(seed, 0)
    for _ in range(20):
        x = draw_uniform(s, lo, lo + width)
        assert lo <= x < lo + width


@pytest.mark.parametrize("lo,hi", [(1.0, 1.0), (2.0, 1.0)])
def test_draw_uniform_rejects_empty(lo, hi):
    with pytest.raises(ConfigError):
        draw_uniform(RandomStream(0, 0), lo, hi)


@pytest.mark.parametrize("mean,sd,lo,hi", [
    (1.0, 0.25, 0.5, 1.5),
    (1.5, 0.5, 1.0, 3.0),
    (0.0, 1.0, 2.0, 5.0),
    (0.0, 1.0, -1.0, 0.3),
])
def test_truncation_mass_matches_quadrature(mean, sd, lo, hi):
    oracle, _ = integrate.quad(lambda x: stats.norm.pdf(x, mean, sd), lo, hi)
    assert truncation_mass(mean, sd, lo, hi) == pytest.approx(oracle, rel=1e-9)


def test_truncated_gaussian_moments_match_quadrature():
    mean, sd, lo, hi = 1.5, 0.5, 1.0, 3.0
    z, _ = integrate.quad(lambda x: stats.norm.pdf(x, mean, sd), lo, hi)
    m1, _ = integrate.quad(lambda x: x * stats.norm.pdf(x, mean, sd) / z, lo, hi)
    s = RandomStream(10, 5)
    x = np.array([draw_truncated_gaussian(s, mean, sd, lo, hi) for _ in range(100_000)])
    assert x.min() >= lo and x.max() <= hi
    assert x.mean() == pytest.approx(m1, rel=0.005)


def test_truncated_gaussian_negligible_mass_raises():
    with pytest.raises(SamplingError):
        draw_truncated_gaussian(RandomStream(0, 0), 0.0, 1.0, 8.0, 9.0)


@pytest.mark.parametrize("args", [(0.0, 0.0, -1.0, 1.0), (0.0, 1.0, 1.0, -1.0)])
def test_truncated_gaussian_bad_parameters(args):
    with pytest.raises(ConfigError):
        draw_truncated_gaussian(RandomStream(0, 0), *args)


class TestSignalPhase:
    @pytest.mark.parametrize("t,ew,ns", [
        (0.0, True, False), (25.9, True, False), (26.0, False, False), (29.9, False, False),
        (30.0, False, True), (55.9, False, True), (56.0, False, False), (60.0, True, False),
    ])
    def test_windows(self, t, ew, ns):
        ph = SignalPhase()
        assert ph.is_green(0, t) is ew
        assert ph.is_green(1, t) is ns

    def test_never_both_green(self):
        ph = SignalPhase(offset_s=17.3)
        for k in range(1200):
            t = k * 0.05
            assert not (ph.is_green(0, t) and ph.is_green(1, t))

    def test_offset_shifts_cycle(self):
        assert SignalPhase(offset_s=30.0).is_green(1, 0.0)

    @pytest.mark.parametrize("kw", [dict(green_s=0.0), dict(green_s=60.0), dict(offset_s=60.0),
                                    dict(green_s=50.0, all_red_s=6.0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SignalPhase(**kw)


class TestNetwork:
    def test_shape(self):
        net = net3()
        assert len(net.lanes) == 36
        assert len(net.intersections) == 9
        assert all(len(n.incoming) == 4 for n in net.intersections)
        assert net.box_half == 3.5

    def test_lane_ids_encode_node_and_heading(self):
        for ln in net3().lanes:
            assert ln.id == 4 * ln.from_node + ln.heading

    def test_successors_straight_and_right(self):
        net = net3()
        for ln in net.lanes:
            straight, right = (net.lanes[s] for s in ln.successors)
            assert straight.heading == ln.heading
            assert right.heading == (ln.heading + 3) % 4
            assert straight.from_node == right.from_node == ln.to_node

    def test_right_turn_headings(self):
        turns = {EAST: SOUTH, SOUTH: WEST, WEST: NORTH, NORTH: EAST}
        for ln in net3().lanes:
            assert (ln.heading + 3) % 4 == turns[ln.heading]

    def test_opposite_is_involution(self):
        net = net3()
        for ln in net.lanes:
            opp = net.lanes[ln.opposite]
            assert opp.opposite == ln.id
            assert (opp.from_node, opp.to_node) == (ln.to_node, ln.from_node)

    def test_strongly_connected_by_bfs(self):
        net = net3()

        def reach(start, edges):
            seen = {start}
            q = deque([start])
            while q:
                u = q.popleft()
                for w in edges[u]:
                    if w not in seen:
                        seen.add(w)
                        q.append(w)
            return seen

        fwd = {ln.id: ln.successors for ln in net.lanes}
        assert reach(0, fwd) == set(fwd)
        assert reach(0, net.predecessors) == set(fwd)

    def test_spawn_points(self):
        net = net3()
        per_lane = [s for lane, s in net.spawn_points if lane == 0]
        assert per_lane == [20.0 + 25.0 * k for k in range(7)]
        assert net.spawn_capacity == 36 * 7

    def test_offsets_seeded(self):
        a = [n.phase.offset_s for n in net3(10).intersections]
        assert a == [n.phase.offset_s for n in net3(10).intersections]
        assert a != [n.phase.offset_s for n in net3(11).intersections]
        assert all(0 <= x < 60 for x in a)

    @pytest.mark.parametrize("args", [(0, 3, 200.0, 8.0), (3, 3, 20.0, 8.0), (3, 3, 200.0, 0.0)])
    def test_invalid(self, args):
        with pytest.raises(ConfigError):
            build_network(*args, RandomStream(0, 0))


def test_units_roundtrip():
    assert kmh_to_ms(36.0) == pytest.approx(10.0)
    assert ms_to_kmh(kmh_to_ms(45.0)) == pytest.approx(45.0)


def test_clock():
    c = SimClock()
    for _ in range(20):
        c.advance()
    assert c.t == pytest.approx(1.0)


def test_vehicle_defaults():
    v = VehicleState(id=1, lane=0, s=10.0)
    assert v.front == pytest.approx(12.25)
    assert v.control == ControlVector(0.0, 0.0, 0.0)
    assert math.isclose(v.width, 2.0)
