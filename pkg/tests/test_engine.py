import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlmac import engine
from rlmac.engine import (
    CHANNEL_ERROR, COLLIDED, SUCCESS, ChannelParams, EventQueue, SchedulingError, Transmission,
    apply_channel_error, broadcast_piggyback, resolve_receptions,
)
from rlmac.topology import Topology, fully_connected, paper_5node

TAU = engine.DEFAULT_RESOLUTION


def test_queue_time_order():
    q = EventQueue()
    q.schedule("A", 5)
    q.schedule("B", 3)
    assert q.advance() == (3, ["B"])
    assert q.advance() == (5, ["A"])


def test_queue_tie_break_by_node():
    q = EventQueue()
    q.schedule("from2", 7, node=2)
    q.schedule("from1", 7, node=1)
    assert q.advance() == (7, ["from1", "from2"])


def test_queue_rank_before_node():
    q = EventQueue()
    q.schedule("late-kind", 7, rank=1, node=0)
    q.schedule("early-kind", 7, rank=0, node=9)
    assert q.advance()[1] == ["early-kind", "late-kind"]


def test_queue_rejects_past():
    q = EventQueue()
    q.schedule("x", 10)
    q.advance()
    with pytest.raises(SchedulingError):
        q.schedule("y", 9)


def test_single_transmission_succeeds():
    out = resolve_receptions([Transmission(1, 2, 0, TAU)], fully_connected(3), ChannelParams(0),
                             np.random.default_rng(0))
    assert out[0].status == SUCCESS
    assert out[0].receivers_overhearing == {2, 3}


def test_channel_error_extremes():
    rng = np.random.default_rng(0)
    assert all(apply_channel_error(SUCCESS, 0.0, rng) == SUCCESS for _ in range(1000))
    assert all(apply_channel_error(SUCCESS, 1.0, rng) == CHANNEL_ERROR for _ in range(1000))
    assert apply_channel_error(COLLIDED, 0.5, rng) == COLLIDED


def test_channel_error_frequency():
    rng = np.random.default_rng(3)
    n = 100_000
    errs = sum(apply_channel_error(SUCCESS, 0.05, rng) == CHANNEL_ERROR for _ in range(n))
    assert abs(errs / n - 0.05) < 0.005


def test_channel_params_range():
    with pytest.raises(ValueError):
        ChannelParams(1.5)


def _oracle(txs, topo):
    """Brute-force pairwise interval check at the intended receiver."""
    res = []
    for a in txs:
        ok = True
        for b in txs:
            if a is b:
                continue
            inter = max(a.start, b.start) < min(a.start + a.duration, b.start + b.duration)
            if inter and (b.sender == a.dest or b.sender in topo.one_hop(a.dest)):
                ok = False
        res.append(ok)
    return res


def test_random_interval_sets_match_oracle():
    rng = np.random.default_rng(11)
    topo = Topology.from_edges([1, 2, 3, 4], [(1, 2), (2, 3), (3, 4), (1, 3)])
    for case in range(1000):
        txs = []
        for k in range(int(rng.integers(1, 6))):
            s = int(rng.choice([1, 2, 3, 4]))
            d = int(rng.choice(sorted(topo.one_hop(s))))
            txs.append(Transmission(s, d, int(rng.integers(0, 4 * TAU)), TAU, k))
        out = resolve_receptions(txs, topo, ChannelParams(0), rng)
        got = {oc.transmission.payload_id: oc.status == SUCCESS for oc in out}
        want = _oracle(txs, topo)
        assert [got[t.payload_id] for t in txs] == want, case


def test_piggyback_lone_sender():
    p5 = paper_5node()
    out = resolve_receptions([Transmission(4, 5, 0, TAU, piggyback="hello")], p5, ChannelParams(0),
                             np.random.default_rng(0))
    inbox = broadcast_piggyback(out)
    assert set(inbox) == {1, 3, 5}
    assert inbox[1] == [(4, "hello")]


def test_piggyback_collided_delivers_nothing():
    t = fully_connected(3)
    out = resolve_receptions([Transmission(1, 2, 0, TAU), Transmission(3, 2, TAU // 2, TAU)], t,
                             ChannelParams(0), np.random.default_rng(0))
    assert all(oc.status == COLLIDED for oc in out)
    assert broadcast_piggyback(out) == {}


def test_piggyback_shared_listener():
    # 1 - 2 - 3 plus private listeners 4 (of 1) and 5 (of 3); 1 and 3 are not adjacent
    t = Topology.from_edges(range(1, 6), [(1, 2), (2, 3), (1, 4), (3, 5)])
    out = resolve_receptions([Transmission(1, 4, 0, TAU, 0, "p1"), Transmission(3, 5, 10, TAU, 1, "p3")],
                             t, ChannelParams(0), np.random.default_rng(0))
    inbox = broadcast_piggyback(out)
    assert 2 not in inbox
    assert inbox[4] == [(1, "p1")] and inbox[5] == [(3, "p3")]


def test_half_duplex_receiver():
    t = fully_connected(2)
    out = resolve_receptions([Transmission(1, 2, 0, TAU, 0), Transmission(2, 1, TAU // 3, TAU, 1)], t,
                             ChannelParams(0), np.random.default_rng(0))
    assert [oc.status for oc in out] == [COLLIDED, COLLIDED]


starts = st.lists(st.integers(0, 5 * TAU), min_size=2, max_size=5)


@settings(max_examples=200)
@given(starts)
def test_collision_symmetry_fully_connected(ss):
    t = fully_connected(5)
    txs = [Transmission(k + 1, 1 if k else 2, s, TAU, k) for k, s in enumerate(ss)]
    out = {oc.transmission.payload_id: oc.status for oc in
           resolve_receptions(txs, t, ChannelParams(0), np.random.default_rng(0))}
    for a, b in itertools.combinations(txs, 2):
        if engine.overlaps(a, b):
            assert out[a.payload_id] == COLLIDED and out[b.payload_id] == COLLIDED


@given(st.integers(0, 10**6), st.integers(1, 5))
def test_single_node_always_succeeds(start, dest_count):
    t = fully_connected(dest_count + 1)
    out = resolve_receptions([Transmission(1, 2, start, TAU)], t, ChannelParams(0), np.random.default_rng(0))
    assert out[0].status == SUCCESS
