import numpy as np
import pytest
from hypothesis import given, strategies as st

from rlmac.engine import PiggybackPayload
from rlmac.learning import LearningParams
from rlmac.rra import (
    RewardParams, ThroughputLedger, action_space, compute_reward, convergence_epoch, decide_transmit,
    encode_state, fairness_coefficient, neighborhood_throughput, simulate_rra,
)
from rlmac.topology import TrafficSpec, fully_connected, paper_5node


def test_action_space():
    a = action_space()
    assert len(a) == 20 and a[0] == pytest.approx(0.05) and a[-1] == 1.0
    assert np.all(np.diff(a) > 0)
    assert len(action_space(include_zero=True)) == 21


def test_decide_transmit():
    rng = np.random.default_rng(0)
    assert decide_transmit(1.0, True, rng)
    assert not any(decide_transmit(1.0, False, rng) for _ in range(100))
    freq = np.mean([decide_transmit(0.5, True, rng) for _ in range(10_000)])
    assert abs(freq - 0.5) < 0.02


def test_encode_state_examples():
    assert encode_state(10, 0) == 0
    assert encode_state(10, 4) == 2
    assert encode_state(10, 10) == 4
    assert encode_state(0, 0, previous=3) == 3
    with pytest.raises(ValueError):
        encode_state(3, 4)


@pytest.mark.parametrize("k,b", [(0, 0), (1, 0), (2, 1), (3, 1), (4, 2), (5, 2), (6, 3), (7, 3), (8, 4), (9, 4), (10, 4)])
def test_encode_state_bin_edges(k, b):
    # edges at 0.2, 0.4, 0.6, 0.8 belong to the upper bin
    assert encode_state(10, k) == b


@given(st.integers(1, 1000).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n), st.integers(0, n))))
def test_encode_state_monotone(args):
    n, a, b = args
    lo, hi = sorted((a, b))
    assert encode_state(n, lo) <= encode_state(n, hi)
    assert 0 <= encode_state(n, hi) <= 4


def test_reward_examples():
    assert compute_reward(0.05, 0.01) == 50
    assert compute_reward(0.05, -0.01) == -50
    assert compute_reward(0.0, 0.0) == -50
    assert compute_reward(0.05, 0.01, RewardParams(eps_s=0.1)) == -50


@given(st.floats(allow_nan=False, allow_infinity=False), st.floats(allow_nan=False, allow_infinity=False),
       st.floats(-1, 1), st.floats(-1, 1))
def test_reward_two_valued(ds, df, es, ef):
    assert compute_reward(ds, df, RewardParams(eps_s=es, eps_f=ef)) in (50.0, -50.0)


def test_fairness_examples():
    assert fairness_coefficient(0.2, [0.2, 0.2]) == 0
    assert fairness_coefficient(0.3, [0.1, 0.2]) == pytest.approx(-0.3)
    assert fairness_coefficient(0.3, []) == 0


unit = st.floats(0, 1)


@given(unit, st.lists(unit, max_size=6))
def test_fairness_properties(s, others):
    f = fairness_coefficient(s, others)
    assert f <= 0
    assert f == pytest.approx(fairness_coefficient(s, list(reversed(others))))
    assert (f == 0) == all(o == s for o in others)


def test_neighborhood_throughput():
    assert neighborhood_throughput(0.2, [0.1, 0.15]) == pytest.approx(0.45)
    assert neighborhood_throughput(0.2, []) == 0.2
    assert neighborhood_throughput(0.0, [0.0, 0.0]) == 0


def test_ledger_ingest():
    led = ThroughputLedger(1)
    pay = PiggybackPayload(success_counts={1: 7}, own_throughput=0.2, neighbor_throughputs={3: (0.3, 4)})
    led.ingest_piggyback(pay, 2, {2}, epoch=4)
    assert led.credited == {2: 7}
    assert led.latest({2, 3}) == {2: 0.2, 3: 0.3}
    led.ingest_piggyback(PiggybackPayload(success_counts={1: 99}), 9, {2}, epoch=4)
    assert 9 not in led.credited
    led.expire(9)
    assert led.latest({2, 3}) == {}


def test_ledger_throughput_units():
    led = ThroughputLedger(1)
    led.credited = {2: 10, 3: 5}
    assert led.close_epoch(0, 100) == pytest.approx(0.15)


def _small_run(seed, **kw):
    topo = fully_connected(3)
    return simulate_rra(topo, TrafficSpec.uniform(topo, 0.5), 60, seed, **kw)


def test_rra_determinism():
    a, b = _small_run(5), _small_run(5)
    assert np.array_equal(a.successes, b.successes) and np.array_equal(a.greedy, b.greedy)
    c = _small_run(6)
    assert not np.array_equal(a.successes, c.successes)


def test_rra_conservation():
    r = _small_run(1)
    assert np.all(r.successes <= r.transmitted)
    thr = r.throughput()
    assert np.all((thr >= 0) & (thr <= 1))


def test_rra_first_epoch_has_no_reward():
    r = _small_run(2)
    assert np.all(np.isnan(r.reward[:, 0]))
    vals = r.reward[~np.isnan(r.reward)]
    assert set(np.unique(vals)) <= {-50.0, 50.0}


def test_single_node_no_collisions():
    topo = paper_5node()
    loads = {n: 0.0 for n in topo.nodes}
    loads[1] = 0.3
    r = simulate_rra(topo, TrafficSpec("poisson", loads), 30, 0)
    c = r.nodes.index(1)
    assert r.transmitted[c].sum() > 0
    assert np.array_equal(r.successes[c], r.transmitted[c])


def test_convergence_requires_epsilon_floor():
    r = _small_run(3)
    # 60 epochs of 0.995 decay never reach the 0.05 floor
    assert convergence_epoch(r, LearningParams().epsilon_min, window=20) is None


def test_convergence_detected_with_fast_decay():
    topo = fully_connected(3)
    p = LearningParams(epsilon_decay=0.9)
    r = simulate_rra(topo, TrafficSpec.uniform(topo, 0.5), 600, 0, p)
    conv = convergence_epoch(r, p.epsilon_min, window=50)
    assert conv is not None and conv <= 600
