import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from rlmac.engine import DEFAULT_RESOLUTION as TAU
from rlmac.learning import LearningParams
from rlmac.rng import Streams
from rlmac.tdma import (
    DefragError, DefragState, FrameConfig, TdmaAgent, apply_frame_shrink, compute_f_min, defrag_iteration,
    detect_convergence, frame_feedback, frame_step, init_frames, make_frame_config, redundancy_pct,
    replay, resolve_frame, residual_redundancy, simulate_defrag, simulate_mab,
)
from rlmac.topology import Topology, fully_connected, mesh20

LAGGED3_OFFSETS = {1: 0, 2: int(0.4 * TAU), 3: int(0.75 * TAU)}


def test_f_min_and_frame_length():
    fc9 = make_frame_config(fully_connected(9), 1.67)
    assert (fc9.f_min, fc9.f) == (9, 15)
    assert redundancy_pct(fc9.f, fc9.f_min) == pytest.approx(66.67, abs=0.01)
    assert make_frame_config(fully_connected(3), 1.33).f == 4
    single = Topology.from_edges([1], [])
    assert compute_f_min(single, lam=2, m=2) == 4
    assert compute_f_min(fully_connected(3), lam=1, m=2) == 6


def test_f_min_partial_uses_two_hop():
    t = mesh20()
    assert compute_f_min(t) == max(1 + len(t.two_hop(i)) for i in t.nodes)


def test_redundancy_pct():
    assert redundancy_pct(15, 9) == pytest.approx(200 / 3)
    assert redundancy_pct(9, 9) == 0


def test_frame_config_validation():
    with pytest.raises(ValueError):
        FrameConfig(f=3, f_min=4)
    with pytest.raises(ValueError):
        FrameConfig(f=4, f_min=3, tau=100, s=7)  # 100 ticks cannot hold 7 micro-slots evenly
    fc = FrameConfig(f=7, f_min=3, m=2)
    assert fc.arm_mask().tolist() == [True] * 6 + [False]


def test_init_frames():
    t = fully_connected(3)
    fc = make_frame_config(t, 1.33)
    assert init_frames(t, fc, offsets=LAGGED3_OFFSETS) == LAGGED3_OFFSETS
    assert init_frames(t, fc, offsets={1: 0, 2: 0, 3: 0}) == {1: 0, 2: 0, 3: 0}
    with pytest.raises(ValueError):
        init_frames(t, fc, offsets={1: 0, 2: 0, 3: fc.T})
    offs = init_frames(t, fc, np.random.default_rng(0), pin=1)
    assert offs[1] == 0 and all(0 <= d < fc.T for d in offs.values())
    assert all(d % fc.micro == 0 for d in offs.values())
    lagged = init_frames(fully_connected(30), fc, np.random.default_rng(1), max_lag=fc.tau)
    assert max(lagged.values()) < fc.tau


def test_mini_slot_collision_pattern():
    # f = 7 mini-slots of tau/2; nodes 1, 2, 3 start in mini-slots 1, 5, 2
    fc = FrameConfig(f=7, f_min=3, m=2)
    t = fully_connected(3)
    offsets = {1: 0, 2: int(0.3 * TAU), 3: int(0.2 * TAU)}
    arms = {1: 1, 2: 5, 3: 2}
    starts = [(offsets[n] + arms[n] * fc.mini) % fc.T for n in (1, 2, 3)]
    clean = resolve_frame(starts, [0, 1, 2], t.adjacency_matrix(), fc.T, fc.tau)
    assert not clean[0].any() and not clean[2].any()
    assert clean[1, [0, 2]].all()


def test_single_node_any_arm():
    t = Topology.from_edges([1, 2], [(1, 2)])
    fc = FrameConfig(f=4, f_min=2)
    clean = resolve_frame([3 * fc.mini], [0], t.adjacency_matrix(), fc.T, fc.tau)
    assert clean[0, 1]


def test_two_nodes_distinct_arms():
    t = fully_connected(2)
    fc = FrameConfig(f=4, f_min=2)
    rng = np.random.default_rng(0)
    a1 = TdmaAgent(1, np.array([1.0, 0, 0, 0]))
    a2 = TdmaAgent(2, np.array([0, 0, 1.0, 0]))
    starts = frame_step(a1, fc, 0, rng) + frame_step(a2, fc, 0, rng)
    clean = resolve_frame(starts, [0, 1], t.adjacency_matrix(), fc.T, fc.tau)
    assert clean[0, 1] and clean[1, 0]


def test_frame_feedback_updates():
    ag = TdmaAgent(1, np.zeros(4), arms=(2,))
    frame_feedback(ag, [1.0], LearningParams(epsilon0=0, epsilon_min=0))
    assert ag.values[2] == pytest.approx(0.9)
    frame_feedback(ag, [-1.0], LearningParams(epsilon0=0, epsilon_min=0))
    assert ag.values[2] == pytest.approx(0.71)
    ag.converged = True
    frame_feedback(ag, [-1.0])
    assert ag.values[2] == pytest.approx(0.71)


def test_convergence_detector():
    g = [(0, 1, 2)] * 60
    assert detect_convergence([0] * 60, g, 50) == 49
    coll = [0] * 30 + [1] + [0] * 60
    assert detect_convergence(coll, [(0, 1, 2)] * 91, 50) == 80
    assert detect_convergence([0] * 49, g[:49], 50) is None


def test_three_node_mab_converges():
    t = fully_connected(3)
    fc = make_frame_config(t, 1.33)
    for seed in range(5):
        r = simulate_mab(t, fc, LAGGED3_OFFSETS, 10_000, seed)
        assert r.converged
        assert replay(t, fc, LAGGED3_OFFSETS, {n: r.arms[n][0] * fc.s for n in r.nodes}) == 0


def test_post_convergence_collision_free():
    t = fully_connected(3)
    fc = make_frame_config(t, 1.33)
    r = simulate_mab(t, fc, LAGGED3_OFFSETS, 10_000, 1, stop_on_converge=False)
    assert r.converged
    assert r.collisions[r.converged_frame:].sum() == 0


def test_defrag_three_node_walkthrough():
    t = fully_connected(3)
    fc = make_frame_config(t, 1.33)
    d = simulate_defrag(t, fc, LAGGED3_OFFSETS, {1: (0,), 2: (1,), 3: (2,)}, 0, trace=True)
    collided = [c for _, c in d.trace]
    assert d.mu_shift[1] == 0
    assert collided[2].tolist() == [True, True, False]  # node 2 backs into node 1
    assert not collided[3].any()  # node 2 undid its shift
    assert collided[4].tolist() == [False, True, True]  # node 3 backs into node 2
    assert not any(c.any() for c in collided[5:])
    assert d.shrunk and d.f_shrunk == max(d.mu_shift.values())
    assert replay(t, d.fc, d.offsets, d.mu) == 0
    assert residual_redundancy(d.fc) < redundancy_pct(fc.f, fc.f_min)


def test_defrag_anchor_node_stays():
    st_ = DefragState(1, 0, 0)
    assert defrag_iteration(st_, None) == 0
    assert st_.c == 1 and st_.mu_shift == 0


def test_defrag_lone_node_reaches_frame_start():
    st_ = DefragState(1, 12, 12)
    moves = []
    while st_.c == 0:
        moves.append(defrag_iteration(st_, False))
    assert st_.mu == 0 and st_.mu_shift == 12
    assert moves == [-1] * 12 + [0]


def test_defrag_undo_after_back_collision():
    st_ = DefragState(1, 5, 5)
    defrag_iteration(st_, None)
    assert defrag_iteration(st_, True) == 1
    assert st_.c == 1 and st_.mu == 5


def test_frame_shrink():
    fc = FrameConfig(f=4, f_min=3)
    assert apply_frame_shrink(fc, 0) == fc
    assert apply_frame_shrink(fc, 4).T == fc.T - 4 * fc.micro
    with pytest.raises(DefragError):
        apply_frame_shrink(fc, 8)


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(3, 6), st.sampled_from([1.33, 1.67, 2.0]), st.integers(0, 10_000))
def test_defrag_terminates_within_bound(n, K, seed):
    t = fully_connected(n)
    fc = make_frame_config(t, K)
    offs = init_frames(t, fc, Streams(seed).get(0, "offsets"), max_lag=fc.tau)
    mab = simulate_mab(t, fc, offs, 20_000, seed)
    if not mab.converged:
        return
    d = simulate_defrag(t, fc, offs, mab.arms, seed)
    bound = 2 * fc.f * fc.s
    assert all(v is not None and v <= bound for v in d.done_frames.values())
    if d.shrunk:
        assert replay(t, d.fc, d.offsets, d.mu) == 0
        assert d.fc.T >= d.fc.occupied
    # the search only ever moves transmissions towards the frame start
    assert all(v >= 0 for v in d.mu_shift.values())


def test_mab_deterministic():
    t = fully_connected(4)
    fc = make_frame_config(t, 1.5)
    offs = init_frames(t, fc, np.random.default_rng(3))
    a = simulate_mab(t, fc, offs, 3000, 7)
    b = simulate_mab(t, fc, offs, 3000, 7)
    assert a.converged_frame == b.converged_frame and a.arms == b.arms
    assert np.array_equal(a.collisions, b.collisions)
