"""Time-asynchronous TDMA: bandit mini-slot selection on per-node local frames
and micro-slot defragmentation with a collective frame shrink.

Every node repeats a local frame of ``T`` ticks that starts at its private
offset ``delta_i``. Because all frames share the same period, one frame
iteration is resolved on a circle of circumference ``T``: a transmission
starting at ``phi`` occupies the arc ``[phi, phi + tau)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .engine import ChannelParams, Transmission
from .learning import (LearningParams, classical_bandit_update, epsilon_greedy_select,
                       hysteretic_bandit_update, new_arms)
from .rng import NETWORK, Streams
from .topology import Topology, TopologyError

# bandit exploration is driven by penalties, not by random actions
TDMA_LEARNING = LearningParams(epsilon0=0.0, epsilon_min=0.0)


class DefragError(RuntimeError):
    pass


@dataclass(frozen=True)
class FrameConfig:
    f: int  # frame length in mini-slots before any shrink
    f_min: int
    tau: int = engine.DEFAULT_RESOLUTION
    m: int = 1
    s: int = 7
    lam: int = 1
    shrunk: int = 0  # micro-slots removed by defragmentation

    def __post_init__(self):
        if self.m < 1 or self.s < 1 or self.lam < 1 or self.f_min < 1:
            raise ValueError("m, s, lam and f_min must be positive integers")
        if self.tau % self.m or (self.tau // self.m) % self.s:
            raise ValueError(f"tau={self.tau} ticks is not divisible into {self.m} mini-slots "
                             f"of {self.s} micro-slots; pick another resolution")
        if self.f < self.f_min:
            raise ValueError(f"frame length {self.f} below f_min {self.f_min}")
        if self.f - self.m + 1 < self.lam:
            raise ValueError("frame too short for lam non-overlapping start slots")
        if self.shrunk < 0 or self.T < self.occupied:
            raise ValueError("frame shrunk below the occupied transmission time")

    @property
    def mini(self) -> int:
        return self.tau // self.m

    @property
    def micro(self) -> int:
        return self.mini // self.s

    @property
    def T(self) -> int:
        """Current frame length in ticks."""
        return self.f * self.mini - self.shrunk * self.micro

    @property
    def occupied(self) -> int:
        return self.f_min * self.mini

    @property
    def K(self) -> float:
        return self.f / self.f_min

    @property
    def n_micro(self) -> int:
        return self.T // self.micro

    def arm_mask(self) -> np.ndarray:
        """Start slots whose transmission fits inside the frame."""
        return np.arange(self.f) <= self.f - self.m


def compute_f_min(topology: Topology, lam: int = 1, m: int = 1) -> int:
    """Minimum synchronous frame length in mini-slots.

    Fully connected: every node needs its own slot. Otherwise the largest
    two-hop neighborhood (self included) must fit, since any two nodes within
    two hops can collide at a common receiver.
    """
    if lam < 1 or m < 1:
        raise ValueError("lam and m must be >= 1")
    if topology.is_fully_connected():
        return len(topology) * lam * m
    return lam * m * max(1 + len(topology.two_hop(i)) for i in topology.nodes)


def frame_length(K: float, f_min: int) -> int:
    if K < 1:
        raise ValueError(f"redundancy factor K={K} below 1")
    return max(f_min, int(round(K * f_min)))


def make_frame_config(topology: Topology, K: float, m: int = 1, s: int = 7, lam: int = 1,
                      tau: int = engine.DEFAULT_RESOLUTION) -> FrameConfig:
    f_min = compute_f_min(topology, lam, m)
    return FrameConfig(frame_length(K, f_min), f_min, tau, m, s, lam)


def init_frames(topology: Topology, fc: FrameConfig, rng: np.random.Generator | None = None,
                offsets: dict | None = None, pin: int | None = None,
                max_lag: float | None = None, quantum: int | None = None) -> dict[int, int]:
    """Per-node frame offsets in ticks.

    Given ``offsets`` (ticks) are validated and returned. Otherwise each lag is
    drawn uniformly from the multiples of ``quantum`` ticks (default one
    micro-slot) in ``[0, max_lag)``, the whole frame by default; ``pin``
    forces one node to lag 0.
    """
    if offsets is not None:
        out = {int(k): int(v) for k, v in offsets.items()}
        for n in topology.nodes:
            if n not in out:
                raise ValueError(f"no offset for node {n}")
        for n, d in out.items():
            if not 0 <= d < fc.T:
                raise ValueError(f"offset {d} of node {n} outside [0, {fc.T})")
        return out
    hi = fc.T if max_lag is None else int(round(max_lag))
    if not 0 < hi <= fc.T:
        raise ValueError(f"max_lag must be in (0, {fc.T}] ticks")
    if quantum is None:
        quantum = fc.micro
    slots = max(1, -(-hi // quantum))
    out = {n: int(rng.integers(0, slots)) * quantum for n in topology.nodes}
    if pin is not None:
        out[pin] = 0
    return out


def redundancy_pct(f_current: float, f_min: float) -> float:
    """Percentage of frame time beyond the synchronous minimum (same units)."""
    if f_min <= 0:
        raise ValueError("f_min must be positive")
    return 100.0 * (f_current - f_min) / f_min


# ---------------------------------------------------------------- resolution

def circular_overlap(starts: np.ndarray, T: int, tau: int) -> np.ndarray:
    """Pairwise overlap of arcs ``[start, start + tau)`` on a circle of length T."""
    d = (starts[:, None] - starts[None, :]) % T
    ov = (d < tau) | (d > T - tau)
    np.fill_diagonal(ov, False)
    return ov


def resolve_frame(starts, owner, adj: np.ndarray, T: int, tau: int) -> np.ndarray:
    """``clean[a, l]``: transmission ``a`` is decodable at node index ``l``.

    ``owner`` maps each transmission to a node index into ``adj``. A listener
    fails if it transmits during ``a`` or hears any other overlapping sender;
    overlapping packets of one sender destroy each other.
    """
    starts = np.asarray(starts, dtype=np.int64)
    owner = np.asarray(owner, dtype=np.int64)
    ov = circular_overlap(starts, T, tau)
    n = adj.shape[0]
    audible = adj | np.eye(n, dtype=bool)  # audible[l, k]: l hears k or is k
    hits = ov.astype(np.int64) @ audible[:, owner].T.astype(np.int64)  # (M, n)
    own = (ov & (owner[:, None] == owner[None, :])).any(axis=1)
    return adj[owner, :] & (hits == 0) & ~own[:, None]


# ---------------------------------------------------------------- bandit stage

@dataclass
class TdmaAgent:
    node: int
    values: np.ndarray
    epsilon: float = 0.0
    arms: tuple = ()
    converged: bool = False
    rewards: list = field(default_factory=list)  # last frame's rewards

    def greedy_arms(self, fc: FrameConfig) -> tuple:
        """Deterministic top-``lam`` arms (lowest index wins ties)."""
        v = np.where(fc.arm_mask(), self.values, -np.inf)
        order = np.lexsort((np.arange(len(v)), -v))
        return tuple(sorted(int(a) for a in order[:fc.lam]))


def select_arms(agent: TdmaAgent, fc: FrameConfig, rng: np.random.Generator) -> tuple:
    """``lam`` distinct start slots, epsilon-greedy without replacement."""
    mask = fc.arm_mask().copy()
    out = []
    for _ in range(fc.lam):
        a = epsilon_greedy_select(agent.values, agent.epsilon, rng, mask)
        out.append(a)
        mask[a] = False
    return tuple(sorted(out))


def frame_step(agent: TdmaAgent, fc: FrameConfig, offset: int, rng: np.random.Generator,
               micro_shift: int = 0) -> list[int]:
    """Choose this frame's arms and return the start ticks on the frame circle."""
    if not agent.converged:
        agent.arms = select_arms(agent, fc, rng)
    return [(offset + a * fc.mini + micro_shift * fc.micro) % fc.T for a in agent.arms]


def frame_feedback(agent: TdmaAgent, rewards, params: LearningParams = TDMA_LEARNING,
                   rule: str = "hysteretic", classical_rate: float = 0.1) -> None:
    """Apply +1/-1 outcomes of this frame's transmissions to the played arms."""
    if agent.converged:
        return
    agent.rewards = list(rewards)
    for a, r in zip(agent.arms, rewards):
        if rule == "hysteretic":
            hysteretic_bandit_update(agent.values, a, r, params)
        elif rule == "classical":
            classical_bandit_update(agent.values, a, r, classical_rate)
        else:
            raise ValueError(f"unknown update rule {rule!r}")


@dataclass
class ConvergenceDetector:
    """Zero collisions network-wide and unchanged greedy arms for ``window`` frames."""

    window: int = 50
    streak: int = 0
    last: tuple | None = None

    def update(self, collisions: int, greedy: tuple) -> bool:
        if collisions == 0 and greedy == self.last:
            self.streak += 1
        elif collisions == 0:
            self.streak = 1
        else:
            self.streak = 0
        self.last = greedy
        return self.streak >= self.window


def detect_convergence(collisions, greedy_history, window: int = 50) -> int | None:
    """Index of the first frame closing a converged window, or None."""
    det = ConvergenceDetector(window)
    for t, (c, g) in enumerate(zip(collisions, greedy_history)):
        if det.update(int(c), tuple(g)):
            return t
    return None


@dataclass
class FrameOutcome:
    starts: np.ndarray  # per transmission, ticks on the circle
    owner: np.ndarray  # node index per transmission
    dest: np.ndarray  # node index per transmission
    delivered: np.ndarray  # (M, N) clean and not lost to channel error
    collided: np.ndarray  # (M,) not clean at its destination
    heard: np.ndarray  # (N, N) heard[l, k]: some packet of k reached l


def frame_outcome(starts, owner, adj, fc: FrameConfig, nbrs, streams: Streams, nodes, per: float):
    """Resolve one frame iteration: destinations, receptions and channel losses.

    ``nbrs[k]`` lists neighbor indices of node index ``k``; per-node streams
    supply destination and channel-error draws.
    """
    starts = np.asarray(starts, dtype=np.int64)
    owner = np.asarray(owner, dtype=np.int64)
    dest = np.array([nbrs[o][int(streams.get(nodes[o], "dest").integers(len(nbrs[o])))]
                     for o in owner], dtype=np.int64)
    clean = resolve_frame(starts, owner, adj, fc.T, fc.tau)
    lost = np.zeros(len(owner), dtype=bool)
    if per > 0:
        lost = np.array([streams.get(nodes[o], "channel").random() < per for o in owner])
    delivered = clean & ~lost[:, None]
    collided = ~clean[np.arange(len(owner)), dest]
    n = adj.shape[0]
    heard = np.zeros((n, n), dtype=bool)
    for a, o in enumerate(owner):
        heard[:, o] |= delivered[a]
    return FrameOutcome(starts, owner, dest, delivered, collided, heard)


@dataclass
class MabResult:
    nodes: list
    fc: FrameConfig
    offsets: dict
    converged_frame: int | None  # frames elapsed when the criterion first held
    arms: dict  # node -> arms at the end
    collisions: np.ndarray  # per frame
    successes: np.ndarray  # per frame, packets delivered with ack
    frames: int
    node_success: np.ndarray = None  # [frame, node] acknowledged deliveries
    node_collided: np.ndarray = None  # [frame, node] packets lost at the destination

    @property
    def converged(self) -> bool:
        return self.converged_frame is not None


def simulate_mab(topology: Topology, fc: FrameConfig, offsets: dict, n_frames: int, seed: int,
                 params: LearningParams = TDMA_LEARNING, rule: str = "hysteretic",
                 window: int = 50, channel: ChannelParams = ChannelParams(),
                 stop_on_converge: bool = True, classical_rate: float = 0.1) -> MabResult:
    """Stage 1: every node learns start mini-slots with a +1/-1 bandit.

    A packet scores +1 only if it is clean at its destination and the
    destination's own packet in the same frame (which carries the
    acknowledgment) is heard back; everything else scores -1.
    """
    if rule not in ("hysteretic", "classical"):
        raise ValueError(f"unknown update rule {rule!r}")
    nodes = list(topology.nodes)
    idx = {n: k for k, n in enumerate(nodes)}
    adj = topology.adjacency_matrix()
    nbrs = [np.array([idx[j] for j in sorted(topology.one_hop(n))]) for n in nodes]
    if any(len(x) == 0 for x in nbrs):
        raise TopologyError("every node needs at least one neighbor")
    streams = Streams(seed)
    agents = [TdmaAgent(n, new_arms(fc.f, params, streams.get(n, "init")), params.epsilon0)
              for n in nodes]
    owner = np.repeat(np.arange(len(nodes)), fc.lam)
    det = ConvergenceDetector(window)
    coll = np.zeros(n_frames, dtype=np.int64)
    succ = np.zeros(n_frames, dtype=np.int64)
    node_succ = np.zeros((n_frames, len(nodes)), dtype=np.int64)
    node_coll = np.zeros((n_frames, len(nodes)), dtype=np.int64)
    converged_at = None
    t = 0
    for t in range(n_frames):
        starts = []
        for ag in agents:
            starts += frame_step(ag, fc, offsets[ag.node], streams.get(ag.node, "arms"))
        out = frame_outcome(starts, owner, adj, fc, nbrs, streams, nodes, channel.per)
        ok = out.delivered[np.arange(len(owner)), out.dest] & out.heard[owner, out.dest]
        for k, ag in enumerate(agents):
            sl = slice(k * fc.lam, (k + 1) * fc.lam)
            frame_feedback(ag, np.where(ok[sl], 1.0, -1.0), params, rule, classical_rate)
            if not ag.converged:
                ag.epsilon = max(params.epsilon_min, ag.epsilon * params.epsilon_decay)
        coll[t] = int(out.collided.sum())
        succ[t] = int(ok.sum())
        np.add.at(node_succ[t], owner, ok)
        np.add.at(node_coll[t], owner, out.collided)
        if converged_at is None and det.update(coll[t], tuple(ag.greedy_arms(fc) for ag in agents)):
            converged_at = t + 1
            for ag in agents:
                ag.arms = ag.greedy_arms(fc)
                ag.converged = True
            if stop_on_converge:
                break
    frames = t + 1
    return MabResult(nodes, fc, dict(offsets), converged_at, {ag.node: ag.arms for ag in agents},
                     coll[:frames], succ[:frames], frames, node_succ[:frames], node_coll[:frames])


# ---------------------------------------------------------------- defragmentation

@dataclass
class DefragState:
    node: int
    mu: int  # start micro-slot inside the local frame
    mu0: int
    c: int = 0
    last_move: int = 0
    retry: bool = False  # moved forward twice; verify next frame
    streak: int = 0  # consecutive frames with a collision
    done_frame: int | None = None
    f_shrunk: int = 0
    f_shrunk_prev: int = -1
    settled: int = 0
    heard: dict = field(default_factory=dict)  # neighbor -> (c, settled radius)
    table: dict = field(default_factory=dict)  # origin -> (frame, mu_shift), relayed

    @property
    def mu_shift(self) -> int:
        """Net micro-slots moved back since the start of defragmentation."""
        return self.mu0 - self.mu


def defrag_iteration(st: DefragState, collided_prev: bool | None, frame: int = 0,
                     rng: np.random.Generator | None = None) -> int:
    """One per-frame decision of the backshift search; returns the move in
    micro-slots (-1 back, +1 forward, 0 stay) and updates ``st``.

    ``collided_prev`` is the outcome of the previous frame (None before the
    first frame). A finished node that has collided in three consecutive
    frames backs off forward with probability 1/2 (needs ``rng``); this breaks
    the symmetric case of two neighbors stepping in lockstep.
    """
    move = 0
    hit = bool(collided_prev)
    st.streak = st.streak + 1 if hit else 0
    if st.c == 0:
        if hit and st.last_move < 0:
            move = 1  # undo the backshift that caused the collision
            st.c = 1
        elif st.mu == 0:
            st.c = 1  # at frame start: nothing to search
        else:
            move = -1
    else:
        if st.retry:
            st.retry = False
            if hit:
                move = -1
        elif hit and st.last_move > 0 and st.mu_shift > 0:
            move = 1
            st.retry = True
        elif st.streak >= 3 and st.mu_shift > 0 and rng is not None and rng.random() < 0.5:
            move = 1
    st.mu += move
    st.last_move = move
    if st.c == 1 and st.done_frame is None:
        st.done_frame = frame
    return move


@dataclass
class DefragResult:
    nodes: list
    fc: FrameConfig  # after the shrink
    offsets: dict  # frame starts after the shrink
    mu: dict  # start micro-slot per node after the shrink
    mu_shift: dict
    f_shrunk: int
    frames: int  # frames until the shrink took effect
    done_frames: dict  # node -> frame where c became 1
    trace: list  # per frame: (positions in micro-slots from node-1 frame start, collided)
    shrunk: bool
    removed: int = 0  # micro-slots actually cut from the frame
    collided: np.ndarray = None  # [frame, node] packet lost at its destination


def _cut(fc: FrameConfig, offsets: dict, states: dict, L_micro: int, cut: str = "frame-end"):
    """Remove up to ``L_micro`` micro-slots from the frame circle.

    ``cut="frame-end"``: every node trims the end of its own local frame in
    the same iteration, so the time removed sits after the last packet of
    that iteration (largest unwrapped start). ``cut="max-shift"``: right after
    the transmission of a most-shifted node, ties going to the longest idle
    stretch. Either way the removal never exceeds the idle time after the cut
    point nor goes below the synchronous minimum.
    Returns (new fc, offsets, mu, micro-slots removed)."""
    if cut not in ("frame-end", "max-shift"):
        raise ValueError(f"unknown cut rule {cut!r}")
    T = fc.T
    pos = {n: (offsets[n] + st.mu * fc.micro) % T for n, st in states.items()}
    best = max(st.mu_shift for st in states.values())

    def idle_after(n):
        c = (pos[n] + fc.tau) % T
        gaps = [T - fc.tau]
        for k in pos:
            if k != n:
                # a packet still on air at c leaves nothing to remove
                gaps.append(0 if 0 < (c - pos[k]) % T < fc.tau else (pos[k] - c) % T)
        return min(gaps)

    if cut == "frame-end":
        # every node trims the end of its own frame: the last packet of the iteration
        tail = max(sorted(states), key=lambda n: offsets[n] + states[n].mu * fc.micro)
    else:
        tail = max(sorted(n for n, st in states.items() if st.mu_shift == best), key=idle_after)
    c = (pos[tail] + fc.tau) % T
    idle = idle_after(tail)
    L_micro = max(0, min(L_micro, idle // fc.micro, (T - fc.occupied) // fc.micro))
    L = L_micro * fc.micro
    try:
        new = replace(fc, shrunk=fc.shrunk + L_micro)
    except ValueError as exc:
        raise DefragError(str(exc)) from None
    T2 = new.T

    mu, offs = {}, {}
    for n, st in states.items():
        x = (((pos[n] - c) % T) - L + c) % T2
        span = (pos[n] - offsets[n]) % T
        crosses = (c - offsets[n]) % T < span  # cut lies between frame start and packet
        mu[n] = st.mu - (L_micro if crosses else 0)
        offs[n] = (x - mu[n] * fc.micro) % T2
    return new, offs, mu, L_micro


def simulate_defrag(topology: Topology, fc: FrameConfig, offsets: dict, arms: dict, seed: int,
                    channel: ChannelParams = ChannelParams(), max_frames: int | None = None,
                    trace: bool = False, shrink: bool = True, cut: str = "frame-end") -> DefragResult:
    """Stage 2: backshift search from a converged schedule, then shrink.

    Nodes learn about collisions only through per-sender acknowledgment bits
    piggybacked by their one-hop neighbors, and about neighbors' progress
    (search flag, settled radius, shift table) from overheard packets. Shift
    values are relayed hop by hop with the frame they were produced in, so
    newer values replace older ones; the settled radius counts hops within
    which every node has finished. The
    frame shrinks in the first frame where every node sees a settled network
    and an estimate unchanged for two frames.
    """
    if fc.lam != 1:
        raise ValueError("defragmentation supports one packet per frame")
    nodes = list(topology.nodes)
    idx = {n: k for k, n in enumerate(nodes)}
    adj = topology.adjacency_matrix()
    nbrs = [np.array([idx[j] for j in sorted(topology.one_hop(n))]) for n in nodes]
    streams = Streams(seed)
    states = {n: DefragState(n, arms[n][0] * fc.s, arms[n][0] * fc.s) for n in nodes}
    owner = np.arange(len(nodes))
    limit = max_frames if max_frames is not None else 2 * fc.f * fc.s + 10 * len(nodes) + 10
    prev = {n: None for n in nodes}
    coll = np.zeros((limit, len(nodes)), dtype=bool)
    horizon = len(nodes)  # upper bound on the network diameter
    tr = []
    for t in range(limit):
        for n in nodes:
            defrag_iteration(states[n], prev[n], t, streams.get(n, "defrag"))
        starts = [(offsets[n] + states[n].mu * fc.micro) % fc.T for n in nodes]
        out = frame_outcome(starts, owner, adj, fc, nbrs, streams, nodes, channel.per)
        coll[t] = out.collided
        if trace:
            ref = offsets[nodes[0]]
            tr.append(([((x - ref) % fc.T) / fc.micro for x in starts], out.collided.copy()))
        ready = True
        for k, n in enumerate(nodes):
            st = states[n]
            # per-sender ack bits from every one-hop neighbor
            prev[n] = not bool(out.delivered[k, nbrs[k]].all())
            st.table[n] = (t, st.mu_shift)
            for j in nbrs[k]:
                if out.heard[k, j]:
                    sj = states[nodes[j]]
                    st.heard[nodes[j]] = (sj.c, sj.settled)
                    for o, e in sj.table.items():
                        if o not in st.table or e[0] > st.table[o][0]:
                            st.table[o] = e
            known = [st.heard.get(nodes[j]) for j in nbrs[k]]
            st.f_shrunk_prev = st.f_shrunk
            st.f_shrunk = max(e[1] for e in st.table.values())
            nb_done = st.c == 1 and all(h is not None and h[0] == 1 for h in known)
            # hops out to which every node is known to have finished
            st.settled = 0 if not nb_done else min(horizon, 1 + min(h[1] for h in known))
            ready &= st.settled >= horizon and st.f_shrunk == st.f_shrunk_prev
        if ready:
            L = states[nodes[0]].f_shrunk
            if any(states[n].f_shrunk != L for n in nodes):
                raise DefragError("nodes disagree on the shrink amount")
            done = {n: states[n].done_frame for n in nodes}
            shifts = {n: states[n].mu_shift for n in nodes}
            if L == 0 or not shrink:
                mu = {n: states[n].mu for n in nodes}
                return DefragResult(nodes, fc, dict(offsets), mu, shifts, L, t + 1, done, tr, L == 0, 0,
                                    coll[:t + 1])
            new, offs, mu, removed = _cut(fc, offsets, states, L, cut)
            return DefragResult(nodes, new, offs, mu, shifts, L, t + 1, done, tr, True, removed,
                                coll[:t + 1])
    done = {n: states[n].done_frame for n in nodes}
    return DefragResult(nodes, fc, dict(offsets), {n: states[n].mu for n in nodes},
                        {n: states[n].mu_shift for n in nodes}, 0, limit, done, tr, False, 0, coll)


def apply_frame_shrink(fc: FrameConfig, f_shrunk: int) -> FrameConfig:
    """Frame configuration after removing ``f_shrunk`` micro-slots."""
    if f_shrunk < 0:
        raise ValueError("negative shrink")
    try:
        return replace(fc, shrunk=fc.shrunk + f_shrunk)
    except ValueError as exc:
        raise DefragError(str(exc)) from None


def residual_redundancy(fc: FrameConfig) -> float:
    return redundancy_pct(fc.T, fc.occupied)


def replay(topology: Topology, fc: FrameConfig, offsets: dict, mu: dict, n_frames: int = 100,
           seed: int = 0, channel: ChannelParams = ChannelParams()) -> int:
    """Collisions at intended receivers when the schedule is laid out in
    absolute time for ``n_frames`` frames and resolved interval by interval."""
    nodes = sorted(topology.nodes)
    streams = Streams(seed)
    rng = streams.get(NETWORK, "replay")
    frames = {}
    for k in range(-2, n_frames + 2):
        frames[k] = []
        for n in nodes:
            dest = sorted(topology.one_hop(n))[int(rng.integers(len(topology.one_hop(n))))]
            start = offsets[n] + k * fc.T + mu[n] * fc.micro
            frames[k].append(Transmission(n, dest, start, fc.tau, k))
    bad = 0
    for k in range(n_frames):
        active = [tx for d in range(-2, 3) for tx in frames[k + d]]
        for oc in engine.resolve_receptions(active, topology, channel, rng):
            if oc.transmission.payload_id == k and oc.status == engine.COLLIDED:
                bad += 1
    return bad
