"""Learning-based random access MAC.

Each node is a hysteretic Q-learner whose action is a transmission
probability and whose state is its binned collision ratio. Rewards come
from the temporal gradients of the neighborhood throughput and of the
fairness coefficient, both estimated from piggybacked metadata only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import learning
from .engine import DEFAULT_RESOLUTION, ChannelParams, PiggybackPayload
from .learning import LearningParams
from .rng import Streams
from .topology import Topology, TrafficSpec, apply_dynamic_event

STALE_EPOCHS = 3


def action_space(step: float = 0.05, include_zero: bool = False) -> np.ndarray:
    n = int(round(1.0 / step))
    grid = np.round(np.arange(0, n + 1) * step, 10)
    return grid if include_zero else grid[1:]


@dataclass(frozen=True)
class RewardParams:
    r_plus: float = 50.0
    r_minus: float = -50.0
    eps_s: float = 0.0
    eps_f: float = 0.0

    def __post_init__(self):
        if not self.r_plus > 0 > self.r_minus:
            raise ValueError("need r_plus > 0 > r_minus")


def encode_state(transmitted: int, collided: int, n_bins: int = 5, previous: int = 0) -> int:
    """Bin the collision ratio into ``n_bins`` uniform bins over [0, 1]."""
    if collided < 0 or collided > transmitted:
        raise ValueError(f"collided={collided} outside [0, transmitted={transmitted}]")
    if transmitted == 0:
        return previous
    pc = collided / transmitted
    return min(int(pc * n_bins + 1e-12), n_bins - 1)


def compute_reward(d_S: float, d_f: float, params: RewardParams = RewardParams()) -> float:
    if d_S - params.eps_s > 0 and d_f - params.eps_f > 0:
        return params.r_plus
    return params.r_minus


def fairness_coefficient(s_i: float, others) -> float:
    return -float(sum(abs(s_i - s) for s in others))


def decide_transmit(p: float, has_queued_packet: bool, rng: np.random.Generator) -> bool:
    if not has_queued_packet:
        return False
    return bool(rng.random() < p)


@dataclass
class ThroughputLedger:
    """What a node knows about throughputs, all learned from piggybacks.

    ``heard`` maps node -> {epoch stamped at the source: s_k}; ``history``
    keeps the node's own throughput per epoch.
    """

    node: int
    credited: dict = field(default_factory=dict)  # dest -> successes reported this epoch
    own: float = 0.0  # s_i of the last closed epoch, Erlangs
    heard: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    def ingest_piggyback(self, payload: PiggybackPayload, sender: int, one_hop, epoch: int):
        """``epoch`` is the source stamp of the sender's own throughput value."""
        if sender not in one_hop:
            return
        count = payload.success_counts.get(self.node)
        if count is not None:
            self.credited[sender] = int(count)
        self._record(sender, payload.own_throughput, epoch)
        for k, (s_k, stamp) in payload.neighbor_throughputs.items():
            if k != self.node:
                self._record(k, s_k, stamp)

    def _record(self, k, s_k, stamp):
        if stamp < 0:
            return
        self.heard.setdefault(k, {})[stamp] = float(s_k)

    def expire(self, epoch: int):
        for k in list(self.heard):
            kept = {t: v for t, v in self.heard[k].items() if epoch - t <= STALE_EPOCHS}
            if kept:
                self.heard[k] = kept
            else:
                del self.heard[k]
        self.history = {t: v for t, v in self.history.items() if epoch - t <= STALE_EPOCHS}

    def close_epoch(self, epoch: int, epoch_tau: int) -> float:
        self.own = sum(self.credited.values()) / epoch_tau
        self.history[epoch] = self.own
        return self.own

    def latest(self, within, at: int | None = None) -> dict:
        """Newest heard value per node in ``within``, stamped no later than ``at``."""
        out = {}
        for k, vals in self.heard.items():
            if k not in within:
                continue
            stamps = [t for t in vals if at is None or t <= at]
            if stamps:
                out[k] = vals[max(stamps)]
        return out

    def neighborhood_throughput(self, within, at: int | None = None) -> float:
        own = self.own if at is None else self.history.get(at, 0.0)
        return neighborhood_throughput(own, self.latest(within, at).values())

    def fairness(self, one_hop, at: int | None = None) -> float:
        own = self.own if at is None else self.history.get(at, 0.0)
        return fairness_coefficient(own, self.latest(one_hop, at).values())

    def payload(self, one_hop) -> PiggybackPayload:
        nbrs = {}
        for k, v in self.latest(one_hop).items():
            nbrs[k] = (v, max(self.heard[k]))
        return PiggybackPayload(own_throughput=self.own, neighbor_throughputs=nbrs)


def neighborhood_throughput(s_i: float, heard) -> float:
    return s_i + float(sum(heard))


@dataclass
class RraAgent:
    """One learning node.

    Neighbor throughputs for epoch t only arrive during epoch t+1. With
    ``credit_delay=0`` the reward mixes the node's fresh s_i with neighbor
    values one epoch old; with ``credit_delay=1`` the reward of the action
    taken in epoch t waits until the epoch-t neighborhood values are in.
    """

    node: int
    q: np.ndarray
    epsilon: float
    ledger: ThroughputLedger
    action: int = 0
    state: int = 0
    phase: int = 0  # decision-tick offset in ticks
    queue: int = 0
    transmitted: int = 0
    born: int = 0  # epoch the agent started learning
    last_reward: float | None = None
    credit_delay: int = 0  # epochs between an action and its reward
    trail: list = field(default_factory=list)  # [(epoch, state, action, S_i, f_i)]

    def greedy_action(self) -> int:
        return int(np.argmax(self.q[self.state]))

    def epoch_transition(self, epoch: int, p: LearningParams, rp: RewardParams, epoch_tau: int, within,
                         one_hop, rng: np.random.Generator, n_bins: int = 5) -> int:
        self.ledger.close_epoch(epoch, epoch_tau)
        succeeded = min(sum(self.ledger.credited.values()), self.transmitted)
        new_state = encode_state(self.transmitted, self.transmitted - succeeded, n_bins, self.state)
        self.trail.append([epoch, self.state, self.action, None, None])
        self.last_reward = None
        lag = self.credit_delay
        if len(self.trail) > lag:
            # the entry `lag` epochs back now has its neighbor values in the ledger
            done = self.trail[-1 - lag]
            at = done[0] if lag else None
            done[3] = self.ledger.neighborhood_throughput(within, at=at)
            done[4] = self.ledger.fairness(one_hop, at=at)
            if len(self.trail) > lag + 1:
                before = self.trail[-2 - lag]
                r = compute_reward(done[3] - before[3], done[4] - before[4], rp)
                s_next = self.trail[-lag][1] if lag else new_state
                learning.hysteretic_q_update(self.q, done[1], done[2], r, s_next, p)
                self.last_reward = r
            del self.trail[: -1 - lag]
        self.state = new_state
        self.action = learning.epsilon_greedy_select(self.q[self.state], self.epsilon, rng)
        self.epsilon = learning.decay_epsilon(self.epsilon, p)
        self.transmitted = 0
        self.ledger.credited = {}
        return self.action


@dataclass
class RraResult:
    nodes: list  # every node id that ever existed, column order of the arrays
    epoch_tau: int
    successes: np.ndarray  # [node, epoch] ground-truth deliveries
    transmitted: np.ndarray  # [node, epoch]
    prob: np.ndarray  # [node, epoch] transmission probability in use, nan if absent
    greedy: np.ndarray  # [node, epoch] greedy action index after the epoch, -1 if absent
    epsilon: np.ndarray  # [node, epoch], nan if absent
    reward: np.ndarray  # [node, epoch], nan before the first update
    event_epochs: list  # (epoch, DynamicEvent) as applied

    def throughput(self) -> np.ndarray:
        return self.successes / self.epoch_tau

    def alive(self) -> np.ndarray:
        return self.greedy >= 0


def _new_agent(n, streams, p, resolution, epoch, n_bins, n_actions, credit_delay=0):
    rng = streams.get(n, "learner")
    agent = RraAgent(
        node=n,
        q=learning.new_qtable(n_bins, n_actions, p, rng),
        epsilon=p.epsilon0,
        ledger=ThroughputLedger(n),
        phase=int(streams.get(n, "phase").integers(resolution)),
        born=epoch,
        credit_delay=credit_delay,
    )
    agent.action = learning.epsilon_greedy_select(agent.q[agent.state], agent.epsilon, rng)
    return agent


def simulate_rra(topology: Topology, traffic: TrafficSpec, n_epochs: int, seed: int,
                 params: LearningParams = LearningParams(), reward: RewardParams = RewardParams(),
                 channel: ChannelParams = ChannelParams(), epoch_tau: int = 100,
                 resolution: int = DEFAULT_RESOLUTION, n_bins: int = 5, actions: np.ndarray | None = None,
                 neighborhood: str = "two_hop", credit_delay: int = 0) -> RraResult:
    """Run the learning MAC for ``n_epochs`` epochs of ``epoch_tau`` decision ticks.

    Decision ticks of node i sit at ``phase_i + t * tau``: one per packet
    duration, unsynchronized across nodes. A transmission's outcome is
    resolved once both neighboring ticks of every overlapping node are known,
    so the last tick of an epoch is accounted in the next one.
    """
    if neighborhood not in ("two_hop", "one_hop"):
        raise ValueError("neighborhood must be 'two_hop' or 'one_hop'")
    actions = action_space() if actions is None else np.asarray(actions, dtype=float)
    streams = Streams(seed)
    E = int(epoch_tau)
    events = sorted(traffic.events, key=lambda e: e.time)
    event_epoch = [(int(np.ceil(e.time / E)), e) for e in events]

    ever = sorted(set(topology.nodes) | {e.node for e in events if e.kind == "node-add"})
    col = {n: k for k, n in enumerate(ever)}
    shape = (len(ever), n_epochs)
    out_succ = np.zeros(shape, dtype=np.int64)
    out_tx = np.zeros(shape, dtype=np.int64)
    out_p = np.full(shape, np.nan)
    out_greedy = np.full(shape, -1, dtype=np.int64)
    out_eps = np.full(shape, np.nan)
    out_rew = np.full(shape, np.nan)

    agents = {n: _new_agent(n, streams, params, resolution, 0, n_bins, len(actions), credit_delay) for n in topology.nodes}
    acc = {n: 0.0 for n in ever}  # constant-rate arrival credit
    carry: dict[int, tuple] = {}  # node -> (X, D, CE) of the two previous ticks
    applied = []
    ev_idx = 0

    for e in range(n_epochs):
        while ev_idx < len(event_epoch) and event_epoch[ev_idx][0] <= e:
            _, ev = event_epoch[ev_idx]
            topology, traffic = apply_dynamic_event(topology, traffic, ev)
            if ev.kind == "node-fail":
                agents.pop(ev.node)
                carry.pop(ev.node, None)
            elif ev.kind == "node-add":
                agents[ev.node] = _new_agent(ev.node, streams, params, resolution, e, n_bins, len(actions),
                                             credit_delay)
            applied.append((e, ev))
            ev_idx += 1

        nodes = list(topology.nodes)
        N = len(nodes)
        idx = {n: k for k, n in enumerate(nodes)}
        adj = topology.adjacency_matrix()
        phase = np.array([agents[n].phase for n in nodes])

        X = np.zeros((N, E + 2), dtype=bool)
        D = np.zeros((N, E + 2), dtype=np.int64)
        CE = np.zeros((N, E + 2), dtype=bool)
        for k, n in enumerate(nodes):
            ag = agents[n]
            if n in carry:
                X[k, :2], D[k, :2], CE[k, :2] = carry[n]
            g = traffic.load(n)
            if traffic.model == "poisson":
                arrivals = streams.get(n, "arrivals").poisson(g, E)
            else:
                credit = acc[n] + g * np.arange(1, E + 1)
                arrivals = np.diff(np.floor(credit), prepend=np.floor(acc[n])).astype(np.int64)
                acc[n] = float(credit[-1] - np.floor(credit[-1]))
            coins = streams.get(n, "decide").random(E) < actions[ag.action]
            q = ag.queue
            row = X[k]
            for t in range(E):
                q += arrivals[t]
                if q and coins[t]:
                    row[t + 2] = True
                    q -= 1
            ag.queue = q
            nbrs = np.array([idx[j] for j in sorted(topology.one_hop(n))], dtype=np.int64)
            if len(nbrs):
                D[k, 2:] = nbrs[streams.get(n, "dest").integers(len(nbrs), size=E)]
            else:
                X[k, 2:] = False
            if channel.per > 0:
                CE[k, 2:] = streams.get(n, "channel").random(E) < channel.per
            carry[n] = (X[k, -2:].copy(), D[k, -2:].copy(), CE[k, -2:].copy())

        # overlap of i's tick c with node m: same tick, plus c-1 if m lags, c+1 if m leads
        later = phase[None, :] > phase[:, None]
        earlier = phase[None, :] < phase[:, None]
        Xm = X[None, :, :]
        over = Xm[:, :, 1:-1] | (later[:, :, None] & Xm[:, :, :-2]) | (earlier[:, :, None] & Xm[:, :, 2:])
        over = np.broadcast_to(over, (N, N, E)).copy()
        over[np.arange(N), np.arange(N), :] = False
        busy_nbrs = np.einsum("lm,imc->ilc", adj.astype(np.int32), over.astype(np.int32))
        Xr = X[:, 1:-1]
        clean = (Xr[:, None, :] & adj[:, :, None] & ~over & (busy_nbrs == 0)
                 & ~CE[:, None, 1:-1])  # [sender, listener, col]
        Dr = D[:, 1:-1]
        succ = np.take_along_axis(clean, Dr[:, None, :], axis=1)[:, 0, :] & Xr

        # receivers piggyback a running per-sender tally; senders keep the latest heard
        payloads = {n: agents[n].ledger.payload(topology.one_hop(n)) for n in nodes}
        for k, n in enumerate(nodes):
            ag = agents[n]
            for j in sorted(topology.one_hop(n)):
                jk = idx[j]
                heard_cols = np.flatnonzero(clean[jk, k])
                if len(heard_cols) == 0:
                    continue
                c = heard_cols[-1]
                lag = 1 if phase[jk] >= phase[k] else 2
                mine = succ[k, : max(c - lag + 1, 0)] & (Dr[k, : max(c - lag + 1, 0)] == jk)
                pj = payloads[j]
                pl = PiggybackPayload(success_counts={n: int(mine.sum())}, own_throughput=pj.own_throughput,
                                      neighbor_throughputs=pj.neighbor_throughputs)
                ag.ledger.ingest_piggyback(pl, j, topology.one_hop(n), e - 1)
            ag.transmitted = int(Xr[k].sum())

        for k, n in enumerate(nodes):
            ag = agents[n]
            c = col[n]
            out_tx[c, e] = ag.transmitted
            out_succ[c, e] = int(succ[k].sum())
            out_p[c, e] = actions[ag.action]
            ag.ledger.expire(e)
            one = topology.one_hop(n)
            within = topology.two_hop(n) if neighborhood == "two_hop" else one
            ag.epoch_transition(e, params, reward, E, within, one, streams.get(n, "learner"), n_bins)
            out_greedy[c, e] = ag.greedy_action()
            out_eps[c, e] = ag.epsilon
            if ag.last_reward is not None:
                out_rew[c, e] = ag.last_reward

    return RraResult(ever, E, out_succ, out_tx, out_p, out_greedy, out_eps, out_rew, applied)


def _modal(values: np.ndarray) -> int:
    vals, counts = np.unique(values, return_counts=True)
    return int(vals[np.argmax(counts)])


def convergence_epoch(result: RraResult, epsilon_min: float, window: int = 50, tol: float = 0.02,
                      start: int = 0, nodes=None) -> int | None:
    """First epoch at which the run counts as converged, or None.

    Two consecutive windows of ``window`` epochs are compared: every agent
    must sit at its exploration floor throughout the later window, keep the
    same modal greedy action in both, and the mean network throughput of the
    two windows must agree within ``tol`` (relative).
    ``nodes`` restricts the policy/epsilon checks to a subset of agents.
    """
    S = result.throughput().sum(0)
    cols = range(len(result.nodes)) if nodes is None else [result.nodes.index(n) for n in nodes]
    n_epochs = S.shape[0]
    for t in range(start + 2 * window, n_epochs + 1):
        a, b = slice(t - window, t), slice(t - 2 * window, t - window)
        ok = True
        for c in cols:
            ga, gb = result.greedy[c, a], result.greedy[c, b]
            if (ga < 0).any() or (gb < 0).any():
                if (ga < 0).all():
                    continue
                ok = False
                break
            if np.nanmax(result.epsilon[c, a]) > epsilon_min + 1e-12 or _modal(ga) != _modal(gb):
                ok = False
                break
        if not ok:
            continue
        sa, sb = S[a].mean(), S[b].mean()
        if sa > 0 and abs(sa - sb) < tol * sa:
            return t
    return None
