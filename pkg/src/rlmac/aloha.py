"""Pure (unslotted) ALOHA baseline."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import ChannelParams, EventQueue, Transmission
from .rng import Streams
from .topology import NEVER, Topology, TrafficSpec, apply_dynamic_event, pick_destination, sample_next_arrival


def aloha_theoretical_throughput(G: float) -> float:
    """Pure ALOHA throughput S = G exp(-2G) for offered load G (Erlangs)."""
    if G < 0:
        raise ValueError("offered load must be non-negative")
    return G * math.exp(-2.0 * G)


@dataclass
class AlohaNode:
    node: int
    queue: deque = field(default_factory=deque)
    busy: bool = False  # transmitting or awaiting feedback
    backoff_until: int = 0
    alive: bool = True

    def aloha_step(self, now: int) -> bool:
        """Transmit decision: head-of-queue goes out as soon as the node is free."""
        return self.alive and bool(self.queue) and not self.busy and now >= self.backoff_until

    def on_failure(self, now: int, max_backoff: int, rng: np.random.Generator) -> int:
        self.busy = False
        self.backoff_until = now + int(rng.integers(1, max_backoff + 1))
        return self.backoff_until


@dataclass
class AlohaResult:
    nodes: list
    tau: int  # ticks per packet duration
    epoch_ticks: int
    successes: np.ndarray  # [node, epoch]
    attempts: np.ndarray  # [node, epoch]
    fresh: np.ndarray  # [node, epoch] first attempts

    def throughput(self) -> np.ndarray:
        """Per-node per-epoch throughput in Erlangs."""
        return self.successes * self.tau / self.epoch_ticks

    def offered_load(self) -> np.ndarray:
        return self.attempts * self.tau / self.epoch_ticks


# event ranks: departures resolve before new starts at the same tick
_END, _FEEDBACK, _EVENT, _ARRIVAL, _RETRY = range(5)


def simulate_aloha(topology: Topology, traffic: TrafficSpec, n_epochs: int, seed: int,
                   channel: ChannelParams = ChannelParams(), resolution: int = engine.DEFAULT_RESOLUTION,
                   epoch_tau: int = 100, mode: str = "buffered", max_backoff_tau: float = 16.0,
                   ack_delay_tau: float = 1.0) -> AlohaResult:
    """Event-driven pure ALOHA.

    ``mode="buffered"``: FIFO queue, one transmission at a time per node,
    retransmission after a uniform backoff in [1, B] ticks when the
    acknowledgment does not arrive.
    ``mode="offered"``: every generated packet is sent at its arrival instant
    with no retransmission (the infinite-population model behind G e^{-2G}).
    """
    if mode not in ("buffered", "offered"):
        raise ValueError(f"unknown aloha mode {mode!r}")
    streams = Streams(seed)
    tau = int(resolution)
    epoch_ticks = epoch_tau * tau
    horizon = n_epochs * epoch_ticks
    max_backoff = int(round(max_backoff_tau * tau))
    ack_delay = int(round(ack_delay_tau * tau))

    all_nodes = sorted(set(topology.nodes) | {e.node for e in traffic.events if e.kind == "node-add"})
    col = {n: k for k, n in enumerate(all_nodes)}
    succ = np.zeros((len(all_nodes), n_epochs), dtype=np.int64)
    att = np.zeros_like(succ)
    fresh = np.zeros_like(succ)

    q = EventQueue()
    nodes: dict[int, AlohaNode] = {}
    recent: list[Transmission] = []
    pid = 0

    def schedule_arrival(n, now):
        t = sample_next_arrival(traffic, n, now, streams.get(n, "arrivals"), tau)
        if t != NEVER and t < horizon:
            q.schedule(("arrival", n), int(math.ceil(t)), _ARRIVAL, n)

    def start_tx(n, now, first):
        nonlocal pid
        node = nodes[n]
        dest = pick_destination(topology, n, streams.get(n, "dest"))
        tx = Transmission(n, dest, now, tau, pid)
        pid += 1
        recent.append(tx)
        node.busy = mode == "buffered"
        e = now // epoch_ticks
        att[col[n], e] += 1
        if first:
            fresh[col[n], e] += 1
        q.schedule(("end", tx), tx.end, _END, n)

    for n in topology.nodes:
        nodes[n] = AlohaNode(n)
        schedule_arrival(n, 0)
    for ev in traffic.events:
        t = int(round(ev.time * tau))
        if t < horizon:
            q.schedule(("dyn", ev), t, _EVENT, ev.node)

    while len(q) and q.peek_time() < horizon:
        now, (kind, obj) = q.pop()
        if kind == "arrival":
            n = obj
            node = nodes.get(n)
            if node is None or not node.alive:
                continue
            schedule_arrival(n, now)
            if mode == "offered":
                start_tx(n, now, True)
                continue
            node.queue.append(now)
            if node.aloha_step(now):
                start_tx(n, now, len(node.queue) == 1)
        elif kind == "end":
            tx = obj
            recent[:] = [o for o in recent if o.end > now - tau]
            others = [o for o in recent if o is not tx and engine.overlaps(tx, o)]
            ok = tx.dest in topology and engine.heard_cleanly(tx, tx.dest, others, topology)
            status = engine.apply_channel_error(engine.SUCCESS if ok else engine.COLLIDED, channel.per,
                                                streams.get(tx.sender, "channel"))
            if status == engine.SUCCESS:
                succ[col[tx.sender], min(tx.start // epoch_ticks, n_epochs - 1)] += 1
            if mode == "buffered":
                q.schedule(("feedback", (tx.sender, status)), now + ack_delay, _FEEDBACK, tx.sender)
        elif kind == "feedback":
            n, status = obj
            node = nodes.get(n)
            if node is None or not node.alive:
                continue
            if status == engine.SUCCESS:
                node.queue.popleft()
                node.busy = False
                if node.aloha_step(now):
                    start_tx(n, now, True)
            else:
                t = node.on_failure(now, max_backoff, streams.get(n, "backoff"))
                q.schedule(("retry", n), t, _RETRY, n)
        elif kind == "retry":
            node = nodes.get(obj)
            if node is not None and node.aloha_step(now):
                start_tx(obj, now, False)
        elif kind == "dyn":
            ev = obj
            topology, traffic = apply_dynamic_event(topology, traffic, ev)
            if ev.kind == "node-fail":
                nodes[ev.node].alive = False
            elif ev.kind == "node-add":
                nodes[ev.node] = AlohaNode(ev.node)
                schedule_arrival(ev.node, now)
            elif ev.kind == "load-change":
                # pending arrival stays; the new rate applies from the next draw
                pass

    return AlohaResult(all_nodes, tau, epoch_ticks, succ, att, fresh)
