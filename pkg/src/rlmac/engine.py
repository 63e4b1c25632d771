"""Discrete-event core: clock/queue, receiver-side collision resolution,
channel errors and piggyback dissemination.

Time is counted in integer ticks; ``resolution`` ticks make one packet
duration tau.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from .topology import Topology

DEFAULT_RESOLUTION = 1400  # ticks per tau; divisible by 2, 4, 5 and 7

SUCCESS = "success"
COLLIDED = "collided"
CHANNEL_ERROR = "channel_error"


class SchedulingError(ValueError):
    pass


@dataclass(order=True)
class _Entry:
    time: int
    rank: int
    node: int
    seq: int
    event: Any = field(compare=False)


class EventQueue:
    """Time-ordered event queue; ties broken by (kind rank, node id, insertion)."""

    def __init__(self):
        self.now = 0
        self._heap: list[_Entry] = []
        self._seq = itertools.count()

    def schedule(self, event, time: int, rank: int = 0, node: int = 0):
        time = int(time)
        if time < self.now:
            raise SchedulingError(f"cannot schedule at {time} < now {self.now}")
        heapq.heappush(self._heap, _Entry(time, rank, node, next(self._seq), event))

    def __len__(self):
        return len(self._heap)

    def peek_time(self):
        return self._heap[0].time if self._heap else None

    def pop(self):
        e = heapq.heappop(self._heap)
        self.now = e.time
        return e.time, e.event

    def advance(self) -> tuple[int, list]:
        """Pop every event sharing the earliest time, in tie-break order."""
        if not self._heap:
            raise IndexError("advance on empty queue")
        t = self._heap[0].time
        batch = []
        while self._heap and self._heap[0].time == t:
            batch.append(heapq.heappop(self._heap).event)
        self.now = t
        return t, batch


@dataclass(frozen=True)
class ChannelParams:
    per: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.per <= 1.0:
            raise ValueError(f"packet error probability {self.per} outside [0, 1]")


@dataclass
class PiggybackPayload:
    success_counts: dict = field(default_factory=dict)  # sender -> successes heard this epoch
    own_throughput: float = 0.0
    neighbor_throughputs: dict = field(default_factory=dict)  # node -> s_j
    search_complete: int = 0
    shift: int = 0


@dataclass(frozen=True)
class Transmission:
    sender: int
    dest: int
    start: int
    duration: int
    payload_id: int = 0
    piggyback: Any = None

    @property
    def end(self) -> int:
        return self.start + self.duration


@dataclass
class ReceptionOutcome:
    transmission: Transmission
    status: str
    receivers_overhearing: frozenset = frozenset()


def overlaps(a: Transmission, b: Transmission) -> bool:
    return a.start < b.end and b.start < a.end


def heard_cleanly(tx: Transmission, listener: int, others: Iterable[Transmission],
                  topology: Topology) -> bool:
    """Whether ``listener`` decodes ``tx``: it is not transmitting itself and no
    other audible sender overlaps (no capture)."""
    audible = topology.one_hop(listener)
    for o in others:
        if o is tx:
            continue
        if (o.sender == listener or o.sender in audible) and overlaps(tx, o):
            return False
    return True


def apply_channel_error(status: str, per: float, rng: np.random.Generator) -> str:
    if status != SUCCESS:
        return status
    if per > 0 and rng.random() < per:
        return CHANNEL_ERROR
    return SUCCESS


def resolve_receptions(active: Iterable[Transmission], topology: Topology,
                       params: ChannelParams, rng: np.random.Generator) -> list[ReceptionOutcome]:
    """Outcome of every transmission at its intended receiver, plus the set of
    one-hop listeners able to read its piggyback."""
    txs = sorted(active, key=lambda t: (t.start, t.sender, t.payload_id))
    out = []
    for tx in txs:
        others = [o for o in txs if o is not tx and overlaps(tx, o)]
        ok = heard_cleanly(tx, tx.dest, others, topology)
        status = apply_channel_error(SUCCESS if ok else COLLIDED, params.per, rng)
        listeners = frozenset()
        if status == SUCCESS:
            listeners = frozenset(
                n for n in topology.one_hop(tx.sender) if heard_cleanly(tx, n, others, topology)
            )
        out.append(ReceptionOutcome(tx, status, listeners))
    return out


def broadcast_piggyback(outcomes: Iterable[ReceptionOutcome]) -> dict[int, list]:
    """Map listener -> [(sender, payload)] for every payload that got through."""
    inbox: dict[int, list] = {}
    for oc in outcomes:
        if oc.status != SUCCESS:
            continue
        for n in sorted(oc.receivers_overhearing):
            inbox.setdefault(n, []).append((oc.transmission.sender, oc.transmission.piggyback))
    return inbox
