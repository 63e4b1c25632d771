"""Interference graphs, traffic specs and dynamic network events."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

NEVER = math.inf


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Undirected interference graph. Links are binary: in range or not."""

    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if len(set(self.nodes)) != len(self.nodes):
            raise TopologyError("duplicate node ids")
        known = set(self.nodes)
        for a, b in self.edges:
            if a == b:
                raise TopologyError(f"self-loop on node {a}")
            if a > b:
                raise TopologyError(f"edge ({a},{b}) not normalized")
            if a not in known or b not in known:
                raise TopologyError(f"edge ({a},{b}) references unknown node")
        tmp: dict[int, set[int]] = {n: set() for n in self.nodes}
        for a, b in self.edges:
            tmp[a].add(b)
            tmp[b].add(a)
        adj = {n: frozenset(v) for n, v in tmp.items()}
        object.__setattr__(self, "_adj", adj)

    @classmethod
    def from_edges(cls, nodes: Iterable[int], edges: Iterable[tuple[int, int]]) -> "Topology":
        norm = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise TopologyError(f"self-loop on node {a}")
            norm.add((min(a, b), max(a, b)))
        return cls(tuple(sorted(int(n) for n in nodes)), frozenset(norm))

    @classmethod
    def from_adjacency(cls, adjacency: dict) -> "Topology":
        """Build from {node: [neighbors]}; the listing must be symmetric."""
        adj = {int(k): {int(x) for x in v} for k, v in adjacency.items()}
        nodes = set(adj)
        for v in adj.values():
            nodes |= v
        edges = set()
        for a, nbrs in adj.items():
            for b in nbrs:
                if a == b:
                    raise TopologyError(f"self-loop on node {a}")
                if a not in adj.get(b, set()):
                    raise TopologyError(f"asymmetric adjacency: {a}->{b} listed but not {b}->{a}")
                edges.add((min(a, b), max(a, b)))
        return cls(tuple(sorted(nodes)), frozenset(edges))

    def __contains__(self, node) -> bool:
        return node in self._adj

    def __len__(self) -> int:
        return len(self.nodes)

    def _check(self, i: int):
        if i not in self._adj:
            raise TopologyError(f"unknown node {i}")

    def one_hop(self, i: int) -> frozenset[int]:
        self._check(i)
        return self._adj[i]

    def two_hop(self, i: int) -> frozenset[int]:
        """1-hop neighbors plus neighbors-of-neighbors, excluding ``i``."""
        self._check(i)
        out = set(self._adj[i])
        for j in self._adj[i]:
            out |= self._adj[j]
        out.discard(i)
        return frozenset(out)

    def is_fully_connected(self) -> bool:
        n = len(self.nodes)
        return len(self.edges) == n * (n - 1) // 2

    def adjacency_matrix(self) -> np.ndarray:
        """Boolean matrix indexed by position in ``nodes``."""
        idx = {n: k for k, n in enumerate(self.nodes)}
        a = np.zeros((len(self.nodes), len(self.nodes)), dtype=bool)
        for x, y in self.edges:
            a[idx[x], idx[y]] = a[idx[y], idx[x]] = True
        return a

    def without_node(self, i: int) -> "Topology":
        self._check(i)
        return Topology(
            tuple(n for n in self.nodes if n != i),
            frozenset(e for e in self.edges if i not in e),
        )

    def with_node(self, i: int, attach: Iterable[int]) -> "Topology":
        if i in self._adj:
            raise TopologyError(f"node {i} already exists")
        attach = [int(a) for a in attach]
        for a in attach:
            self._check(a)
        edges = set(self.edges) | {(min(i, a), max(i, a)) for a in attach}
        return Topology(tuple(sorted(self.nodes + (i,))), frozenset(edges))


def fully_connected(n: int) -> Topology:
    nodes = range(1, n + 1)
    return Topology.from_edges(nodes, [(a, b) for a in nodes for b in nodes if a < b])


def path(n: int) -> Topology:
    return Topology.from_edges(range(1, n + 1), [(k, k + 1) for k in range(1, n)])


def grid(rows: int, cols: int) -> Topology:
    """Rook-adjacency grid, nodes numbered row-major from 1."""
    def nid(r, c):
        return r * cols + c + 1

    edges = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append((nid(r, c), nid(r, c + 1)))
            if r + 1 < rows:
                edges.append((nid(r, c), nid(r + 1, c)))
    return Topology.from_edges(range(1, rows * cols + 1), edges)


def paper_5node() -> Topology:
    # square 1-2-3-4 with node 5 hanging off node 4
    return Topology.from_edges(range(1, 6), [(1, 2), (2, 3), (3, 4), (4, 1), (4, 5)])


def paper_12node() -> Topology:
    # 4x3 rook grid; stand-in for an undrawn 12-node partial topology
    return grid(4, 3)


def mesh20() -> Topology:
    return grid(4, 5)


_PRESET_RE = re.compile(r"^\s*([a-z_0-9]+)\s*(?:\(([^)]*)\))?\s*$")

PRESETS = {
    "fully_connected": fully_connected,
    "path": path,
    "grid": grid,
    "paper_5node": paper_5node,
    "paper_12node": paper_12node,
    "paper_12node_partial": paper_12node,
    "mesh20": mesh20,
}


def build_topology(spec) -> Topology:
    """Build from a preset string such as ``"fully_connected(3)"``, an
    adjacency dict, or a dict ``{"nodes": [...], "edges": [[a, b], ...]}``."""
    if isinstance(spec, Topology):
        return spec
    if isinstance(spec, str):
        m = _PRESET_RE.match(spec)
        if not m or m.group(1) not in PRESETS:
            raise TopologyError(f"unknown topology preset {spec!r}; known: {sorted(PRESETS)}")
        args = [int(x) for x in m.group(2).split(",")] if m.group(2) else []
        try:
            return PRESETS[m.group(1)](*args)
        except TypeError as exc:
            raise TopologyError(f"bad arguments for preset {spec!r}: {exc}") from None
    if isinstance(spec, dict):
        if "edges" in spec:
            edges = [tuple(e) for e in spec["edges"]]
            nodes = spec.get("nodes") or sorted({n for e in edges for n in e})
            return Topology.from_edges(nodes, edges)
        return Topology.from_adjacency(spec)
    if isinstance(spec, (list, tuple)):
        edges = [tuple(e) for e in spec]
        return Topology.from_edges(sorted({n for e in edges for n in e}), edges)
    raise TopologyError(f"cannot build topology from {type(spec).__name__}")


# ---------------------------------------------------------------- traffic

@dataclass(frozen=True)
class DynamicEvent:
    time: float  # in units of tau for rra/aloha, frames for tdma
    kind: str  # "load-change" | "node-fail" | "node-add"
    node: int
    load: float | None = None
    attach: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("load-change", "node-fail", "node-add"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "load-change" and (self.load is None or self.load < 0):
            raise ValueError("load-change needs a non-negative load")


@dataclass(frozen=True)
class TrafficSpec:
    model: str = "poisson"  # or "constant-rate"
    loads: dict = field(default_factory=dict)  # node -> g_i in Erlangs
    events: tuple[DynamicEvent, ...] = ()

    def __post_init__(self):
        if self.model not in ("poisson", "constant-rate"):
            raise ValueError(f"unknown traffic model {self.model!r}")
        for n, g in self.loads.items():
            if g < 0:
                raise ValueError(f"negative load {g} for node {n}")
        times = [e.time for e in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("event times must be strictly increasing")

    @classmethod
    def uniform(cls, topology: Topology, g: float, model: str = "poisson", events=()) -> "TrafficSpec":
        return cls(model, {n: float(g) for n in topology.nodes}, tuple(events))

    def load(self, i: int) -> float:
        return float(self.loads.get(i, 0.0))


def sample_next_arrival(spec: TrafficSpec, i: int, now: float, rng: np.random.Generator,
                        tau: float = 1.0) -> float:
    """Time of the next application packet at node ``i``; NEVER if idle."""
    g = spec.load(i)
    if g <= 0:
        return NEVER
    mean = tau / g
    if spec.model == "constant-rate":
        return now + mean
    return now + rng.exponential(mean)


def pick_destination(topology: Topology, i: int, rng: np.random.Generator) -> int:
    nbrs = sorted(topology.one_hop(i))
    if not nbrs:
        raise TopologyError(f"node {i} has no neighbors")
    return nbrs[int(rng.integers(len(nbrs)))]


def apply_dynamic_event(topology: Topology, spec: TrafficSpec, event: DynamicEvent):
    """Return the (topology, traffic) pair after ``event``."""
    loads = dict(spec.loads)
    if event.kind == "node-fail":
        topology = topology.without_node(event.node)
        loads.pop(event.node, None)
    elif event.kind == "node-add":
        topology = topology.with_node(event.node, event.attach)
        loads[event.node] = float(event.load or 0.0)
    else:
        if event.node not in topology:
            raise TopologyError(f"unknown node {event.node}")
        loads[event.node] = float(event.load)
    return topology, replace(spec, loads=loads)
