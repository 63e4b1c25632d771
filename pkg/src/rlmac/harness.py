"""Seeded scenario execution, sweeps, metrics export and baseline comparison."""

from __future__ import annotations

import csv
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import aloha, rra, tdma
from .config import ConfigError, ScenarioConfig, SWEEP_AXES
from .engine import ChannelParams
from .learning import LearningParams
from .rng import NETWORK, Streams
from .topology import Topology, TrafficSpec, apply_dynamic_event, build_topology


@dataclass(frozen=True)
class MetricsRecord:
    time: int  # epoch or frame index
    s: tuple  # per-node throughput (Erlangs), None for absent nodes
    collision: tuple  # per-node fraction of own packets lost at the receiver
    fairness: tuple  # per-node -sum |s_i - s_k| over one-hop neighbors
    epsilon: float | None = None
    frame_length: float | None = None  # in tau
    redundancy: float | None = None  # percent

    @property
    def S(self) -> float:
        return float(sum(x for x in self.s if x is not None))

    @property
    def collision_rate(self) -> float:
        vals = [x for x in self.collision if x is not None]
        return float(np.mean(vals)) if vals else 0.0

    @property
    def jain(self) -> float:
        return jain_index([x for x in self.s if x is not None])


@dataclass
class MetricsSeries:
    nodes: list
    records: list

    def __len__(self):
        return len(self.records)


@dataclass
class RunSummary:
    mac: str
    seed: int
    duration: int
    status: str  # converged | not-converged | n/a
    convergence: int | None  # epoch/frame where the criterion first held
    mean_S: float
    node_s: dict
    spread: float  # (max - min) / mean of node_s
    scenario: str = ""
    aloha_S: float | None = None
    ratio_vs_aloha: float | None = None
    initial_redundancy: float | None = None
    final_redundancy: float | None = None
    frame_length: float | None = None
    mab_frames: int | None = None
    defrag_frames: int | None = None
    total_frames: int | None = None
    replay_collisions: int | None = None

    def flat(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if k == "node_s":
                for n in sorted(v):
                    out[f"s_{n}"] = v[n]
            else:
                out[k] = v
        return out


def jain_index(values) -> float:
    v = np.asarray(values, dtype=float)
    sq = float((v ** 2).sum())
    if v.size == 0 or sq == 0:
        return 1.0
    return float(v.sum() ** 2 / (v.size * sq))


def spread(values) -> float:
    v = np.asarray(list(values), dtype=float)
    m = v.mean()
    return float((v.max() - v.min()) / m) if m > 0 else math.inf


def _fairness(s: dict, topo: Topology) -> dict:
    return {n: -sum(abs(s[n] - s[k]) for k in topo.one_hop(n) if k in s) for n in s}


def scenario_key(cfg: ScenarioConfig) -> str:
    loads = ",".join(f"{n}:{g:g}" for n, g in sorted(cfg.traffic.loads.items()))
    return f"{cfg.topology_spec}|{cfg.traffic.model}|{loads}|per={cfg.channel.per:g}|dur={cfg.duration}"


# ---------------------------------------------------------------- runners

def _topologies_by_epoch(cfg: ScenarioConfig, applied, n_epochs: int) -> list:
    topo, traffic = cfg.topology, cfg.traffic
    out, k = [], 0
    for e in range(n_epochs):
        while k < len(applied) and applied[k][0] <= e:
            topo, traffic = apply_dynamic_event(topo, traffic, applied[k][1])
            k += 1
        out.append(topo)
    return out


def _window(conv, duration):
    """Epochs counted as post-convergence; the last third when not converged."""
    if conv is not None and conv < duration:
        return slice(conv, duration)
    return slice(duration - max(duration // 3, 1), duration)


def _run_rra(cfg: ScenarioConfig, seed: int):
    p = cfg.rra
    res = rra.simulate_rra(cfg.topology, cfg.traffic, cfg.duration, seed, cfg.learning, cfg.reward,
                           cfg.channel, p.epoch_tau, cfg.resolution, p.n_bins,
                           rra.action_space(p.action_step), p.neighborhood, p.credit_delay)
    thr = res.throughput()
    alive = res.alive()
    topos = _topologies_by_epoch(cfg, res.event_epochs, cfg.duration)
    records = []
    for e in range(cfg.duration):
        s = {n: float(thr[c, e]) for c, n in enumerate(res.nodes) if alive[c, e]}
        f = _fairness(s, topos[e])
        coll = {}
        for c, n in enumerate(res.nodes):
            if alive[c, e]:
                tx = res.transmitted[c, e]
                coll[n] = float((tx - res.successes[c, e]) / tx) if tx else 0.0
        eps = [res.epsilon[c, e] for c in range(len(res.nodes)) if alive[c, e]]
        records.append(MetricsRecord(e, tuple(s.get(n) for n in res.nodes),
                                     tuple(coll.get(n) for n in res.nodes),
                                     tuple(f.get(n) for n in res.nodes),
                                     float(np.mean(eps)) if eps else None))
    conv = rra.convergence_epoch(res, cfg.learning.epsilon_min, cfg.convergence.window, cfg.convergence.tol)
    w = _window(conv, cfg.duration)
    S = thr.sum(0)
    node_s = {n: float(thr[c, w][alive[c, w]].mean()) for c, n in enumerate(res.nodes) if alive[c, w].any()}
    summary = RunSummary("rra", seed, cfg.duration, "converged" if conv is not None else "not-converged",
                         conv, float(S[w].mean()), node_s, spread(node_s.values()), scenario_key(cfg))
    if cfg.baseline:
        base = _aloha_result(cfg, seed)
        aS = float((base.throughput().sum(0))[w].mean())
        summary.aloha_S = aS
        summary.ratio_vs_aloha = summary.mean_S / aS if aS > 0 else math.inf
    return MetricsSeries(list(res.nodes), records), summary


def _aloha_result(cfg: ScenarioConfig, seed: int) -> aloha.AlohaResult:
    a = cfg.aloha
    return aloha.simulate_aloha(cfg.topology, cfg.traffic, cfg.duration, seed, cfg.channel, cfg.resolution,
                                cfg.rra.epoch_tau, a.mode, a.max_backoff_tau, a.ack_delay_tau)


def _run_aloha(cfg: ScenarioConfig, seed: int):
    res = _aloha_result(cfg, seed)
    thr = res.throughput()
    topos = _topologies_by_epoch(cfg, [(int(math.ceil(ev.time / cfg.rra.epoch_tau)), ev)
                                       for ev in cfg.traffic.events], cfg.duration)
    records = []
    for e in range(cfg.duration):
        present = set(topos[e].nodes)
        s = {n: float(thr[c, e]) for c, n in enumerate(res.nodes) if n in present}
        coll = {}
        for c, n in enumerate(res.nodes):
            if n in present:
                att = res.attempts[c, e]
                coll[n] = float((att - res.successes[c, e]) / att) if att else 0.0
        f = _fairness(s, topos[e])
        records.append(MetricsRecord(e, tuple(s.get(n) for n in res.nodes),
                                     tuple(coll.get(n) for n in res.nodes),
                                     tuple(f.get(n) for n in res.nodes)))
    w = _window(None, cfg.duration)
    node_s = {n: float(thr[c, w].mean()) for c, n in enumerate(res.nodes)}
    summary = RunSummary("aloha", seed, cfg.duration, "n/a", None, float(thr.sum(0)[w].mean()), node_s,
                         spread(node_s.values()), scenario_key(cfg))
    return MetricsSeries(list(res.nodes), records), summary


def tdma_setup(cfg: ScenarioConfig, seed: int):
    """Frame configuration and frame offsets (ticks) for a TDMA run."""
    t = cfg.tdma
    fc = tdma.make_frame_config(cfg.topology, t.K, t.m, t.s, t.lam, cfg.resolution)
    if t.offsets_tau is not None:
        offsets = {n: int(round(v * cfg.resolution)) for n, v in t.offsets_tau.items()}
        return fc, tdma.init_frames(cfg.topology, fc, offsets=offsets)
    max_lag = None if t.max_lag_tau is None else min(t.max_lag_tau * cfg.resolution, fc.T)
    return fc, tdma.init_frames(cfg.topology, fc, Streams(seed).get(NETWORK, "offsets"), max_lag=max_lag)


def _tdma_record(k, nodes, fc, succ, coll, topo):
    s = {n: float(succ[i]) * fc.tau / fc.T for i, n in enumerate(nodes)}
    f = _fairness(s, topo)
    return MetricsRecord(k, tuple(s[n] for n in nodes), tuple(float(coll[i]) / fc.lam for i, n in enumerate(nodes)),
                         tuple(f[n] for n in nodes), None, fc.T / fc.tau,
                         tdma.redundancy_pct(fc.T, fc.occupied))


def _run_tdma(cfg: ScenarioConfig, seed: int):
    t = cfg.tdma
    fc, offsets = tdma_setup(cfg, seed)
    params = LearningParams(alpha=cfg.learning.alpha, beta=cfg.learning.beta, gamma=cfg.learning.gamma,
                            epsilon0=t.epsilon0, epsilon_decay=t.epsilon_decay, epsilon_min=0.0,
                            random_init=cfg.learning.random_init)
    mab = tdma.simulate_mab(cfg.topology, fc, offsets, cfg.duration, seed, params, t.update_rule, t.window,
                            cfg.channel, True, t.classical_rate)
    nodes = mab.nodes
    topo = cfg.topology
    records = [_tdma_record(k, nodes, fc, mab.node_success[k], mab.node_collided[k], topo)
               for k in range(mab.frames)]
    summary = RunSummary("tdma-mab", seed, cfg.duration, "converged" if mab.converged else "not-converged",
                         mab.converged_frame, 0.0, {}, 0.0, scenario_key(cfg),
                         initial_redundancy=tdma.redundancy_pct(fc.T, fc.occupied), mab_frames=mab.converged_frame)
    final_fc, final_offsets = fc, offsets
    mu = {n: mab.arms[n][0] * fc.s for n in nodes} if fc.lam == 1 else None
    if mab.converged and t.defrag:
        d = tdma.simulate_defrag(topo, fc, offsets, mab.arms, seed, cfg.channel, cut=t.cut)
        for k in range(d.collided.shape[0]):
            c = d.collided[k].astype(int)
            records.append(_tdma_record(len(records), nodes, fc, 1 - c, c, topo))
        summary.defrag_frames = d.frames
        summary.total_frames = mab.converged_frame + d.frames
        if d.shrunk:
            final_fc, final_offsets, mu = d.fc, d.offsets, d.mu
        else:
            summary.status = "not-converged"
    if mab.converged and mu is not None:
        summary.replay_collisions = tdma.replay(topo, final_fc, final_offsets, mu, 100, seed, cfg.channel)
    # steady state with the final schedule fills the rest of the run
    if mab.converged:
        streams = Streams(seed)
        idx = {n: k for k, n in enumerate(nodes)}
        adj = topo.adjacency_matrix()
        nbrs = [np.array([idx[j] for j in sorted(topo.one_hop(n))]) for n in nodes]
        starts, owner = [], []
        for n in nodes:
            for a in mab.arms[n]:
                shift = (mu[n] * final_fc.micro) if mu is not None else a * final_fc.mini
                starts.append((final_offsets[n] + shift) % final_fc.T)
                owner.append(idx[n])
        owner = np.array(owner)
        while len(records) < cfg.duration:
            out = tdma.frame_outcome(starts, owner, adj, final_fc, nbrs, streams, nodes, cfg.channel.per)
            ok = out.delivered[np.arange(len(owner)), out.dest] & out.heard[owner, out.dest]
            succ = np.bincount(owner, ok, len(nodes))
            coll = np.bincount(owner, out.collided, len(nodes))
            records.append(_tdma_record(len(records), nodes, final_fc, succ, coll, topo))
    start = summary.total_frames or summary.mab_frames
    post = records[start:] if start is not None and start < len(records) else records[-max(len(records) // 3, 1):]
    node_s = {n: float(np.mean([r.s[i] for r in post])) for i, n in enumerate(nodes)}
    summary.node_s = node_s
    summary.mean_S = float(np.mean([r.S for r in post]))
    summary.spread = spread(node_s.values())
    summary.frame_length = final_fc.T / final_fc.tau
    summary.final_redundancy = tdma.redundancy_pct(final_fc.T, final_fc.occupied)
    return MetricsSeries(list(nodes), records), summary


_RUNNERS = {"rra": _run_rra, "aloha": _run_aloha, "tdma-mab": _run_tdma}


def run_scenario(cfg: ScenarioConfig, seed: int):
    """Run one seed; returns (MetricsSeries, RunSummary)."""
    return _RUNNERS[cfg.mac](cfg, int(seed))


# ---------------------------------------------------------------- sweeps

def with_value(cfg: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    """Copy of ``cfg`` with one sweep axis set."""
    if axis not in SWEEP_AXES:
        raise ConfigError("/sweep/axis", f"unknown axis {axis!r}; valid values: {list(SWEEP_AXES)}")
    if cfg.mac not in SWEEP_AXES[axis]:
        raise ConfigError("/sweep/axis", f"axis {axis!r} does not apply to mac {cfg.mac!r}")
    if axis == "load":
        loads = {n: float(value) for n in cfg.traffic.loads}
        return replace(cfg, traffic=replace(cfg.traffic, loads=loads))
    if axis == "K":
        return replace(cfg, tdma=replace(cfg.tdma, K=float(value)))
    if axis == "per":
        return replace(cfg, channel=ChannelParams(float(value)))
    spec = cfg.topology_spec
    if not isinstance(spec, str) or not re.search(r"\(\s*\d+\s*\)", spec):
        raise ConfigError("/topology", "n_nodes sweeps need a one-argument preset such as fully_connected(3)")
    new_spec = re.sub(r"\(\s*\d+\s*\)", f"({int(value)})", spec)
    topo = build_topology(new_spec)
    g = next(iter(cfg.traffic.loads.values()), 0.0)
    return replace(cfg, topology=topo, topology_spec=new_spec,
                   traffic=TrafficSpec(cfg.traffic.model, {n: g for n in topo.nodes}, cfg.traffic.events))


def _run_one(args):
    cfg, axis, value, seed = args
    _, summary = run_scenario(with_value(cfg, axis, value), seed)
    return value, seed, summary


@dataclass
class SweepResult:
    axis: str
    rows: list  # one flat dict per (value, seed)
    aggregate: list = field(default_factory=list)  # one dict per value


_AGG_FIELDS = ("mean_S", "convergence", "ratio_vs_aloha", "final_redundancy", "total_frames", "spread")


def run_sweep(cfg: ScenarioConfig, axis: str | None = None, values=None, seeds=None,
              workers: int = 1) -> SweepResult:
    """One summary row per (value, seed) plus mean and std per value."""
    if axis is None:
        if cfg.sweep is None:
            raise ConfigError("/sweep", "no sweep axis given")
        axis, values = cfg.sweep["axis"], cfg.sweep["values"]
    if not values:
        raise ConfigError("/sweep/values", "no sweep values")
    with_value(cfg, axis, values[0])  # validates axis/mac
    seeds = list(seeds if seeds is not None else cfg.seeds)
    jobs = [(cfg, axis, v, s) for v in values for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    rows = []
    for v, s, summ in results:
        row = {"axis": axis, "value": v}
        row.update(summ.flat())
        rows.append(row)
    agg = []
    for v in values:
        sub = [r for r in rows if r["value"] == v]
        entry = {"axis": axis, "value": v, "n": len(sub)}
        for k in _AGG_FIELDS:
            xs = [r[k] for r in sub if r.get(k) is not None]
            entry[f"{k}_mean"] = float(np.mean(xs)) if xs else None
            entry[f"{k}_std"] = float(np.std(xs)) if xs else None
        entry["converged"] = sum(r["status"] == "converged" for r in sub)
        agg.append(entry)
    return SweepResult(axis, rows, agg)


# ---------------------------------------------------------------- export

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return "inf" if math.isinf(x) else format(float(x) + 0.0, ".10g")  # +0.0 folds -0
    return str(x)


def metrics_columns(nodes) -> list[str]:
    base = ["time", "S", "collision_rate", "jain", "epsilon", "frame_length", "redundancy_pct"]
    return base + [f"{p}_{n}" for n in nodes for p in ("s", "collision", "fairness")]


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def export_metrics(series: MetricsSeries, out_dir, summary: RunSummary | None = None,
                   stem: str = "run") -> list[Path]:
    """Write ``<stem>.metrics.csv`` and, with a summary, ``<stem>.summary.txt``."""
    if not len(series):
        raise ValueError("empty metrics series")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for r in series.records:
            row = [r.time, r.S, r.collision_rate, r.jain, r.epsilon, r.frame_length, r.redundancy]
            for i in range(len(series.nodes)):
                row += [r.s[i], r.collision[i], r.fairness[i]]
            rows.append(row)
        paths = [out / f"{stem}.metrics.csv"]
        _write_csv(paths[0], metrics_columns(series.nodes), rows)
        if summary is not None:
            paths.append(out / f"{stem}.summary.txt")
            write_summary(paths[1], summary.flat())
    except OSError as exc:
        raise OSError(f"cannot write metrics to {out}: {exc}") from exc
    return paths


def write_summary(path, flat: dict):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in flat.items():
            fh.write(f"{k}={_fmt(v)}\n")


def export_sweep(result: SweepResult, out_dir, stem: str = "sweep") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, rows in ((f"{stem}.csv", result.rows), (f"{stem}_aggregate.csv", result.aggregate)):
        header = []
        for r in rows:
            header += [k for k in r if k not in header]
        _write_csv(out / name, header, [[r.get(k) for k in header] for r in rows])
        paths.append(out / name)
    return paths


# ---------------------------------------------------------------- comparison

@dataclass(frozen=True)
class BaselineReport:
    ratio: float
    S_rra: float
    S_aloha: float
    spread_rra: float
    spread_aloha: float

    @property
    def fairer(self) -> bool:
        return self.spread_rra < self.spread_aloha


def compare_baseline(summary_rra: RunSummary, summary_aloha: RunSummary) -> BaselineReport:
    """Throughput ratio and fairness spread of a learned MAC against ALOHA."""
    if summary_rra.scenario != summary_aloha.scenario:
        raise ValueError(f"mismatched scenarios: {summary_rra.scenario!r} vs {summary_aloha.scenario!r}")
    if summary_aloha.mean_S <= 0:
        raise ValueError("baseline throughput is zero")
    return BaselineReport(summary_rra.mean_S / summary_aloha.mean_S, summary_rra.mean_S, summary_aloha.mean_S,
                          summary_rra.spread, summary_aloha.spread)
