"""Scenario configuration: JSON schema, defaults and semantic checks."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .engine import DEFAULT_RESOLUTION, ChannelParams
from .learning import LearningParams
from .rra import RewardParams
from .topology import DynamicEvent, Topology, TopologyError, TrafficSpec, build_topology

MACS = ("aloha", "rra", "tdma-mab")
SWEEP_AXES = {"load": ("aloha", "rra"), "K": ("tdma-mab",), "per": MACS, "n_nodes": MACS}


class ConfigError(ValueError):
    """Invalid scenario; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


_num = {"type": "number"}
_prob = {"type": "number", "minimum": 0, "maximum": 1}
_posint = {"type": "integer", "minimum": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _obj({
    "name": {"type": "string"},
    "topology": {"anyOf": [{"type": "string"}, {"type": "object"}, {"type": "array"}]},
    "mac": {"enum": list(MACS)},
    "duration": _posint,
    "seed": {"type": "integer", "minimum": 0},
    "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
    "output": {"type": "string"},
    "resolution": _posint,
    "baseline": {"type": "boolean"},
    "traffic": _obj({
        "model": {"enum": ["poisson", "constant-rate"]},
        "load": {"type": "number", "minimum": 0},
        "loads": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}},
        "events": {"type": "array", "items": _obj({
            "time": {"type": "number", "minimum": 0},
            "kind": {"enum": ["load-change", "node-fail", "node-add"]},
            "node": {"type": "integer"},
            "load": {"type": "number", "minimum": 0},
            "attach": {"type": "array", "items": {"type": "integer"}},
        }, required=("time", "kind", "node"))},
    }),
    "learning": _obj({
        "alpha": _prob, "beta": _prob, "gamma": _prob,
        "epsilon0": _prob, "epsilon_decay": _prob, "epsilon_min": _prob,
        "random_init": {"type": "boolean"},
    }),
    "reward": _obj({"r_plus": _num, "r_minus": _num, "eps_s": _num, "eps_f": _num}),
    "rra": _obj({
        "epoch_tau": _posint,
        "n_bins": _posint,
        "action_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "neighborhood": {"enum": ["one_hop", "two_hop"]},
        "credit_delay": {"type": "integer", "minimum": 0},
    }),
    "aloha": _obj({
        "mode": {"enum": ["offered", "buffered"]},
        "max_backoff_tau": {"type": "number", "exclusiveMinimum": 0},
        "ack_delay_tau": {"type": "number", "minimum": 0},
    }),
    "tdma": _obj({
        "m": _posint, "K": {"type": "number", "minimum": 1}, "s": _posint, "lam": _posint,
        "window": _posint,
        "update_rule": {"enum": ["hysteretic", "classical"]},
        "classical_rate": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "epsilon0": _prob, "epsilon_decay": _prob,
        "offsets_tau": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}},
        "max_lag_tau": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "defrag": {"type": "boolean"},
        "cut": {"enum": ["frame-end", "max-shift"]},
    }),
    "channel": _obj({"per": _prob}),
    "convergence": _obj({"window": _posint, "tol": {"type": "number", "exclusiveMinimum": 0}}),
    "sweep": _obj({
        "axis": {"enum": list(SWEEP_AXES)},
        "values": {"type": "array", "items": _num, "minItems": 1},
    }, required=("axis", "values")),
}, required=("topology", "mac", "duration"))


@dataclass(frozen=True)
class RraConfig:
    epoch_tau: int = 100
    n_bins: int = 5
    action_step: float = 0.05
    neighborhood: str = "two_hop"
    credit_delay: int = 0


@dataclass(frozen=True)
class AlohaConfig:
    mode: str = "offered"
    max_backoff_tau: float = 16.0
    ack_delay_tau: float = 1.0


@dataclass(frozen=True)
class TdmaConfig:
    m: int = 1
    K: float = 1.33
    s: int = 7
    lam: int = 1
    window: int = 50
    update_rule: str = "hysteretic"
    classical_rate: float = 0.1
    epsilon0: float = 0.0
    epsilon_decay: float = 0.995
    offsets_tau: dict | None = None  # node -> lag in tau; random when absent
    max_lag_tau: float | None = None  # random lags drawn in [0, max_lag); whole frame if None
    defrag: bool = True
    cut: str = "frame-end"  # where the shrink removes time from the frame circle


@dataclass(frozen=True)
class ConvergenceConfig:
    window: int = 50
    tol: float = 0.02


@dataclass(frozen=True)
class ScenarioConfig:
    topology: Topology
    topology_spec: Any
    mac: str
    duration: int  # epochs for aloha/rra, frames for tdma-mab
    traffic: TrafficSpec
    seeds: tuple[int, ...] = (0,)
    name: str = "scenario"
    learning: LearningParams = LearningParams()
    reward: RewardParams = RewardParams()
    channel: ChannelParams = ChannelParams()
    rra: RraConfig = RraConfig()
    aloha: AlohaConfig = AlohaConfig()
    tdma: TdmaConfig = TdmaConfig()
    convergence: ConvergenceConfig = ConvergenceConfig()
    resolution: int = DEFAULT_RESOLUTION
    baseline: bool = True
    output: str = "out"
    sweep: dict | None = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)


def _path(err: jsonschema.ValidationError) -> str:
    parts = list(err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        parts += extra[:1]
    elif err.validator == "required":
        parts.append(err.message.split("'")[1])
    return "/" + "/".join(str(p) for p in parts)


def _message(err: jsonschema.ValidationError) -> str:
    if err.validator == "additionalProperties":
        return f"unknown key; allowed: {sorted(err.schema.get('properties', {}))}"
    if err.validator == "enum":
        return f"invalid value {err.instance!r}; valid values: {err.validator_value}"
    if err.validator == "required":
        return "missing required field"
    return err.message


def _construct(fn, path: str, **kw):
    try:
        return fn(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None


def config_from_dict(data: dict) -> ScenarioConfig:
    """Validate a parsed scenario document and fill defaults."""
    if not isinstance(data, dict):
        raise ConfigError("/", "scenario must be a JSON object")
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(data),
                    key=lambda e: (len(list(e.absolute_path)), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise ConfigError(_path(err), _message(err))
    raw = copy.deepcopy(data)
    if "seed" in data and "seeds" in data:
        raise ConfigError("/seeds", "give either seed or seeds, not both")
    seeds = tuple(data.get("seeds", [data.get("seed", 0)]))
    try:
        topo = build_topology(data["topology"])
    except (TopologyError, ValueError, TypeError) as exc:
        raise ConfigError("/topology", str(exc)) from None
    mac = data["mac"]

    tr = data.get("traffic", {})
    events = []
    for k, ev in enumerate(tr.get("events", [])):
        events.append(_construct(DynamicEvent, f"/traffic/events/{k}", time=ev["time"], kind=ev["kind"],
                                 node=ev["node"], load=ev.get("load"), attach=tuple(ev.get("attach", ()))))
    load = float(tr.get("load", 0.5 if mac != "tdma-mab" else 0.0))
    loads = {n: load for n in topo.nodes}
    for key, g in tr.get("loads", {}).items():
        try:
            n = int(key)
        except ValueError:
            raise ConfigError(f"/traffic/loads/{key}", "node ids must be integers") from None
        if n not in topo:
            raise ConfigError(f"/traffic/loads/{key}", f"unknown node {n}")
        loads[n] = float(g)
    traffic = _construct(TrafficSpec, "/traffic", model=tr.get("model", "poisson"), loads=loads,
                         events=tuple(events))

    learning = _construct(LearningParams, "/learning", **data.get("learning", {}))
    reward = _construct(RewardParams, "/reward", **data.get("reward", {}))
    channel = _construct(ChannelParams, "/channel", **data.get("channel", {}))
    tdma_raw = dict(data.get("tdma", {}))
    if "offsets_tau" in tdma_raw:
        offs = {}
        for key, v in tdma_raw["offsets_tau"].items():
            try:
                offs[int(key)] = float(v)
            except ValueError:
                raise ConfigError(f"/tdma/offsets_tau/{key}", "node ids must be integers") from None
            if int(key) not in topo:
                raise ConfigError(f"/tdma/offsets_tau/{key}", f"unknown node {key}")
        missing = sorted(set(topo.nodes) - set(offs))
        if missing:
            raise ConfigError("/tdma/offsets_tau", f"no offset for nodes {missing}")
        tdma_raw["offsets_tau"] = offs
    tdma = TdmaConfig(**tdma_raw)
    sweep = data.get("sweep")
    if sweep is not None and mac not in SWEEP_AXES[sweep["axis"]]:
        raise ConfigError("/sweep/axis", f"axis {sweep['axis']!r} does not apply to mac {mac!r}")
    if mac == "tdma-mab" and tdma.defrag and tdma.lam != 1:
        raise ConfigError("/tdma/defrag", "defragmentation needs lam = 1")
    return ScenarioConfig(
        topology=topo, topology_spec=data["topology"], mac=mac, duration=int(data["duration"]),
        traffic=traffic, seeds=seeds, name=data.get("name", "scenario"), learning=learning,
        reward=reward, channel=channel, rra=RraConfig(**data.get("rra", {})),
        aloha=AlohaConfig(**data.get("aloha", {})), tdma=tdma,
        convergence=ConvergenceConfig(**data.get("convergence", {})),
        resolution=int(data.get("resolution", DEFAULT_RESOLUTION)), baseline=data.get("baseline", True),
        output=data.get("output", "out"), sweep=sweep, raw=raw)


def parse_config(file) -> ScenarioConfig:
    """Read and validate a JSON scenario file."""
    try:
        text = Path(file).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("", f"cannot read {file}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    return config_from_dict(data)
