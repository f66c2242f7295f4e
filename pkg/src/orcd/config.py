"""Scenario configuration: a versioned JSON document.

Times are in slots unless a field name says otherwise.  One slot is one
data-packet transmission opportunity.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import generators
from .network import Topology, TopologyError, validate_topology
from .policies import POLICY_NAMES

SCHEMA_VERSION = 1
SWEEP_PARAMS = ("lambda", "N", "M", "Tc_multiple")


class ConfigError(ValueError):
    pass


@dataclass
class TopologySpec:
    generator: str | None = None
    params: dict = field(default_factory=dict)
    matrix: list | None = None
    destinations: list | None = None


@dataclass
class Flow:
    source: int
    rate: float
    destination: int | None = None


@dataclass
class Burst:
    nodes: list
    size: int
    period: int
    start: int = 0


@dataclass
class TrafficSpec:
    flows: list = field(default_factory=list)
    load: float = 1.0  # multiplies every flow rate; the ``lambda`` sweep sets it
    a_max: int = 20
    burst: Burst | None = None


@dataclass
class PolicySpec:
    name: str = "dorcd"
    M: int | None = None


@dataclass
class TimingSpec:
    ts_slots: int = 500
    tc_multiple: int = 1
    # restart the distributed computation from scratch every cycle;
    # None means "when the cycle has at least D control rounds"
    restart_cycle: bool | None = None


@dataclass
class ControlSpec:
    loss: float = 0.0
    poison: bool = False
    estimate_ttl_epochs: int | None = 3


@dataclass
class MacSpec:
    mode: str = "ideal"  # ideal | contention
    retry_limit: int = 7
    data_bytes: int = 512
    data_rate_mbps: float = 11.0
    ack_bytes: int = 24
    ack_rate_mbps: float = 11.0
    fo_bytes: int = 20
    fo_rate_mbps: float = 1.0
    sifs_us: float = 10.0
    ack_loss: bool = True
    fo_loss: bool = True
    cw_min: int = 2

    @property
    def t_data_us(self):
        return self.data_bytes * 8 / self.data_rate_mbps

    @property
    def t_ack_us(self):
        return self.ack_bytes * 8 / self.ack_rate_mbps

    @property
    def t_fo_us(self):
        return self.fo_bytes * 8 / self.fo_rate_mbps


@dataclass
class LinkSpec:
    estimation: str = "true"  # true | estimated
    alpha: float = 0.5
    beta: float = 0.5
    window: int = 500


@dataclass
class ScenarioConfig:
    version: int = SCHEMA_VERSION
    name: str = "scenario"
    topology: TopologySpec = field(default_factory=TopologySpec)
    traffic: TrafficSpec = field(default_factory=TrafficSpec)
    policy: PolicySpec = field(default_factory=PolicySpec)
    timing: TimingSpec = field(default_factory=TimingSpec)
    control: ControlSpec = field(default_factory=ControlSpec)
    mac: MacSpec = field(default_factory=MacSpec)
    links: LinkSpec = field(default_factory=LinkSpec)
    buffer_packets: int | None = 1464  # 750 KB of 512-byte packets
    ttl: int = 64
    horizon: int = 10_000
    warmup_fraction: float = 0.1
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "results"
    backlog_every: int = 1

    @property
    def warmup_slots(self):
        return int(self.horizon * self.warmup_fraction)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **changes):
        new = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        return new

    def scenario_hash(self):
        body = self.to_dict()
        body.pop("seeds")
        body.pop("output_dir")
        raw = json.dumps(body, sort_keys=True).encode()
        return hashlib.sha256(raw).hexdigest()[:12]

    def build_topology(self) -> Topology:
        return build_topology(self.topology)


_NESTED = {
    "topology": TopologySpec,
    "policy": PolicySpec,
    "timing": TimingSpec,
    "control": ControlSpec,
    "mac": MacSpec,
    "links": LinkSpec,
}


def _make(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(data: dict) -> ScenarioConfig:
    data = copy.deepcopy(data)
    if data.get("version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {data.get('version')!r}")
    for key, cls in _NESTED.items():
        if key in data:
            data[key] = _make(cls, data[key], key)
    if "traffic" in data:
        t = dict(data["traffic"])
        t["flows"] = [_make(Flow, f, "traffic.flows[]") for f in t.get("flows", [])]
        if t.get("burst") is not None:
            t["burst"] = _make(Burst, t["burst"], "traffic.burst")
        data["traffic"] = _make(TrafficSpec, t, "traffic")
    cfg = _make(ScenarioConfig, data, "config")
    validate_config(cfg)
    return cfg


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(data)


def save_config(cfg: ScenarioConfig, path):
    Path(path).write_text(cfg.to_json())


def build_topology(spec: TopologySpec) -> Topology:
    if (spec.matrix is None) == (spec.generator is None):
        raise ConfigError("topology needs exactly one of 'matrix' or 'generator'")
    try:
        if spec.matrix is not None:
            if not spec.destinations:
                raise ConfigError("an explicit matrix needs 'destinations'")
            return Topology(spec.matrix, spec.destinations)
        gen = generators.GENERATORS.get(spec.generator)
        if gen is None:
            raise ConfigError(f"unknown generator {spec.generator!r}")
        topo = gen(**spec.params)
        if spec.destinations:
            topo = Topology(topo.links, spec.destinations)
        return topo
    except (TopologyError, TypeError) as exc:
        raise ConfigError(f"topology: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"topology: {exc}") from None


def validate_config(cfg: ScenarioConfig) -> list[str]:
    """Raise ConfigError on a malformed scenario; return topology diagnostics."""
    problems = []
    if cfg.policy.name not in POLICY_NAMES:
        problems.append(f"unknown policy {cfg.policy.name!r}; choose from {', '.join(POLICY_NAMES)}")
    if cfg.policy.M is not None and cfg.policy.M < 1:
        problems.append("policy.M must be at least 1")
    if cfg.timing.ts_slots < 1:
        problems.append("timing.ts_slots must be positive")
    if cfg.timing.tc_multiple < 1:
        problems.append("timing.tc_multiple must be a positive integer (T_c = multiple * T_s)")
    if cfg.mac.mode not in ("ideal", "contention"):
        problems.append(f"unknown mac.mode {cfg.mac.mode!r}")
    if not 0 <= cfg.control.loss <= 1:
        problems.append("control.loss must lie in [0, 1]")
    if cfg.links.estimation not in ("true", "estimated"):
        problems.append("links.estimation must be 'true' or 'estimated'")
    if cfg.horizon < 0:
        problems.append("horizon must be non-negative")
    if not 0 <= cfg.warmup_fraction < 1:
        problems.append("warmup_fraction must lie in [0, 1)")
    if not cfg.seeds:
        problems.append("seeds must be non-empty")
    if cfg.traffic.load < 0 or any(f.rate < 0 for f in cfg.traffic.flows):
        problems.append("arrival rates must be non-negative")
    if cfg.traffic.a_max < 1:
        problems.append("traffic.a_max must be at least 1")
    if cfg.backlog_every < 1:
        problems.append("backlog_every must be positive")
    if problems:
        raise ConfigError("; ".join(problems))
    topo = build_topology(cfg.topology)
    for f in cfg.traffic.flows:
        d = topo.destinations[0] if f.destination is None else f.destination
        if not 0 <= f.source < topo.node_count or d not in topo.destinations:
            raise ConfigError(f"flow {f}: source or destination outside the topology")
        if f.source == d:
            raise ConfigError(f"flow {f}: source is its own destination")
    return validate_topology(topo).messages()


def apply_sweep(cfg: ScenarioConfig, param: str, value) -> ScenarioConfig:
    new = copy.deepcopy(cfg)
    if param == "lambda":
        new.traffic.load = float(value)
    elif param == "N":
        if new.topology.generator != "canonical":
            raise ConfigError("the N sweep needs the canonical generator")
        new.topology.params = {**new.topology.params, "N": int(value)}
    elif param == "M":
        new.policy.M = int(value)
    elif param == "Tc_multiple":
        new.timing.tc_multiple = int(value)
    else:
        raise ConfigError(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    validate_config(new)
    return new


def parse_sweep(text: str):
    try:
        param, values = text.split("=", 1)
    except ValueError:
        raise ConfigError(f"sweep must look like PARAM=v1,v2,...; got {text!r}") from None
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    vals = [v for v in values.split(",") if v]
    if not vals:
        raise ConfigError("sweep needs at least one value")
    return param, [float(v) if param == "lambda" else int(v) for v in vals]
