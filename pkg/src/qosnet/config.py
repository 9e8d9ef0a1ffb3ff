"""Experiment configuration: a TOML document validated into ``ExperimentConfig``.

Every range check happens at parse time and failures name the offending key.
Unknown keys are rejected.
"""

from __future__ import annotations

from typing import List, Literal, Optional, Tuple

import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .baselines import PolicyKind
from .netcore import (FadingParams, FlowSpec, HardDeadline, InvalidConfig, MeanDelay, Topology,
                      build_topology)
from .scheduler import SchedulerParams


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TopologyConfig(_Section):
    nodes: int = Field(ge=2)
    seed: int = 0
    positions: Optional[List[Tuple[float, float]]] = None
    neighbors: Optional[List[List[int]]] = None

    @model_validator(mode="after")
    def _shape(self):
        if self.positions is not None and len(self.positions) != self.nodes:
            raise ValueError(f"positions: expected {self.nodes} entries, got {len(self.positions)}")
        if self.neighbors is not None and len(self.neighbors) != self.nodes:
            raise ValueError(f"neighbors: expected {self.nodes} lists, got {len(self.neighbors)}")
        return self


class ChannelConfig(_Section):
    path_loss_exponent: float = Field(3.0, ge=0)
    reference_gain: float = Field(1.0, gt=0)
    noise: float = Field(1e-3, gt=0)
    fading: bool = True


class FlowConfig(_Section):
    dest: int = Field(ge=0)
    sources: List[int] = Field(default_factory=list)
    rate: Optional[float] = Field(None, ge=0)
    rates: Optional[List[float]] = None
    qos: Literal["none", "mean_delay", "hard_deadline"] = "none"
    target: Optional[float] = Field(None, gt=0)
    deadline: Optional[float] = Field(None, gt=0)
    drop_ratio: Optional[float] = Field(None, gt=0, lt=1)
    theta: float = Field(10.0, gt=1)

    @model_validator(mode="after")
    def _consistent(self):
        if self.dest in self.sources:
            raise ValueError(f"sources: flow {self.dest} cannot be sourced at its destination")
        if len(set(self.sources)) != len(self.sources):
            raise ValueError("sources: duplicate source node")
        if (self.rate is None) == (self.rates is None):
            raise ValueError("exactly one of 'rate' or 'rates' is required")
        if self.rates is not None:
            if len(self.rates) != len(self.sources):
                raise ValueError("rates: one rate per source required")
            if any(r < 0 for r in self.rates):
                raise ValueError("rates: must be >= 0")
        if self.qos == "mean_delay" and self.target is None:
            raise ValueError("target: required for mean_delay flows")
        if self.qos == "hard_deadline" and (self.deadline is None or self.drop_ratio is None):
            raise ValueError("deadline and drop_ratio: required for hard_deadline flows")
        return self

    def spec(self) -> FlowSpec:
        rates = self.rates if self.rates is not None else [self.rate] * len(self.sources)
        qos = None
        if self.qos == "mean_delay":
            qos = MeanDelay(self.target)
        elif self.qos == "hard_deadline":
            qos = HardDeadline(self.deadline, self.drop_ratio)
        return FlowSpec(self.dest, dict(zip(self.sources, rates)), qos, self.theta)


class PolicyConfig(_Section):
    kind: PolicyKind = PolicyKind.QOS
    lee_election: Literal["fixed", "queue"] = "fixed"
    lee_election_prob: float = Field(0.5, ge=0, le=1)
    ddrpc_tx_prob: float = Field(0.5, ge=0, le=1)
    maxweight_levels: int = Field(5, ge=2)
    maxweight_max_nodes: int = Field(6, ge=2)


class SchedulerConfig(_Section):
    sigma: float = Field(0.999, ge=0, le=1)
    queue_cap: float = Field(1e5, gt=0)
    alpha2: float = Field(0.1, gt=0, lt=1)
    exact: bool = False
    delta: float = Field(0.2, gt=0, lt=0.5)
    epsilon: float = Field(0.1, gt=0, lt=0.5)
    samples: Optional[int] = Field(None, ge=1)
    rounds: Optional[int] = Field(None, ge=0)
    rounds_factor: float = Field(10.0, gt=0)
    p_max: float = Field(1.0, gt=0)
    eta_lag: int = Field(0, ge=0)
    qos_window: int = Field(0, ge=0)

    def params(self) -> SchedulerParams:
        return SchedulerParams(**self.model_dump())


class RunConfig(_Section):
    slots: int = Field(200_000, ge=0)
    warmup: int = Field(10_000, ge=0)
    seed: int = 0
    packet_size: float = Field(0.1, gt=0)
    stable_slope: float = Field(0.01, ge=0)
    unstable_slope: float = Field(0.1, gt=0)
    check_invariants: bool = False

    @model_validator(mode="after")
    def _thresholds(self):
        if self.stable_slope >= self.unstable_slope:
            raise ValueError("stable_slope must be below unstable_slope")
        return self


class SweepConfig(_Section):
    rates: List[float] = Field(default_factory=list)
    seeds: List[int] = Field(default_factory=list)
    topology_seeds: List[int] = Field(default_factory=list)
    policies: List[PolicyKind] = Field(
        default_factory=lambda: [PolicyKind.QOS, PolicyKind.LEE, PolicyKind.DDRPC])


class BoundsRow(_Section):
    """Either direct (beta1, beta2) or the inputs they are derived from."""

    alpha1: float = Field(gt=0, lt=1)
    alpha2: float = Field(gt=0, lt=1)
    beta1: Optional[float] = Field(None, gt=0, le=1)
    beta2: Optional[float] = Field(None, ge=0, le=1)
    nodes: Optional[int] = Field(None, ge=2)
    queue_cap: Optional[float] = Field(None, gt=0)
    alpha3: Optional[float] = Field(None, gt=0)
    beta3: Optional[float] = Field(None, gt=0, lt=1)
    power_radius: Optional[float] = Field(None, gt=0)
    beta: Optional[float] = Field(None, ge=0, le=1)
    sigma: Optional[float] = Field(None, ge=0, le=1)

    @model_validator(mode="after")
    def _complete(self):
        if self.beta1 is None and None in (self.nodes, self.queue_cap, self.alpha3, self.beta3,
                                           self.power_radius):
            raise ValueError("beta1 or all of nodes, queue_cap, alpha3, beta3, power_radius required")
        if self.beta2 is None and None in (self.beta, self.sigma):
            raise ValueError("beta2 or both of beta, sigma required")
        return self


class BoundsConfig(_Section):
    rows: List[BoundsRow] = Field(default_factory=list)


class OutputConfig(_Section):
    dir: str = "out"


class ExperimentConfig(_Section):
    topology: TopologyConfig
    flows: List[FlowConfig] = Field(min_length=1)
    channel: ChannelConfig = ChannelConfig()
    policy: PolicyConfig = PolicyConfig()
    scheduler: SchedulerConfig = SchedulerConfig()
    run: RunConfig = RunConfig()
    sweep: SweepConfig = SweepConfig()
    bounds: BoundsConfig = BoundsConfig()
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _cross(self):
        n = self.topology.nodes
        dests = [f.dest for f in self.flows]
        if len(set(dests)) != len(dests):
            raise ValueError("flows: two flows share a destination")
        for f in self.flows:
            if f.dest >= n or any(s >= n or s < 0 for s in f.sources):
                raise ValueError(f"flows: flow {f.dest} references a node outside 0..{n - 1}")
        return self

    def build_topology(self) -> Topology:
        t = self.topology
        topo = build_topology(t.nodes, t.seed, t.positions)
        if t.neighbors is not None:
            topo = Topology(topo.positions, tuple(tuple(nb) for nb in t.neighbors))
        return topo

    def fading(self) -> FadingParams:
        return FadingParams(**self.channel.model_dump())

    def flow_specs(self) -> list:
        return sorted((f.spec() for f in self.flows), key=lambda f: f.dest)

    def with_rate(self, rate: float) -> "ExperimentConfig":
        """Copy with every (source, flow) arrival rate set to ``rate``."""
        flows = [f.model_copy(update={"rate": rate, "rates": None}) for f in self.flows]
        return self.model_copy(update={"flows": flows})

    def replace(self, section: str, **changes) -> "ExperimentConfig":
        """Copy with fields of one section replaced, re-validated."""
        data = self.model_dump()
        data[section].update(changes)
        return config_from_dict(data)


def _key(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise InvalidConfig("<syntax>", str(exc)) from exc
    return config_from_dict(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise InvalidConfig(_key(err["loc"]), err["msg"]) from exc


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_config(raw.decode("utf-8"))


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.model_dump(mode="json", exclude_none=True))
