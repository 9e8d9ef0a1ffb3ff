"""Physical and queueing substrate: topology, fading channels, SINR rates and
per-(node, flow) FIFO queues with timestamped packets."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np


class QosnetError(Exception):
    """Base class for all errors raised by this package."""


class InvalidConfig(QosnetError, ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class InvalidParameter(QosnetError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Topology and channel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Topology:
    positions: np.ndarray
    neighbors: tuple

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise InvalidConfig("topology.positions", "expected an (N, 2) array")
        n = pos.shape[0]
        if n < 2:
            raise InvalidConfig("topology.nodes", f"need at least 2 nodes, got {n}")
        if np.any(pos < 0.0) or np.any(pos > 1.0):
            raise InvalidConfig("topology.positions", "positions must lie in [0, 1]^2")
        if len(self.neighbors) != n:
            raise InvalidConfig("topology.neighbors", "one neighbor list per node required")
        nbrs = tuple(tuple(sorted(set(int(j) for j in row))) for row in self.neighbors)
        for i, row in enumerate(nbrs):
            if i in row:
                raise InvalidConfig("topology.neighbors", f"self-loop at node {i}")
            if not row:
                raise InvalidConfig("topology.neighbors", f"node {i} has no neighbors")
            for j in row:
                if not 0 <= j < n:
                    raise InvalidConfig("topology.neighbors", f"unknown node {j}")
                if i not in nbrs[j]:
                    raise InvalidConfig("topology.neighbors", f"relation not symmetric for ({i}, {j})")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "neighbors", nbrs)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=-1))

    def is_complete(self) -> bool:
        return all(len(row) == self.n - 1 for row in self.neighbors)


def complete_neighbors(n: int) -> tuple:
    return tuple(tuple(j for j in range(n) if j != i) for i in range(n))


def build_topology(n: int, seed: Optional[int] = None, positions=None) -> Topology:
    """Nodes uniform on the unit square with a complete neighbor relation.

    Explicit ``positions`` override the random draw.
    """
    if n < 2:
        raise InvalidConfig("topology.nodes", f"need at least 2 nodes, got {n}")
    if positions is None:
        positions = np.random.default_rng(seed).random((n, 2))
    return Topology(np.asarray(positions, dtype=float), complete_neighbors(n))


@dataclass(frozen=True)
class FadingParams:
    path_loss_exponent: float = 3.0
    reference_gain: float = 1.0
    noise: float = 1e-3
    fading: bool = True

    def __post_init__(self):
        if self.path_loss_exponent < 0:
            raise InvalidConfig("channel.path_loss_exponent", "must be >= 0")
        if self.reference_gain <= 0:
            raise InvalidConfig("channel.reference_gain", "must be > 0")
        if self.noise <= 0:
            raise InvalidConfig("channel.noise", "must be > 0")


@dataclass(frozen=True)
class ChannelState:
    gains: np.ndarray  # gains[i, j]: power gain from transmitter i to receiver j
    noise: np.ndarray
    slot: int = 0


def path_gains(topology: Topology, params: FadingParams) -> np.ndarray:
    d = topology.distances()
    np.fill_diagonal(d, 1.0)
    g = params.reference_gain * d ** (-params.path_loss_exponent)
    np.fill_diagonal(g, 0.0)
    return g


def sample_channel(topology: Topology, params: FadingParams, slot: int,
                   rng: np.random.Generator, base: Optional[np.ndarray] = None) -> ChannelState:
    """Block Rayleigh fading: path loss times a unit-mean exponential per ordered pair."""
    n = topology.n
    if base is None:
        base = path_gains(topology, params)
    if params.fading:
        gains = base * rng.exponential(1.0, size=(n, n))
    else:
        gains = base.copy()
    return ChannelState(gains, np.full(n, params.noise), slot)


def sinr_rates(powers: np.ndarray, links: Sequence, channel: ChannelState) -> np.ndarray:
    """log2(1 + SINR) for each (tx, rx, ...) link.

    Every link transmitter with positive power interferes at every other
    link's receiver; gains are taken interferer -> receiver.
    """
    if len(links) == 0:
        return np.zeros(0)
    tx = np.fromiter((l[0] for l in links), dtype=np.intp, count=len(links))
    rx = np.fromiter((l[1] for l in links), dtype=np.intp, count=len(links))
    p = np.asarray(powers, dtype=float)[tx]
    received = p[:, None] * channel.gains[np.ix_(tx, rx)]
    signal = received.diagonal()
    interference = received.sum(axis=0) - signal
    return np.log2(1.0 + signal / (channel.noise[rx] + interference))


# ---------------------------------------------------------------------------
# Flows and traffic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanDelay:
    target: float

    def __post_init__(self):
        if not self.target > 0:
            raise InvalidParameter(f"mean-delay target must be > 0, got {self.target}")


@dataclass(frozen=True)
class HardDeadline:
    deadline: float
    drop_ratio: float

    def __post_init__(self):
        if not self.deadline > 0:
            raise InvalidParameter(f"deadline must be > 0, got {self.deadline}")
        if not 0 < self.drop_ratio < 1:
            raise InvalidParameter(f"drop ratio must be in (0, 1), got {self.drop_ratio}")


QosCriterion = Union[MeanDelay, HardDeadline, None]


@dataclass(frozen=True)
class FlowSpec:
    """All traffic destined to ``dest``; ``rates`` maps source node -> packets/slot."""

    dest: int
    rates: dict = field(default_factory=dict)
    qos: QosCriterion = None
    theta: float = 10.0

    def __post_init__(self):
        rates = {int(k): float(v) for k, v in dict(self.rates).items()}
        if any(v < 0 for v in rates.values()):
            raise InvalidParameter(f"flow {self.dest}: arrival rates must be >= 0")
        if rates.get(self.dest, 0.0) != 0.0:
            raise InvalidParameter(f"flow {self.dest}: destination cannot source its own flow")
        if self.qos is not None and not self.theta > 1:
            raise InvalidParameter(f"flow {self.dest}: theta must be > 1 for QoS flows")
        object.__setattr__(self, "rates", rates)

    @property
    def is_qos(self) -> bool:
        return self.qos is not None

    def scaled(self, rate: float) -> "FlowSpec":
        """Same flow with every source rate set to ``rate``."""
        return FlowSpec(self.dest, {s: rate for s in self.rates}, self.qos, self.theta)


def arrival_matrix(flows: Sequence[FlowSpec], n: int) -> np.ndarray:
    lam = np.zeros((n, len(flows)))
    for k, f in enumerate(flows):
        for src, rate in f.rates.items():
            if not 0 <= src < n:
                raise InvalidConfig("flows.sources", f"flow {f.dest}: unknown source node {src}")
            lam[src, k] = rate
    return lam


def generate_arrivals(rates: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Poisson batch sizes per (node, flow) for one slot."""
    return rng.poisson(rates)


# ---------------------------------------------------------------------------
# Queues and schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Packet:
    flow: int
    birth_slot: int


class QueueMatrix:
    """FIFO packet queues for every (node, flow) pair.

    Packets are stored as their birth slots; the flow is implied by the
    queue. ``lengths`` mirrors the sequence sizes and is what schedulers read.
    """

    def __init__(self, n: int, flow_ids: Sequence[int]):
        self.n = n
        self.flow_ids = tuple(int(c) for c in flow_ids)
        if len(set(self.flow_ids)) != len(self.flow_ids):
            raise InvalidConfig("flows", "duplicate flow destination")
        for c in self.flow_ids:
            if not 0 <= c < n:
                raise InvalidConfig("flows.dest", f"unknown destination node {c}")
        self.index = {c: k for k, c in enumerate(self.flow_ids)}
        self.lengths = np.zeros((n, len(self.flow_ids)), dtype=np.int64)
        self._births = [[deque() for _ in self.flow_ids] for _ in range(n)]

    @property
    def num_flows(self) -> int:
        return len(self.flow_ids)

    def enqueue(self, node: int, k: int, birth_slot: int, count: int = 1) -> None:
        if node == self.flow_ids[k]:
            raise ValueError("packets cannot be queued at their destination")
        self._births[node][k].extend([birth_slot] * count)
        self.lengths[node, k] += count

    def pop(self, node: int, k: int, count: int) -> list:
        q = self._births[node][k]
        out = [q.popleft() for _ in range(count)]
        self.lengths[node, k] -= count
        return out

    def push(self, node: int, k: int, births: Iterable[int]) -> None:
        births = list(births)
        self._births[node][k].extend(births)
        self.lengths[node, k] += len(births)

    def packets(self, node: int, k: int) -> list:
        return [Packet(self.flow_ids[k], b) for b in self._births[node][k]]

    def total(self) -> int:
        return int(self.lengths.sum())

    def check(self) -> None:
        for i in range(self.n):
            for k, c in enumerate(self.flow_ids):
                q = self._births[i][k]
                assert len(q) == self.lengths[i, k]
                assert i != c or not q


@dataclass(frozen=True)
class Schedule:
    """One slot's activation: links (tx, rx, flow id), per-node powers,
    per-link rates and scheduling weights. Links with weight <= 0 radiate
    but carry no packets."""

    links: tuple = ()
    powers: np.ndarray = None
    rates: np.ndarray = None
    weights: np.ndarray = None

    def __post_init__(self):
        links = tuple((int(a), int(b), int(c)) for a, b, c in self.links)
        seen = set()
        for a, b, _ in links:
            if a == b or a in seen or b in seen:
                raise ValueError(f"node reused or self-link in schedule: {links}")
            seen.update((a, b))
        m = len(links)
        rates = np.zeros(m) if self.rates is None else np.asarray(self.rates, dtype=float)
        weights = np.ones(m) if self.weights is None else np.asarray(self.weights, dtype=float)
        if rates.shape != (m,) or weights.shape != (m,):
            raise ValueError("rates and weights must align with links")
        if np.any(rates < 0):
            raise ValueError("negative link rate")
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def empty(cls, n: int) -> "Schedule":
        return cls((), np.zeros(n))

    def __len__(self):
        return len(self.links)

    def with_rates(self, channel: ChannelState, weights=None) -> "Schedule":
        return Schedule(self.links, self.powers, sinr_rates(self.powers, self.links, channel),
                        self.weights if weights is None else weights)


def transfer_capacity(rate: float, packet_size: float) -> int:
    # small slack absorbs float error such as 0.3 / 0.1 = 2.9999999999999996
    return int(math.floor(rate / packet_size + 1e-9))


@dataclass
class StepRecord:
    arrivals: np.ndarray
    mu_out: np.ndarray
    mu_in: np.ndarray
    delivered: list  # (flow index, delay) pairs


def step_queues(queues: QueueMatrix, schedule: Schedule, arrivals: np.ndarray,
                slot: int, packet_size: float = 0.1) -> StepRecord:
    """Advance the queues by one slot in place.

    Service uses backlogs at the start of the slot; packets reaching their
    destination leave the system. Arrivals are enqueued after service.
    """
    n, f = queues.lengths.shape
    mu_out = np.zeros((n, f), dtype=np.int64)
    mu_in = np.zeros((n, f), dtype=np.int64)
    delivered = []
    moves = []
    for (i, j, c), r, w in zip(schedule.links, schedule.rates, schedule.weights):
        if w <= 0:
            continue
        k = queues.index[c]
        count = min(int(queues.lengths[i, k]), transfer_capacity(r, packet_size))
        if count > 0:
            moves.append((i, j, k, queues.pop(i, k, count)))
            mu_out[i, k] += count
    for i, j, k, births in moves:
        if j == queues.flow_ids[k]:
            delivered.extend((k, slot - b) for b in births)
        else:
            queues.push(j, k, births)
            mu_in[j, k] += len(births)
    arrivals = np.asarray(arrivals, dtype=np.int64)
    for i, k in zip(*np.nonzero(arrivals)):
        queues.enqueue(int(i), int(k), slot, int(arrivals[i, k]))
    return StepRecord(arrivals, mu_out, mu_in, delivered)


def differential_backlog(qi: np.ndarray, qj: np.ndarray, flow_ids: Optional[Sequence[int]] = None):
    """max_c (q_i^c - q_j^c)^+ and the lowest-id flow attaining it."""
    diff = np.maximum(np.asarray(qi) - np.asarray(qj), 0)
    k = int(np.argmax(diff))
    c = k if flow_ids is None else flow_ids[k]
    return diff[k].item(), c
