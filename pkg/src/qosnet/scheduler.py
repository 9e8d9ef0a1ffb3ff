"""Distributed joint power control / routing / scheduling with dynamic QoS
priority.

Every slot the network flips a global coin chi, elects transmitters with
probability proportional to their (QoS-weighted, capped) backlog, pairs each
transmitter with a random neighbor, draws random powers, and then keeps the
new candidate schedule only if its weighted rate sum beats (1 - alpha2) times
the previous schedule's. Sums needed network-wide are computed by gossip, or
exactly when ``exact`` is set.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import gossip
from .delays import DelayStats
from .netcore import (ChannelState, FlowSpec, HardDeadline, InvalidConfig, MeanDelay,
                      Schedule, Topology, sinr_rates)


@dataclass(frozen=True)
class SchedulerParams:
    sigma: float = 0.999
    queue_cap: float = 1e5
    alpha2: float = 0.1
    exact: bool = False
    delta: float = 0.2
    epsilon: float = 0.1
    samples: Optional[int] = None
    rounds: Optional[int] = None
    rounds_factor: float = 10.0
    p_max: float = 1.0
    eta_lag: int = 0
    qos_window: int = 0

    def __post_init__(self):
        checks = [
            ("sigma", 0 <= self.sigma <= 1, "must lie in [0, 1]"),
            ("queue_cap", self.queue_cap > 0, "must be > 0"),
            ("alpha2", 0 < self.alpha2 < 1, "must lie in (0, 1)"),
            ("delta", 0 < self.delta < 0.5, "must lie in (0, 1/2)"),
            ("epsilon", 0 < self.epsilon < 0.5, "must lie in (0, 1/2)"),
            ("samples", self.samples is None or self.samples >= 1, "must be >= 1"),
            ("rounds", self.rounds is None or self.rounds >= 0, "must be >= 0"),
            ("rounds_factor", self.rounds_factor > 0, "must be > 0"),
            ("p_max", self.p_max > 0, "must be > 0"),
            ("eta_lag", self.eta_lag >= 0, "must be >= 0"),
            ("qos_window", self.qos_window >= 0, "must be >= 0"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise InvalidConfig(f"scheduler.{key}", f"{msg}, got {getattr(self, key)!r}")

    def gossip_samples(self) -> int:
        return self.samples if self.samples is not None else gossip.required_samples(self.delta, self.epsilon)

    def gossip_rounds(self, n: int) -> int:
        return self.rounds if self.rounds is not None else gossip.default_rounds(n, self.rounds_factor)


# ---------------------------------------------------------------------------
# Priority weights
# ---------------------------------------------------------------------------


def priority_weight(x: float, is_qos: bool, eta: int = 0, theta: float = 10.0) -> float:
    """h(x): theta*x^2 for a QoS flow whose criterion is violated, else x."""
    if is_qos and eta:
        return theta * x * x
    return x


def weigh(lengths: np.ndarray, boosted: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Vectorized h over a (..., F) array; ``boosted`` marks QoS flows with eta = 1."""
    q = np.asarray(lengths, dtype=float)
    return np.where(boosted, theta * q * q, q)


def virtual_queue(row, boosted, theta) -> float:
    return float(weigh(row, boosted, theta).sum())


def elect_roles(u: np.ndarray, u_star, rng: np.random.Generator) -> np.ndarray:
    """Transmitter mask: node i transmits with probability min(u_i / U*, 1).

    ``u_star`` may be a scalar or each node's own estimate.
    """
    u = np.asarray(u, dtype=float)
    u_star = np.broadcast_to(np.asarray(u_star, dtype=float), u.shape)
    phi = rng.random(u.size)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        prob = np.where(u_star > 0, np.minimum(u / u_star, 1.0), 0.0)
    prob[u <= 0] = 0.0
    return phi < prob


def pair_links(transmitters: np.ndarray, neighbors: Sequence[Sequence[int]],
               rng: np.random.Generator) -> list:
    """Request-to-pair: each transmitter asks one uniform neighbor; a receiver
    with several requests accepts one uniformly. Returns sorted (tx, rx) pairs."""
    n = len(transmitters)
    pick = rng.random(n)
    tie = rng.random(n)
    requests = {}
    for i in np.flatnonzero(transmitters):
        nb = neighbors[i]
        j = nb[int(pick[i] * len(nb))]
        if not transmitters[j]:
            requests.setdefault(j, []).append(int(i))
    pairs = [(reqs[int(tie[j] * len(reqs))], j) for j, reqs in requests.items()]
    return sorted(pairs)


def select_flow(qi: np.ndarray, qj: np.ndarray, chi: int, boosted=None, theta=None):
    """Flow index and weight for link (i, j): h-weighted differential when
    chi = 1, raw differential otherwise. Ties go to the lowest index."""
    if chi and boosted is not None:
        diff = weigh(qi, boosted, theta) - weigh(qj, boosted, theta)
    else:
        diff = np.asarray(qi, dtype=float) - np.asarray(qj, dtype=float)
    diff = np.maximum(diff, 0.0)
    k = int(np.argmax(diff))
    return k, float(diff[k])


# ---------------------------------------------------------------------------
# QoS flags
# ---------------------------------------------------------------------------


def update_qos_flags(stats: Sequence[DelayStats], flows: Sequence[FlowSpec]) -> np.ndarray:
    """eta = 1 for QoS flows whose empirical criterion is currently violated."""
    eta = np.zeros(len(flows), dtype=np.int8)
    for k, (s, f) in enumerate(zip(stats, flows)):
        if s.count == 0:
            continue
        if isinstance(f.qos, MeanDelay):
            eta[k] = s.mean > f.qos.target
        elif isinstance(f.qos, HardDeadline):
            eta[k] = s.violation > f.qos.drop_ratio
    return eta


# ---------------------------------------------------------------------------
# Slot decisions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Comparison:
    metric: float            # M = W_new - (1 - alpha2) W_old
    w_new: float
    w_old: float
    contributions: np.ndarray  # per node, attributed to link transmitters


def weighted_rate(schedule: Schedule) -> float:
    return float((schedule.weights * schedule.rates).sum())


def comparison_metric(candidate: Schedule, previous: Schedule, alpha2: float, n: int) -> Comparison:
    """Both schedules must already carry current-channel rates and current-queue weights."""
    contrib = np.zeros(n)
    new_terms = candidate.weights * candidate.rates
    old_terms = previous.weights * previous.rates
    for (i, _, _), v in zip(candidate.links, new_terms):
        contrib[i] += v
    for (i, _, _), v in zip(previous.links, old_terms):
        contrib[i] -= (1 - alpha2) * v
    w_new = float(new_terms.sum())
    w_old = float(old_terms.sum())
    return Comparison(w_new - (1 - alpha2) * w_old, w_new, w_old, contrib)


def adopt_schedule(m_tilde: float, candidate: Schedule, previous: Optional[Schedule]):
    """(schedule, adopted flag): the candidate iff there is no previous schedule or m_tilde >= 0."""
    if previous is None or m_tilde >= 0:
        return candidate, True
    return previous, False


@dataclass(frozen=True)
class SlotDecision:
    slot: int
    chi: int
    transmitters: np.ndarray
    candidate: Schedule
    previous: Optional[Schedule]
    schedule: Schedule
    adopted: bool
    metric: float = math.nan
    metric_estimate: float = math.nan
    u_star: float = math.nan
    w_adopted: float = math.nan
    w_old: float = math.nan
    # same quantities under raw differential-backlog weights
    w_adopted_raw: float = math.nan
    w_old_raw: float = math.nan


def raw_weights(links, lengths: np.ndarray) -> np.ndarray:
    """Differential backlog max_c (q_i^c - q_j^c)^+ of each link."""
    if not links:
        return np.zeros(0)
    tx = [l[0] for l in links]
    rx = [l[1] for l in links]
    return np.maximum(lengths[tx] - lengths[rx], 0).max(axis=1).astype(float)


class Policy:
    """Base class for per-slot scheduling policies."""

    name = "policy"
    uses_qos = False

    def __init__(self, topology: Topology, flows: Sequence[FlowSpec], seed=None):
        self.topology = topology
        self.flows = list(flows)
        self.flow_ids = [f.dest for f in self.flows]
        self.n = topology.n
        self.slot = 0

    def decide(self, lengths: np.ndarray, channel: ChannelState) -> SlotDecision:
        raise NotImplementedError

    def observe(self, stats: Sequence[DelayStats]) -> None:
        """End-of-slot hook with fresh per-flow delay statistics."""
        self.slot += 1


class QosDistributed(Policy):
    """The distributed QoS pick-and-compare scheduler."""

    name = "qos"
    uses_qos = True

    def __init__(self, topology: Topology, flows: Sequence[FlowSpec],
                 params: SchedulerParams = SchedulerParams(), seed=None):
        super().__init__(topology, flows, seed)
        self.params = params
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        streams = [np.random.default_rng(s) for s in ss.spawn(5)]
        self.rng_chi, self.rng_elect, self.rng_power, self.rng_pair, self.rng_gossip = streams
        self.qos_mask = np.array([f.is_qos for f in self.flows], dtype=bool)
        self.theta = np.array([f.theta for f in self.flows], dtype=float)
        self.eta = np.zeros(len(self.flows), dtype=np.int8)
        self._pending = deque()
        self.previous: Optional[Schedule] = None
        self._gossip_neighbors = None if topology.is_complete() else topology.neighbors
        self._samples = params.gossip_samples()
        self._rounds = params.gossip_rounds(self.n)

    # hooks the baselines override
    def _draw_chi(self) -> int:
        return int(self.rng_chi.random() < self.params.sigma)

    def _boosted(self) -> np.ndarray:
        return self.qos_mask & (self.eta == 1)

    def _elect(self, lengths: np.ndarray, boosted: np.ndarray):
        q = weigh(lengths, boosted, self.theta).sum(axis=1)
        u = np.minimum(q, self.params.queue_cap)
        u_star = self._network_sum(u)
        return elect_roles(u, u_star, self.rng_elect), u_star

    def _network_sum(self, values: np.ndarray):
        """Exact sum, or each node's gossip estimate of it."""
        if self.params.exact:
            return gossip.exact_sum(values)
        return gossip.gossip_sum(values, self._samples, self._rounds, self.rng_gossip,
                                 self._gossip_neighbors)

    def _weights(self, pairs, lengths, chi, boosted):
        flows, weights = [], []
        for i, j in pairs:
            k, w = select_flow(lengths[i], lengths[j], chi, boosted, self.theta)
            flows.append(self.flow_ids[k])
            weights.append(w)
        return flows, np.array(weights, dtype=float)

    def _build(self, pairs, powers, lengths, chi, boosted, channel) -> Schedule:
        flows, weights = self._weights(pairs, lengths, chi, boosted)
        links = tuple((i, j, c) for (i, j), c in zip(pairs, flows))
        return Schedule(links, powers, sinr_rates(powers, links, channel), weights)

    def decide(self, lengths: np.ndarray, channel: ChannelState) -> SlotDecision:
        n = self.n
        chi = self._draw_chi()
        boosted = self._boosted()
        tx, u_star = self._elect(lengths, boosted)
        drawn = self.rng_power.uniform(0.0, self.params.p_max, n)
        pairs = pair_links(tx, self.topology.neighbors, self.rng_pair)
        powers = np.zeros(n)
        for i, _ in pairs:
            powers[i] = drawn[i]
        candidate = self._build(pairs, powers, lengths, chi, boosted, channel)

        previous = None
        if self.previous is not None:
            old_pairs = [(i, j) for i, j, _ in self.previous.links]
            previous = self._build(old_pairs, self.previous.powers, lengths, chi, boosted, channel)
            cmp = comparison_metric(candidate, previous, self.params.alpha2, n)
            if self.params.exact:
                m_tilde = cmp.metric
            else:
                m_tilde = self._signed_estimate(cmp.contributions)
        else:
            cmp = comparison_metric(candidate, Schedule.empty(n), self.params.alpha2, n)
            m_tilde = cmp.metric
        schedule, adopted = adopt_schedule(m_tilde, candidate, previous)
        self.previous = schedule

        w_old_raw = math.nan
        if previous is not None:
            w_old_raw = float((raw_weights(previous.links, lengths) * previous.rates).sum())
        w_adopted_raw = float((raw_weights(schedule.links, lengths) * schedule.rates).sum())
        return SlotDecision(
            slot=self.slot, chi=chi, transmitters=tx, candidate=candidate, previous=previous,
            schedule=schedule, adopted=adopted, metric=cmp.metric, metric_estimate=m_tilde,
            u_star=float(np.mean(u_star)), w_adopted=weighted_rate(schedule),
            w_old=cmp.w_old if previous is not None else math.nan,
            w_adopted_raw=w_adopted_raw, w_old_raw=w_old_raw,
        )

    def _signed_estimate(self, contributions: np.ndarray) -> float:
        # exponential rates must be nonnegative: gossip the positive and
        # negative parts separately; the coordinating node (0) reads the result
        pos = gossip.gossip_sum(np.maximum(contributions, 0.0), self._samples, self._rounds,
                                self.rng_gossip, self._gossip_neighbors)
        neg = gossip.gossip_sum(np.maximum(-contributions, 0.0), self._samples, self._rounds,
                                self.rng_gossip, self._gossip_neighbors)
        return float(pos[0] - neg[0])

    def observe(self, stats: Sequence[DelayStats]) -> None:
        fresh = update_qos_flags(stats, self.flows)
        self._pending.append(fresh)
        if len(self._pending) > self.params.eta_lag:
            self.eta = self._pending.popleft()
        super().observe(stats)

