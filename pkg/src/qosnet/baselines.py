"""Comparison policies.

``LeeStyle`` is the pick-and-compare pipeline without queue-dependent
election and without QoS priority. ``DdrpcStyle`` is a memoryless
full-power backpressure stand-in. ``CentralizedMaxweight`` enumerates every
matching and a discretized power grid; it is an oracle for small networks.
"""

from __future__ import annotations

import enum
import itertools
import math
from typing import Optional, Sequence

import numpy as np

from .netcore import ChannelState, FlowSpec, InvalidParameter, Schedule, Topology, sinr_rates
from .scheduler import Policy, QosDistributed, SchedulerParams, SlotDecision, raw_weights


class PolicyKind(str, enum.Enum):
    QOS = "qos"
    MAXWEIGHT = "maxweight"
    LEE = "lee"
    DDRPC = "ddrpc"


class LeeStyle(QosDistributed):
    name = "lee"
    uses_qos = False

    def __init__(self, topology: Topology, flows: Sequence[FlowSpec],
                 params: SchedulerParams = SchedulerParams(), seed=None,
                 election_prob: float = 0.5, election: str = "fixed"):
        super().__init__(topology, flows, params, seed)
        if election not in ("fixed", "queue"):
            raise InvalidParameter(f"unknown election rule {election!r}")
        if not 0 <= election_prob <= 1:
            raise InvalidParameter(f"election probability must lie in [0, 1], got {election_prob}")
        self.election = election
        self.election_prob = election_prob
        self.qos_mask = np.zeros(len(self.flows), dtype=bool)

    def _draw_chi(self) -> int:
        return 0

    def _boosted(self) -> np.ndarray:
        return self.qos_mask

    def _elect(self, lengths, boosted):
        if self.election == "queue":
            return super()._elect(lengths, boosted)
        return self.rng_elect.random(self.n) < self.election_prob, math.nan

    def observe(self, stats) -> None:
        Policy.observe(self, stats)


def backlog_matrix(lengths: np.ndarray) -> np.ndarray:
    """delta[i, j] = max_c (q_i^c - q_j^c)^+."""
    q = np.asarray(lengths)
    return np.maximum(q[:, None, :] - q[None, :, :], 0).max(axis=-1).astype(float)


class DdrpcStyle(Policy):
    name = "ddrpc"

    def __init__(self, topology: Topology, flows: Sequence[FlowSpec], seed=None,
                 tx_prob: float = 0.5, p_max: float = 1.0):
        super().__init__(topology, flows, seed)
        if not 0 <= tx_prob <= 1:
            raise InvalidParameter(f"tx probability must lie in [0, 1], got {tx_prob}")
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self.rng = np.random.default_rng(ss)
        self.tx_prob = tx_prob
        self.p_max = p_max

    def decide(self, lengths: np.ndarray, channel: ChannelState) -> SlotDecision:
        n = self.n
        draw = self.rng.random(n)
        tie = self.rng.random(n)
        tx = (lengths.sum(axis=1) > 0) & (draw < self.tx_prob)
        delta = backlog_matrix(lengths)
        requests = {}
        for i in np.flatnonzero(tx):
            nb = self.topology.neighbors[i]
            j = nb[int(np.argmax(delta[i, list(nb)]))]
            if not tx[j]:
                requests.setdefault(j, []).append(int(i))
        pairs = sorted((reqs[int(tie[j] * len(reqs))], j) for j, reqs in requests.items())
        powers = np.zeros(n)
        links, weights = [], []
        for i, j in pairs:
            k = int(np.argmax(np.maximum(lengths[i] - lengths[j], 0)))
            links.append((i, j, self.flow_ids[k]))
            weights.append(delta[i, j])
            powers[i] = self.p_max
        schedule = Schedule(tuple(links), powers, sinr_rates(powers, links, channel), weights)
        w = float((schedule.weights * schedule.rates).sum())
        return SlotDecision(slot=self.slot, chi=0, transmitters=tx, candidate=schedule, previous=None,
                            schedule=schedule, adopted=True, w_adopted=w, w_adopted_raw=w)


# ---------------------------------------------------------------------------
# Centralized oracle
# ---------------------------------------------------------------------------


def enumerate_matchings(n: int, neighbors: Optional[Sequence[Sequence[int]]] = None) -> list:
    """All directed matchings (each node in at most one link, one role),
    as sorted tuples of (tx, rx), in lexicographic order."""
    allowed = None if neighbors is None else [set(nb) for nb in neighbors]
    out = []

    def extend(free: tuple, acc: list):
        if not free:
            out.append(tuple(sorted(acc)))
            return
        v, rest = free[0], free[1:]
        extend(rest, acc)
        for u in rest:
            if allowed is not None and u not in allowed[v]:
                continue
            remaining = tuple(x for x in rest if x != u)
            extend(remaining, acc + [(v, u)])
            extend(remaining, acc + [(u, v)])

    extend(tuple(range(n)), [])
    return sorted(out)


def power_levels(levels: int, p_max: float = 1.0) -> np.ndarray:
    if levels < 2:
        raise InvalidParameter(f"need at least 2 power levels, got {levels}")
    return np.linspace(0.0, p_max, levels)


def project_powers(powers: np.ndarray, levels: int, p_max: float = 1.0) -> np.ndarray:
    """Round each power to the nearest grid level."""
    idx = np.rint(np.clip(np.asarray(powers, dtype=float), 0.0, p_max) / p_max * (levels - 1))
    return power_levels(levels, p_max)[idx.astype(int)]


def schedule_objective(links: Sequence, powers: np.ndarray, lengths: np.ndarray,
                       channel: ChannelState) -> float:
    """Sum of differential backlog times SINR rate over the links."""
    if not links:
        return 0.0
    return float((raw_weights(links, lengths) * sinr_rates(powers, links, channel)).sum())


def centralized_maxweight(lengths: np.ndarray, channel: ChannelState, levels: int = 5,
                          p_max: float = 1.0, flow_ids: Optional[Sequence[int]] = None,
                          neighbors=None, max_nodes: int = 6):
    """Exhaustive maxweight over matchings and a ``levels``-point power grid.

    Returns (schedule, objective). Zero-power links are dropped from the
    returned schedule; ties keep the lexicographically first encoding.
    """
    lengths = np.asarray(lengths)
    n = lengths.shape[0]
    if n > max_nodes:
        raise InvalidParameter(f"centralized maxweight is limited to {max_nodes} nodes, got {n}")
    if flow_ids is None:
        flow_ids = list(range(lengths.shape[1]))
    grid = power_levels(levels, p_max)
    delta = backlog_matrix(lengths)
    g = channel.gains
    best, best_links, best_p = 0.0, (), ()
    for links in enumerate_matchings(n, neighbors):
        if not links:
            continue
        tx = np.array([a for a, _ in links])
        rx = np.array([b for _, b in links])
        w = delta[tx, rx]
        if not np.any(w > 0):
            continue
        combos = np.array(list(itertools.product(range(levels), repeat=len(links))))
        p = grid[combos]                                   # (C, m)
        received = p[:, :, None] * g[np.ix_(tx, rx)][None]  # (C, m, m)
        signal = np.diagonal(received, axis1=1, axis2=2)
        interference = received.sum(axis=1) - signal
        rates = np.log2(1.0 + signal / (channel.noise[rx][None] + interference))
        obj = rates @ w
        c = int(np.argmax(obj))
        if obj[c] > best:
            best, best_links, best_p = float(obj[c]), links, tuple(p[c])
    powers = np.zeros(n)
    chosen = []
    for (a, b), pw in zip(best_links, best_p):
        if pw > 0:
            k = int(np.argmax(np.maximum(lengths[a] - lengths[b], 0)))
            chosen.append((a, b, flow_ids[k]))
            powers[a] = pw
    schedule = Schedule(tuple(chosen), powers, sinr_rates(powers, chosen, channel),
                        raw_weights(chosen, lengths))
    return schedule, best


class CentralizedMaxweight(Policy):
    name = "maxweight"

    def __init__(self, topology: Topology, flows: Sequence[FlowSpec], seed=None,
                 levels: int = 5, p_max: float = 1.0, max_nodes: int = 6):
        super().__init__(topology, flows, seed)
        if topology.n > max_nodes:
            raise InvalidParameter(f"centralized maxweight is limited to {max_nodes} nodes, got {topology.n}")
        self.levels = levels
        self.p_max = p_max
        self.max_nodes = max_nodes

    def decide(self, lengths: np.ndarray, channel: ChannelState) -> SlotDecision:
        nb = None if self.topology.is_complete() else self.topology.neighbors
        schedule, obj = centralized_maxweight(lengths, channel, self.levels, self.p_max,
                                              self.flow_ids, nb, self.max_nodes)
        tx = np.zeros(self.n, dtype=bool)
        tx[[l[0] for l in schedule.links]] = True
        return SlotDecision(slot=self.slot, chi=0, transmitters=tx, candidate=schedule, previous=None,
                            schedule=schedule, adopted=True, w_adopted=obj, w_adopted_raw=obj)
