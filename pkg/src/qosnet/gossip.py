"""Gossip-based sum estimation.

Each node draws L exponentials whose rate is its local value; after enough
pairwise min-exchanges every node holds the coordinate-wise global minima,
which are exponential with rate equal to the sum. The inverse sample mean of
the minima estimates that sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .netcore import InvalidParameter


@dataclass(frozen=True)
class GossipState:
    values: np.ndarray   # z_i per node
    samples: np.ndarray  # (N, L); +inf marks a node with z_i = 0
    rounds: int = 0

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]


def init_gossip(values, num_samples: int, rng: np.random.Generator) -> GossipState:
    z = np.asarray(values, dtype=float)
    if np.any(z < 0) or np.any(np.isnan(z)):
        raise InvalidParameter("gossip values must be nonnegative")
    if num_samples < 1:
        raise InvalidParameter(f"need at least one sample per node, got {num_samples}")
    std = rng.exponential(1.0, size=(z.size, num_samples))
    with np.errstate(divide="ignore"):
        samples = std / z[:, None]
    samples[z == 0] = np.inf
    return GossipState(z, samples, 0)


def run_gossip(state: GossipState, rounds: int, rng: np.random.Generator,
               neighbors: Optional[Sequence[Sequence[int]]] = None) -> GossipState:
    """Run ``rounds`` synchronous gossip rounds.

    Within a round nodes act in id order, each exchanging with a freshly drawn
    partner: uniform over all other nodes, or over ``neighbors[i]`` if given.
    """
    if rounds < 0:
        raise InvalidParameter("rounds must be >= 0")
    z = state.samples.copy()
    n = z.shape[0]
    if n < 2 or rounds == 0:
        return replace(state, samples=z, rounds=state.rounds + rounds)
    ids = np.arange(n)
    for _ in range(rounds):
        if neighbors is None:
            partners = rng.integers(0, n - 1, size=n)
            partners += partners >= ids
        else:
            u = rng.random(n)
            partners = [neighbors[i][int(u[i] * len(neighbors[i]))] for i in range(n)]
        for i in range(n):
            j = partners[i]
            m = np.minimum(z[i], z[j])
            z[i] = m
            z[j] = m
    return replace(state, samples=z, rounds=state.rounds + rounds)


def estimate_sum(state: GossipState, node: int) -> float:
    """Inverse sample mean of the node's minima; 0 when nothing finite is held."""
    mean = state.samples[node].mean()
    if not np.isfinite(mean) or mean <= 0:
        return 0.0
    return 1.0 / mean


def estimate_all(state: GossipState) -> np.ndarray:
    return np.array([estimate_sum(state, i) for i in range(state.n)])


def required_samples(delta: float, eps: float) -> int:
    """Samples per node for a (1 +/- delta) estimate with probability 1 - eps."""
    for name, v in (("delta", delta), ("eps", eps)):
        if not 0 < v < 0.5:
            raise InvalidParameter(f"{name} must lie in (0, 1/2), got {v}")
    return math.ceil(3.0 / delta ** 2 * math.log(4.0 / eps))


def default_rounds(n: int, factor: float = 10.0) -> int:
    return max(1, math.ceil(factor * math.log(max(n, 2))))


def exact_sum(values) -> float:
    return math.fsum(np.asarray(values, dtype=float).ravel()) if len(values) else 0.0


def gossip_sum(values, num_samples: int, rounds: int, rng: np.random.Generator,
               neighbors=None) -> np.ndarray:
    """Per-node estimates of sum(values) after ``rounds`` of gossip."""
    state = run_gossip(init_gossip(values, num_samples, rng), rounds, rng, neighbors)
    return estimate_all(state)
