"""Closed-form stability guarantees and Monte Carlo checks of them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .netcore import InvalidParameter, Topology
from .scheduler import elect_roles, pair_links

__all__ = ["beta1_bound", "beta2_bound", "rho_bound", "selection_floor", "alpha3_limit",
           "link_selection_frequencies", "CompareCheck", "validate_lemma4_empirically",
           "bounds_row"]


def _open_unit(name: str, x: float) -> None:
    if not 0 < x < 1:
        raise InvalidParameter(f"{name} must lie in (0, 1), got {x}")


def alpha3_limit(n: int, queue_cap: float) -> float:
    """Upper end of the admissible alpha3 range, 1 / (2 N B)."""
    return 1.0 / (2 * n * queue_cap)


def selection_floor(n: int, queue_cap: float, alpha3: float) -> float:
    """Per-link selection probability floor 1 / (2 (1 - alpha3^2) N^3 B^2)."""
    return 1.0 / (2 * (1 - alpha3 ** 2) * n ** 3 * queue_cap ** 2)


def beta1_bound(n: int, queue_cap: float, alpha3: float, beta3: float, eps: float) -> float:
    """Probability floor that the whole pick step lands near the optimum.

    ``eps`` is the power-space radius (not the gossip epsilon).
    """
    if n < 2:
        raise InvalidParameter(f"need at least 2 nodes, got {n}")
    if queue_cap <= 0:
        raise InvalidParameter(f"queue cap must be positive, got {queue_cap}")
    if not 0 < alpha3 < alpha3_limit(n, queue_cap):
        raise InvalidParameter(
            f"alpha3 must lie in (0, {alpha3_limit(n, queue_cap):.6g}), got {alpha3}")
    _open_unit("beta3", beta3)
    if eps <= 0:
        raise InvalidParameter(f"power radius must be positive, got {eps}")
    per_node = eps / (2 * (1 - alpha3 ** 2) * n ** 3.5 * queue_cap ** 2)
    return (1 - beta3) * per_node ** n


def beta2_bound(beta: float, sigma: float) -> float:
    """Per-slot probability that the compare step may lose ground."""
    for name, x in (("beta", beta), ("sigma", sigma)):
        if not 0 <= x <= 1:
            raise InvalidParameter(f"{name} must lie in [0, 1], got {x}")
    return beta + sigma * (1 - beta)


def rho_bound(alpha1: float, alpha2: float, beta1: float, beta2: float) -> float:
    """Guaranteed-stable scaling of the capacity region. Values <= 0 mean
    the analysis gives no guarantee; they are returned as is."""
    if beta1 <= 0:
        raise InvalidParameter(f"beta1 must be positive, got {beta1}")
    if beta2 < 0:
        raise InvalidParameter(f"beta2 must be nonnegative, got {beta2}")
    return 1 - (alpha1 + (1 - alpha1) * alpha2) - 2 * math.sqrt(beta2 / beta1)


def bounds_row(row) -> dict:
    """Evaluate one ``BoundsRow``: fills in beta1/beta2 when derived, then rho."""
    b1 = row.beta1
    if b1 is None:
        b1 = beta1_bound(row.nodes, row.queue_cap, row.alpha3, row.beta3, row.power_radius)
    b2 = row.beta2 if row.beta2 is not None else beta2_bound(row.beta, row.sigma)
    rho = rho_bound(row.alpha1, row.alpha2, b1, b2)
    return {"alpha1": row.alpha1, "alpha2": row.alpha2, "beta1": b1, "beta2": b2, "rho": rho,
            "guarantee": rho > 0}


def link_selection_frequencies(topology: Topology, lengths: np.ndarray, queue_cap: float,
                               slots: int, seed=None) -> Dict[Tuple[int, int], Tuple[float, float]]:
    """Empirical frequency (and its standard error) with which each ordered
    link is produced by election plus pairing, for frozen queues and exact U*.

    Queue lengths are taken unweighted.
    """
    q = np.asarray(lengths).sum(axis=1)
    u = np.minimum(q, queue_cap).astype(float)
    u_star = float(u.sum())
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng_elect, rng_pair = (np.random.default_rng(s) for s in ss.spawn(2))
    n = topology.n
    counts = np.zeros((n, n), dtype=np.int64)
    for _ in range(slots):
        tx = elect_roles(u, u_star, rng_elect)
        for i, j in pair_links(tx, topology.neighbors, rng_pair):
            counts[i, j] += 1
    out = {}
    for i in range(n):
        for j in topology.neighbors[i]:
            p = counts[i, j] / slots
            out[(i, j)] = (p, math.sqrt(p * (1 - p) / slots))
    return out


@dataclass(frozen=True)
class CompareCheck:
    slots: int
    failures: int
    frequency: float
    stderr: float
    bound: float

    @property
    def within_bound(self) -> bool:
        return self.frequency <= self.bound + 3 * self.stderr


def validate_lemma4_empirically(config, slots: Optional[int] = None, seed: Optional[int] = None,
                                exact: Optional[bool] = None) -> CompareCheck:
    """Run the scheduler and count slots where the adopted schedule's
    backlog-weighted rate falls below (1 - alpha2) times the previous one.

    The bound is beta2 with the gossip failure probability as beta.
    """
    from .engine import build_simulation

    if slots is not None:
        config = config.replace("run", slots=slots, warmup=0)
    sim = build_simulation(config, policy="qos", seed=seed, exact=exact)
    params = sim.policy.params
    s = sim.run().series
    valid = ~np.isnan(s.w_old_raw)
    margin = s.w_adopted_raw[valid] - (1 - params.alpha2) * s.w_old_raw[valid]
    m = int(valid.sum())
    failures = int((margin < 0).sum())
    freq = failures / m if m else math.nan
    stderr = math.sqrt(freq * (1 - freq) / m) if m else math.nan
    beta = 0.0 if params.exact else params.epsilon
    return CompareCheck(m, failures, freq, stderr, beta2_bound(beta, params.sigma))
