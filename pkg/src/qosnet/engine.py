"""Slot loop, metrics collection and stability diagnostics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .baselines import CentralizedMaxweight, DdrpcStyle, LeeStyle, PolicyKind
from .delays import DelayTracker, delay_statistics
from .netcore import (FadingParams, FlowSpec, HardDeadline, InvalidConfig, QueueMatrix, Topology,
                      arrival_matrix, generate_arrivals, path_gains, sample_channel, step_queues)
from .scheduler import Policy, QosDistributed, SchedulerParams

log = logging.getLogger(__name__)

__all__ = ["RunParams", "Simulation", "RunResult", "Summary", "MetricsSeries", "SweepRow",
           "run_simulation", "stability_verdict", "sweep_arrival_rates", "largest_stable_rate",
           "make_policy", "delay_statistics"]

STABLE, UNSTABLE, INCONCLUSIVE = "stable", "unstable", "inconclusive"


@dataclass(frozen=True)
class RunParams:
    slots: int = 200_000
    warmup: int = 10_000
    seed: int = 0
    packet_size: float = 0.1
    stable_slope: float = 0.01
    unstable_slope: float = 0.1
    check_invariants: bool = False


def stream_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Independent substream ``index`` of a run seed (0 channel, 1 arrivals, 2 policy)."""
    return np.random.SeedSequence(seed, spawn_key=(index,))


def make_policy(kind, topology: Topology, flows: Sequence[FlowSpec], seed,
                params: SchedulerParams = SchedulerParams(), **opts) -> Policy:
    kind = PolicyKind(kind)
    if kind is PolicyKind.QOS:
        return QosDistributed(topology, flows, params, seed)
    if kind is PolicyKind.LEE:
        return LeeStyle(topology, flows, params, seed,
                        election_prob=opts.get("lee_election_prob", 0.5),
                        election=opts.get("lee_election", "fixed"))
    if kind is PolicyKind.DDRPC:
        return DdrpcStyle(topology, flows, seed, tx_prob=opts.get("ddrpc_tx_prob", 0.5),
                          p_max=params.p_max)
    return CentralizedMaxweight(topology, flows, seed, levels=opts.get("maxweight_levels", 5),
                                p_max=params.p_max, max_nodes=opts.get("maxweight_max_nodes", 6))


@dataclass
class MetricsSeries:
    """Per-slot records over the measurement period. Delay columns are
    cumulative over deliveries since the end of warmup; ``eta`` is the flag in
    force during the slot."""

    slot: np.ndarray
    chi: np.ndarray
    adopted: np.ndarray
    total_queue: np.ndarray
    flow_queue: np.ndarray
    mean_delay: np.ndarray
    violation: np.ndarray
    eta: np.ndarray
    generated: np.ndarray
    delivered: np.ndarray
    w_adopted: np.ndarray
    w_old: np.ndarray
    w_adopted_raw: np.ndarray
    w_old_raw: np.ndarray

    @classmethod
    def allocate(cls, slots: int, flows: int) -> "MetricsSeries":
        i = lambda *s: np.zeros(s, dtype=np.int64)
        f = lambda *s: np.full(s, np.nan)
        return cls(i(slots), np.zeros(slots, np.int8), np.zeros(slots, np.int8), i(slots),
                   i(slots, flows), f(slots, flows), f(slots, flows), np.zeros((slots, flows), np.int8),
                   i(slots), i(slots), f(slots), f(slots), f(slots), f(slots))

    def __len__(self):
        return len(self.slot)


@dataclass
class Summary:
    time_avg_total_queue: float
    slope: float
    verdict: str
    mean_delay: List[float]
    drop_ratio: List[float]


@dataclass
class RunResult:
    flow_ids: tuple
    policy: str
    warmup: int
    series: MetricsSeries
    summary: Summary
    generated: int = 0
    delivered: int = 0
    in_queue: int = 0


def stability_verdict(series, stable_slope: float = 0.01, unstable_slope: float = 0.1,
                      min_length: int = 2000):
    """(verdict, slope) from a least-squares fit of the last half of the series."""
    y = np.asarray(series, dtype=float)
    if y.size < min_length:
        return INCONCLUSIVE, math.nan
    tail = y[y.size // 2:]
    x = np.arange(tail.size, dtype=float)
    slope = float(np.polyfit(x, tail, 1)[0])
    if slope <= stable_slope:
        return STABLE, slope
    if slope >= unstable_slope:
        return UNSTABLE, slope
    return INCONCLUSIVE, slope


class Simulation:
    """One seeded run of one policy. ``step`` advances a single slot."""

    def __init__(self, topology: Topology, flows: Sequence[FlowSpec], policy: Policy,
                 fading: FadingParams = FadingParams(), run: RunParams = RunParams(),
                 qos_window: int = 0):
        self.topology = topology
        self.flows = sorted(flows, key=lambda f: f.dest)
        self.policy = policy
        self.fading = fading
        self.run_params = run
        self.queues = QueueMatrix(topology.n, [f.dest for f in self.flows])
        self.lam = arrival_matrix(self.flows, topology.n)
        self.rng_channel = np.random.default_rng(stream_seed(run.seed, 0))
        self.rng_arrivals = np.random.default_rng(stream_seed(run.seed, 1))
        self._base = path_gains(topology, fading)
        deadlines = [f.qos.deadline if isinstance(f.qos, HardDeadline) else None for f in self.flows]
        self.controllers = [DelayTracker(d, qos_window) for d in deadlines]
        self.reports = [DelayTracker(d) for d in deadlines]
        self.t = 0
        self.generated = 0
        self.delivered = 0

    @property
    def measuring(self) -> bool:
        return self.t >= self.run_params.warmup

    def step(self):
        t = self.t
        if t == self.run_params.warmup:
            for tr in self.controllers:
                tr.reset()
        eta = getattr(self.policy, "eta", None)
        eta = None if eta is None else eta.copy()
        channel = sample_channel(self.topology, self.fading, t, self.rng_channel, self._base)
        decision = self.policy.decide(self.queues.lengths, channel)
        arrivals = generate_arrivals(self.lam, self.rng_arrivals)
        rec = step_queues(self.queues, decision.schedule, arrivals, t, self.run_params.packet_size)
        self.generated += int(arrivals.sum())
        self.delivered += len(rec.delivered)
        for k, d in rec.delivered:
            self.controllers[k].add(d)
            if self.measuring:
                self.reports[k].add(d)
        self.policy.observe([tr.stats() for tr in self.controllers])
        if self.run_params.check_invariants:
            self._check(rec)
        self.t += 1
        return decision, rec, eta

    def _check(self, rec) -> None:
        q = self.queues
        if np.any(q.lengths < 0):
            raise AssertionError(f"negative queue at slot {self.t}")
        if self.generated != q.total() + self.delivered:
            raise AssertionError(f"packet ledger imbalance at slot {self.t}")
        for k, c in enumerate(q.flow_ids):
            if q.lengths[c, k] != 0:
                raise AssertionError(f"flow {c} queued at its destination")
        q.check()

    def run(self) -> RunResult:
        p = self.run_params
        for _ in range(p.warmup):
            self.step()
        f = len(self.flows)
        s = MetricsSeries.allocate(p.slots, f)
        for m in range(p.slots):
            decision, _, eta = self.step()
            s.slot[m] = self.t - 1
            s.chi[m] = decision.chi
            s.adopted[m] = decision.adopted
            s.flow_queue[m] = self.queues.lengths.sum(axis=0)
            s.total_queue[m] = s.flow_queue[m].sum()
            for k, tr in enumerate(self.reports):
                st = tr.stats()
                s.mean_delay[m, k] = st.mean
                s.violation[m, k] = st.violation
            if eta is not None:
                s.eta[m] = eta
            s.generated[m] = self.generated
            s.delivered[m] = self.delivered
            s.w_adopted[m] = decision.w_adopted
            s.w_old[m] = decision.w_old
            s.w_adopted_raw[m] = decision.w_adopted_raw
            s.w_old_raw[m] = decision.w_old_raw
        return RunResult(tuple(f.dest for f in self.flows), self.policy.name, p.warmup, s,
                         summarize(s, self.queues.total(), p), self.generated, self.delivered,
                         self.queues.total())


def summarize(s: MetricsSeries, final_queue: int, p: RunParams) -> Summary:
    """Summary statistics, all recomputable from the series."""
    m = len(s)
    f = s.flow_queue.shape[1]
    if m == 0:
        nan = [math.nan] * f
        return Summary(float(final_queue), math.nan, INCONCLUSIVE, nan, list(nan))
    verdict, slope = stability_verdict(s.total_queue, p.stable_slope, p.unstable_slope)
    return Summary(
        time_avg_total_queue=float(s.total_queue[m // 2:].mean()),
        slope=slope,
        verdict=verdict,
        mean_delay=[float(x) for x in s.mean_delay[-1]],
        drop_ratio=[float(x) for x in s.violation[-1]],
    )


def build_simulation(cfg, policy: Optional[str] = None, seed: Optional[int] = None,
                     exact: Optional[bool] = None) -> Simulation:
    """Simulation from an ``ExperimentConfig`` with optional overrides."""
    run = cfg.run.model_dump()
    if seed is not None:
        run["seed"] = seed
    run = RunParams(**run)
    sched = cfg.scheduler.params()
    if exact is not None:
        sched = SchedulerParams(**{**cfg.scheduler.model_dump(), "exact": exact})
    topology = cfg.build_topology()
    flows = cfg.flow_specs()
    kind = policy if policy is not None else cfg.policy.kind
    pol = make_policy(kind, topology, flows, stream_seed(run.seed, 2), sched,
                      **cfg.policy.model_dump(exclude={"kind"}))
    return Simulation(topology, flows, pol, cfg.fading(), run, sched.qos_window)


def run_simulation(cfg, **overrides) -> RunResult:
    result = build_simulation(cfg, **overrides).run()
    log.info("run policy=%s slots=%d verdict=%s avg_queue=%.1f", result.policy,
             len(result.series), result.summary.verdict, result.summary.time_avg_total_queue)
    return result


@dataclass(frozen=True)
class SweepRow:
    rate: float
    policy: str
    topology_seed: int
    seed: int
    time_avg_total_queue: float
    slope: float
    verdict: str


def sweep_arrival_rates(cfg, rates: Sequence[float], policies=None, seeds=None,
                        topology_seeds=None, exact: Optional[bool] = None) -> List[SweepRow]:
    """One run per (topology seed, policy, seed, rate), every source rate set to the grid value."""
    if len(rates) == 0:
        raise InvalidConfig("sweep.rates", "rate grid is empty")
    policies = [PolicyKind(p) for p in (policies or cfg.sweep.policies)]
    seeds = list(seeds or cfg.sweep.seeds or [cfg.run.seed])
    topology_seeds = list(topology_seeds or cfg.sweep.topology_seeds or [cfg.topology.seed])
    rows = []
    for tseed in topology_seeds:
        base = cfg.replace("topology", seed=tseed)
        for pol in policies:
            for seed in seeds:
                for rate in sorted(rates):
                    res = run_simulation(base.with_rate(rate), policy=pol.value, seed=seed, exact=exact)
                    rows.append(SweepRow(rate, pol.value, tseed, seed,
                                         res.summary.time_avg_total_queue, res.summary.slope,
                                         res.summary.verdict))
    return rows


def largest_stable_rate(rows: Sequence[SweepRow], policy: str, topology_seed=None, seed=None) -> float:
    """Largest stable rate below the first unstable verdict (0 if none)."""
    sel = sorted((r for r in rows if r.policy == policy
                  and (topology_seed is None or r.topology_seed == topology_seed)
                  and (seed is None or r.seed == seed)), key=lambda r: r.rate)
    best = 0.0
    for r in sel:
        if r.verdict == UNSTABLE:
            break
        if r.verdict == STABLE:
            best = r.rate
    return best
