"""Command line entry points: ``qosnet run | sweep | bounds``.

Outputs are CSV files in the output directory:

run     <out>/run_slots.csv    slot, chi, adopted, total_queue, then for each
                               flow c (by destination): q_c, mean_delay_c,
                               violation_c, eta_c
        <out>/run_summary.csv  one row of run-level statistics
sweep   <out>/sweep.csv        rate, policy, topology_seed, seed,
                               time_avg_total_queue, slope, verdict
bounds  <out>/bounds.csv       alpha1, alpha2, beta1, beta2, rho, guarantee
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .baselines import PolicyKind
from .bounds import bounds_row
from .config import BoundsRow, ExperimentConfig, load_config
from .engine import RunResult, largest_stable_rate, run_simulation, sweep_arrival_rates
from .netcore import QosnetError

log = logging.getLogger("qosnet")

SWEEP_COLUMNS = ["rate", "policy", "topology_seed", "seed", "time_avg_total_queue", "slope", "verdict"]
BOUNDS_COLUMNS = ["alpha1", "alpha2", "beta1", "beta2", "rho", "guarantee"]

# shown when neither the config nor the command line supplies rows
DEFAULT_BOUNDS = [
    BoundsRow(alpha1=0.1, alpha2=0.1, beta1=0.25, beta2=0.0025),
    BoundsRow(alpha1=0.1, alpha2=0.1, nodes=2, queue_cap=1, alpha3=0.2, beta3=0.5,
              power_radius=1.0, beta=0.0, sigma=0.0),
    BoundsRow(alpha1=0.1, alpha2=0.1, nodes=10, queue_cap=1e5, alpha3=2.5e-7, beta3=0.1,
              power_radius=1.0, beta=0.1, sigma=0.999),
]


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise QosnetError(f"cannot write {path}: {exc.strerror or exc}") from exc
    log.info("wrote %s", path)


def slot_columns(flow_ids: Sequence[int]) -> List[str]:
    cols = ["slot", "chi", "adopted", "total_queue"]
    for c in flow_ids:
        cols += [f"q_{c}", f"mean_delay_{c}", f"violation_{c}", f"eta_{c}"]
    return cols


def slot_rows(result: RunResult):
    s = result.series
    for m in range(len(s)):
        row = [int(s.slot[m]), int(s.chi[m]), int(s.adopted[m]), int(s.total_queue[m])]
        for k in range(len(result.flow_ids)):
            row += [int(s.flow_queue[m, k]), float(s.mean_delay[m, k]), float(s.violation[m, k]),
                    int(s.eta[m, k])]
        yield row


def summary_columns(flow_ids: Sequence[int]) -> List[str]:
    cols = ["policy", "slots", "warmup", "time_avg_total_queue", "slope", "verdict",
            "generated", "delivered"]
    for c in flow_ids:
        cols += [f"mean_delay_{c}", f"violation_{c}"]
    return cols


def summary_row(result: RunResult) -> list:
    s, sm = result.series, result.summary
    generated = int(s.generated[-1]) if len(s) else result.generated
    delivered = int(s.delivered[-1]) if len(s) else result.delivered
    row = [result.policy, len(s), result.warmup, sm.time_avg_total_queue, sm.slope, sm.verdict,
           generated, delivered]
    for md, v in zip(sm.mean_delay, sm.drop_ratio):
        row += [md, v]
    return row


def _exact(args) -> Optional[bool]:
    return True if args.exact_gossip else None


def cmd_run(cfg: ExperimentConfig, args) -> int:
    result = run_simulation(cfg, policy=args.policy, seed=args.seed, exact=_exact(args))
    out = Path(args.out or cfg.output.dir)
    _write_csv(out / "run_slots.csv", slot_columns(result.flow_ids), slot_rows(result))
    _write_csv(out / "run_summary.csv", summary_columns(result.flow_ids), [summary_row(result)])
    return 0


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    rates = args.rates if args.rates is not None else cfg.sweep.rates
    seeds = args.seeds if args.seeds is not None else ([args.seed] if args.seed is not None else None)
    policies = [args.policy] if args.policy else None
    rows = sweep_arrival_rates(cfg, rates, policies=policies, seeds=seeds,
                               topology_seeds=args.topology_seeds, exact=_exact(args))
    rows = sorted(rows, key=lambda r: (r.topology_seed, r.policy, r.seed, r.rate))
    out = Path(args.out or cfg.output.dir)
    _write_csv(out / "sweep.csv", SWEEP_COLUMNS,
               ([r.rate, r.policy, r.topology_seed, r.seed, r.time_avg_total_queue, r.slope, r.verdict]
                for r in rows))
    for key in sorted({(r.topology_seed, r.policy) for r in rows}):
        log.info("topology_seed=%d policy=%s largest_stable_rate=%g", key[0], key[1],
                 largest_stable_rate(rows, key[1], key[0]))
    return 0


def cmd_bounds(cfg: Optional[ExperimentConfig], args) -> int:
    rows = list(cfg.bounds.rows) if cfg is not None and cfg.bounds.rows else DEFAULT_BOUNDS
    table = [bounds_row(r) for r in rows]
    values = [[t[c] for c in BOUNDS_COLUMNS] for t in table]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(BOUNDS_COLUMNS)
    for v in values:
        w.writerow([_fmt(x) for x in v])
    if args.out or cfg is not None:
        _write_csv(Path(args.out or cfg.output.dir) / "bounds.csv", BOUNDS_COLUMNS, values)
    return 0


def _int_list(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qosnet", description="SINR multihop QoS scheduling simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="TOML experiment file")
        sp.add_argument("--out", help="output directory (default from config)")

    run = sub.add_parser("run", help="simulate one seeded run")
    common(run)
    run.add_argument("--seed", type=int)
    run.add_argument("--policy", choices=[k.value for k in PolicyKind])
    run.add_argument("--exact-gossip", action="store_true", help="use exact network sums")

    sweep = sub.add_parser("sweep", help="stability sweep over uniform arrival rates")
    common(sweep)
    sweep.add_argument("--seed", type=int, help="single run seed")
    sweep.add_argument("--seeds", type=_int_list, help="comma separated run seeds")
    sweep.add_argument("--topology-seeds", type=_int_list, help="comma separated topology seeds")
    sweep.add_argument("--rates", type=_float_list, help="comma separated rate grid")
    sweep.add_argument("--policy", choices=[k.value for k in PolicyKind])
    sweep.add_argument("--exact-gossip", action="store_true", help="use exact network sums")

    bounds = sub.add_parser("bounds", help="evaluate the stability guarantee table")
    common(bounds, config_required=False)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = None
        if args.config:
            try:
                cfg = load_config(args.config)
            except OSError as exc:
                raise QosnetError(f"cannot read {args.config}: {exc.strerror or exc}") from exc
        if args.command == "run":
            return cmd_run(cfg, args)
        if args.command == "sweep":
            return cmd_sweep(cfg, args)
        return cmd_bounds(cfg, args)
    except QosnetError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
