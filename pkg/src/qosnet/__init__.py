"""Distributed QoS scheduling for multihop wireless networks under the SINR model."""

from .netcore import (ChannelState, FadingParams, FlowSpec, HardDeadline, InvalidConfig,
                      InvalidParameter, MeanDelay, QosnetError, QueueMatrix, Schedule, Topology,
                      build_topology, differential_backlog, generate_arrivals, sample_channel,
                      sinr_rates, step_queues)
from .scheduler import QosDistributed, SchedulerParams, SlotDecision
from .baselines import CentralizedMaxweight, DdrpcStyle, LeeStyle, PolicyKind
from .engine import RunParams, RunResult, Simulation, run_simulation, sweep_arrival_rates
from .bounds import beta1_bound, beta2_bound, rho_bound
from .config import ExperimentConfig, load_config, parse_config

__version__ = "0.1.0"

__all__ = [
    "ChannelState", "FadingParams", "FlowSpec", "HardDeadline", "InvalidConfig",
    "InvalidParameter", "MeanDelay", "QosnetError", "QueueMatrix", "Schedule", "Topology",
    "build_topology", "differential_backlog", "generate_arrivals", "sample_channel",
    "sinr_rates", "step_queues", "QosDistributed", "SchedulerParams", "SlotDecision",
    "CentralizedMaxweight", "DdrpcStyle", "LeeStyle", "PolicyKind", "RunParams", "RunResult",
    "Simulation", "run_simulation", "sweep_arrival_rates", "beta1_bound", "beta2_bound",
    "rho_bound", "ExperimentConfig", "load_config", "parse_config",
]
