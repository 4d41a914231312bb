"""Hybrid active/passive RIS-assisted ISAC joint design library.

Maximizes the minimum target beampattern gain of a dual-function BS under
per-CU SINR and power constraints by alternating between an SDR beamformer
stage (with exact rank-one recovery) and an RIS mode-selection/reflection
stage (lifted SDP with big-M mode coupling, a linearized binarity penalty,
and audited Gaussian randomization).
"""

__version__ = "0.1.0"

from .channels import ChannelSet, RisConfiguration, generate_channels, steering_vector
from .config import SystemConfig, db_to_linear, dbm_to_watts, load_config
from .metrics import BeamformingSolution, ConstraintReport, audit
from .optimizer import RunOptions, SolveTrace, run_alternating, run_baseline

__all__ = [
    "BeamformingSolution",
    "ChannelSet",
    "ConstraintReport",
    "RisConfiguration",
    "RunOptions",
    "SolveTrace",
    "SystemConfig",
    "audit",
    "db_to_linear",
    "dbm_to_watts",
    "generate_channels",
    "load_config",
    "run_alternating",
    "run_baseline",
    "steering_vector",
]
