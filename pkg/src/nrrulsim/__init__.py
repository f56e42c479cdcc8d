"""Radio-access RTT simulation and fault-prediction feasibility analysis.

Subsystems:
    phy        numerology, frame timing, grid capacity, message sizing
    channel    Gilbert-Elliot two-state error process
    scheduler  control pattern, dynamic grants, HARQ
    engine     replication loop, traffic, campaign statistics
    ruleval    margin labeling, cost/advance metrics, threshold calibration
    chain      architecture presets, RTT composition, feasibility verdict
    cli        sweeps and plot-data emission
"""

from .channel import GilbertElliotChannel, GilbertElliotParams, calibrate, error_rate, steady_state
from .chain import ARCHITECTURES, ArchitecturePreset, ServerModel, compose_rtt, feasibility, t_p_s
from .engine import SimReport, TrafficConfig, Transaction, run_campaign, run_replication
from .phy import (
    ConfigurationError,
    MessageSpec,
    Numerology,
    RadioConfig,
    n_rb,
    pdu_bytes,
    rbs_for_pdu,
    srp_duration_ms,
    tb_bytes_per_rb,
)
from .scheduler import CycleLayout, GnbScheduler, assign_control, control_capacity, cycle_layout

__all__ = [
    "ARCHITECTURES",
    "ArchitecturePreset",
    "ConfigurationError",
    "CycleLayout",
    "GilbertElliotChannel",
    "GilbertElliotParams",
    "GnbScheduler",
    "MessageSpec",
    "Numerology",
    "RadioConfig",
    "ServerModel",
    "SimReport",
    "TrafficConfig",
    "Transaction",
    "assign_control",
    "calibrate",
    "compose_rtt",
    "control_capacity",
    "cycle_layout",
    "error_rate",
    "feasibility",
    "n_rb",
    "pdu_bytes",
    "rbs_for_pdu",
    "run_campaign",
    "run_replication",
    "srp_duration_ms",
    "steady_state",
    "t_p_s",
    "tb_bytes_per_rb",
]
