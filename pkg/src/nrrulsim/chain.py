"""End-to-end round-trip composition and the feasibility verdict.

Composes the radio-chain round trip produced by the engine with the
server-processing and actuation terms, encodes the four deployment
architectures, and decides whether the resulting RTT leaves room before
the predictor's average advance.
"""

from __future__ import annotations

from dataclasses import dataclass

from .engine import SimReport
from .phy import ConfigurationError, Numerology, RadioConfig


@dataclass(frozen=True)
class ArchitecturePreset:
    """Radio settings and core-network delay of one deployment option."""

    arch_id: int
    bandwidth_hz: float
    scs_khz: int
    mod_order: int
    t_cn_ms: float

    def radio_config(self, **overrides) -> RadioConfig:
        return RadioConfig(
            bandwidth_hz=self.bandwidth_hz,
            numerology=Numerology(self.scs_khz),
            mod_order=self.mod_order,
            **overrides,
        )


# Architectures 1..4: RAN/UPF/server placed progressively closer to the
# plant.  1 and 2 ride a public-network slice (5 MHz, 30 kHz, 256-QAM);
# 3 and 4 use a dedicated deployment (100 MHz, 120 kHz, 64-QAM).
ARCHITECTURES: dict[int, ArchitecturePreset] = {
    1: ArchitecturePreset(1, 5e6, 30, 256, 7.0),
    2: ArchitecturePreset(2, 5e6, 30, 256, 2.0),
    3: ArchitecturePreset(3, 100e6, 120, 64, 2.0),
    4: ArchitecturePreset(4, 100e6, 120, 64, 1.0),
}


@dataclass(frozen=True)
class ServerModel:
    """Measured server-side timing: inference time anchors and actuation.

    The anchor table maps terminal counts to measured pipeline processing
    times; intermediate counts are linearly interpolated and extrapolation
    is refused.
    """

    anchors: tuple = ((1, 1.2), (50, 119.2))
    t_a_ms: float = 200.0

    def __post_init__(self) -> None:
        if len(self.anchors) < 2:
            raise ConfigurationError("need at least two anchor points")
        ns = [a[0] for a in self.anchors]
        ts = [a[1] for a in self.anchors]
        if sorted(ns) != ns or len(set(ns)) != len(ns):
            raise ConfigurationError("anchor terminal counts must be strictly increasing")
        if any(t2 <= t1 for t1, t2 in zip(ts, ts[1:])):
            raise ConfigurationError("anchor times must be strictly increasing")
        if self.t_a_ms < 0:
            raise ConfigurationError("actuation time must be non-negative")


def t_p_s(n_ues: int, server: ServerModel = ServerModel()) -> float:
    """Server processing time for n terminals, interpolated between anchors."""
    anchors = server.anchors
    if n_ues < anchors[0][0] or n_ues > anchors[-1][0]:
        raise ConfigurationError(
            f"n_ues={n_ues} outside the measured range "
            f"[{anchors[0][0]}, {anchors[-1][0]}]; no extrapolation"
        )
    for (n0, t0), (n1, t1) in zip(anchors, anchors[1:]):
        if n0 <= n_ues <= n1:
            return t0 + (t1 - t0) * (n_ues - n0) / (n1 - n0)
    raise AssertionError("unreachable")


@dataclass
class RttBreakdown:
    """Average round trip with the stacked-bar decomposition preserved."""

    arch_id: int | None
    n_ues: int
    t_5g_nr_ms: float
    t_p_s_ms: float
    t_a_ms: float
    ci90_ms: float

    @property
    def rtt_ms(self) -> float:
        return self.t_p_s_ms + self.t_5g_nr_ms + self.t_a_ms


def compose_rtt(
    report: SimReport,
    server: ServerModel = ServerModel(),
    preset: ArchitecturePreset | None = None,
) -> RttBreakdown:
    """Average RTT = T_P_S + T_5G_NR + T_A for the report's population.

    When a preset is given, the report must have been produced with that
    preset's radio settings and core-network delay; a mismatch is an error
    rather than a silently wrong composition.
    """
    cfg = report.config
    if preset is not None:
        produced = (
            cfg["radio"]["bandwidth_hz"],
            cfg["radio"]["scs_khz"],
            cfg["radio"]["mod_order"],
            cfg["t_cn_ms"],
        )
        expected = (
            preset.bandwidth_hz,
            preset.scs_khz,
            preset.mod_order,
            preset.t_cn_ms,
        )
        if produced != expected:
            raise ConfigurationError(
                f"report config {produced} does not match architecture "
                f"{preset.arch_id} settings {expected}"
            )
    n_ues = cfg["traffic"]["n_ues"]
    return RttBreakdown(
        arch_id=preset.arch_id if preset is not None else None,
        n_ues=n_ues,
        t_5g_nr_ms=report.mean_t_5g_nr_ms,
        t_p_s_ms=t_p_s(n_ues, server),
        t_a_ms=server.t_a_ms,
        ci90_ms=report.ci90_halfwidth_ms,
    )


@dataclass(frozen=True)
class Verdict:
    feasible: bool
    slack_ms: float
    rtt_ms: float
    advance_ms: float
    margin_label: str = ""

    @property
    def label(self) -> str:
        return "FEASIBLE" if self.feasible else "INFEASIBLE"


def feasibility(
    rtt_ms: float,
    mean_advance_s: float,
    margin_label: str = "",
    required_slack_ms: float = 0.0,
) -> Verdict:
    """Is the round trip strictly below the prediction advance?

    The advance arrives in seconds (how it is reported by the evaluation
    pipeline); the comparison happens in milliseconds.  Equality is not
    feasible: the command must arrive strictly before the predicted fault,
    and a caller may demand extra slack on top.
    """
    advance_ms = mean_advance_s * 1000.0
    slack = advance_ms - rtt_ms
    return Verdict(
        feasible=slack > required_slack_ms,
        slack_ms=slack,
        rtt_ms=rtt_ms,
        advance_ms=advance_ms,
        margin_label=margin_label,
    )


def feasibility_table_csv(rows, header_lines=()) -> str:
    """Long-format feasibility table, one row per (architecture, N, margin).

    rows: iterables of (RttBreakdown, Verdict).
    """
    lines = [f"# {line}" for line in header_lines]
    lines.append(
        "arch,n_ues,t_5g_nr_ms,t_p_s_ms,t_a_ms,rtt_ms,ci90_ms,margin,advance_s,verdict"
    )
    for breakdown, verdict in rows:
        lines.append(
            f"{breakdown.arch_id},{breakdown.n_ues},{breakdown.t_5g_nr_ms!r},"
            f"{breakdown.t_p_s_ms!r},{breakdown.t_a_ms!r},{breakdown.rtt_ms!r},"
            f"{breakdown.ci90_ms!r},{verdict.margin_label},"
            f"{verdict.advance_ms / 1000.0!r},{verdict.label}"
        )
    return "\n".join(lines) + "\n"
