"""Deterministic replication engine: traffic, delay accounting, campaigns.

One replication is a single-threaded state machine advancing cycle by
cycle.  Every terminal emits a fixed-size uplink sample with a fixed period
starting from a uniform random offset; each delivered uplink triggers a
Bernoulli draw that decides whether a one-byte command comes back.  All
radio delays come from the scheduler and channel; the core network adds a
fixed delay per traversal and both processing stages cost seven OFDM
symbols (one mini-slot).

Timeline of a full loop (all times in ms):

    gen -> +T_P_UE -> uplink eligible -> (scheduler) -> delivered
        -> +T_P_gNB -> +T_CN -> server (Bernoulli draw, no server time here)
        -> +T_CN -> +T_P_gNB -> downlink eligible -> (scheduler) -> delivered
        -> +T_P_UE -> complete

so that complete - gen = 2*(T_P_UE + T_P_gNB + T_CN) + T_RAN_UL + T_RAN_DL
holds exactly per transaction.  Server processing and actuation are
composed later (see the chain module).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .channel import GilbertElliotChannel, GilbertElliotParams
from .phy import ConfigurationError, RadioConfig, pdu_bytes, rbs_for_pdu
from .scheduler import DEFAULT_CYCLE_MS, GnbScheduler, GrantLog, cycle_layout


@dataclass(frozen=True)
class TrafficConfig:
    """Traffic and campaign parameters."""

    n_ues: int
    ul_period_ms: float = 100.0
    p_dl: float = 0.10
    sim_time_s: float = 10.0
    n_replications: int = 20

    def __post_init__(self) -> None:
        if self.n_ues < 1:
            raise ConfigurationError("need at least one terminal")
        if self.ul_period_ms <= 0:
            raise ConfigurationError("uplink period must be positive")
        if not 0.0 <= self.p_dl <= 1.0:
            raise ConfigurationError("p_dl must be within [0, 1]")
        if self.sim_time_s <= 0:
            raise ConfigurationError("simulation time must be positive")


@dataclass(slots=True)
class Transaction:
    """One uplink sample and, when issued, its command round trip."""

    ue_id: int
    ul_gen_ms: float
    ul_eligible_ms: float = math.nan
    ul_delivery_ms: float = math.nan
    server_in_ms: float = math.nan
    dl_issued: bool = False
    dl_gen_ms: float = math.nan
    dl_eligible_ms: float = math.nan
    dl_delivery_ms: float = math.nan
    complete_ms: float = math.nan
    ul_attempts: int = 0
    dl_attempts: int = 0
    t_p_ue_ms: float = 0.0
    t_p_gnb_ms: float = 0.0
    t_cn_ms: float = 0.0

    @property
    def ul_delivered(self) -> bool:
        return not math.isnan(self.ul_delivery_ms)

    @property
    def full_loop(self) -> bool:
        return self.dl_issued and not math.isnan(self.complete_ms)

    @property
    def t_ran_ul_ms(self) -> float:
        return self.ul_delivery_ms - self.ul_eligible_ms

    @property
    def t_ran_dl_ms(self) -> float:
        return self.dl_delivery_ms - self.dl_eligible_ms

    @property
    def t_5g_nr_ms(self) -> float:
        """Radio-chain round trip: sum of the decomposition terms."""
        return (
            self.t_p_ue_ms
            + self.t_p_gnb_ms
            + self.t_cn_ms
            + self.t_ran_ul_ms
            + self.t_ran_dl_ms
        )

    @property
    def ul_one_way_ms(self) -> float:
        return self.server_in_ms - self.ul_gen_ms


@dataclass
class ReplicationResult:
    transactions: list
    full_loop: list
    ul_only: list
    grant_log: GrantLog | None = None


def radio_config_hash(
    radio: RadioConfig,
    traffic: TrafficConfig,
    chan: GilbertElliotParams,
    t_cn_ms: float,
    policy: str,
    cycle_ms: float,
) -> str:
    echo = config_echo(radio, traffic, chan, t_cn_ms, policy, cycle_ms)
    blob = json.dumps(echo, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def config_echo(radio, traffic, chan, t_cn_ms, policy, cycle_ms) -> dict:
    return {
        "radio": {
            "bandwidth_hz": radio.bandwidth_hz,
            "scs_khz": radio.numerology.scs_khz,
            "mod_order": radio.mod_order,
            "header_bytes": radio.header_bytes,
            "ul_payload_bytes": radio.ul_payload_bytes,
            "dl_payload_bytes": radio.dl_payload_bytes,
        },
        "traffic": {
            "n_ues": traffic.n_ues,
            "ul_period_ms": traffic.ul_period_ms,
            "p_dl": traffic.p_dl,
            "sim_time_s": traffic.sim_time_s,
            "n_replications": traffic.n_replications,
        },
        "channel": {"g": chan.g, "b": chan.b, "u": chan.u, "v": chan.v},
        "t_cn_ms": t_cn_ms,
        "policy": policy,
        "cycle_ms": cycle_ms,
    }


def run_replication(
    radio: RadioConfig,
    traffic: TrafficConfig,
    chan: GilbertElliotParams,
    seed: int,
    t_cn_ms: float = 0.0,
    policy: str = "fifo",
    cycle_ms: float = DEFAULT_CYCLE_MS,
    collect_grant_log: bool = False,
    pusch_minislots: int = 3,
    pdsch_minislots: int = 1,
) -> ReplicationResult:
    """Simulate sim_time_s of wall-clock time; deterministic for a seed.

    The root seed is split into named independent streams (traffic offsets,
    command draws, one uplink and one downlink channel per terminal) so
    that config sweeps sharing seeds stay coupled (common random numbers).
    """
    layout = cycle_layout(radio, cycle_ms, pusch_minislots, pdsch_minislots)
    proc_ms = layout.minislot_ms  # 7 OFDM symbols
    ul_rbs = rbs_for_pdu(pdu_bytes(radio.ul_payload_bytes, radio), radio.mod_order)
    dl_rbs = rbs_for_pdu(pdu_bytes(radio.dl_payload_bytes, radio), radio.mod_order)

    root = np.random.SeedSequence(int(seed))
    offsets_ss, pdl_ss, ul_ss, dl_ss = root.spawn(4)
    n = traffic.n_ues
    offsets = np.random.default_rng(offsets_ss).random(n) * traffic.ul_period_ms
    pdl_rngs = [np.random.default_rng(s) for s in pdl_ss.spawn(n)]
    ul_channels = {
        u: GilbertElliotChannel(chan, np.random.default_rng(s))
        for u, s in enumerate(ul_ss.spawn(n))
    }
    dl_channels = {
        u: GilbertElliotChannel(chan, np.random.default_rng(s))
        for u, s in enumerate(dl_ss.spawn(n))
    }

    grant_log = GrantLog() if collect_grant_log else None
    sched = GnbScheduler(
        layout,
        range(n),
        ul_channels,
        dl_channels,
        ul_rbs,
        dl_rbs,
        policy=policy,
        grant_log=grant_log,
    )

    sim_ms = traffic.sim_time_s * 1000.0
    transactions: list[Transaction] = []
    for u in range(n):
        t = float(offsets[u])
        while t < sim_ms:
            tx = Transaction(ue_id=u, ul_gen_ms=t)
            tx.ul_eligible_ms = t + proc_ms
            sched.submit_uplink(u, tx.ul_eligible_ms, token=tx)
            transactions.append(tx)
            t += traffic.ul_period_ms

    n_cycles = int(math.ceil(sim_ms / layout.cycle_ms))
    for k in range(n_cycles):
        for ev in sched.run_cycle(k):
            tx: Transaction = ev.token
            if ev.kind == "ul":
                tx.ul_delivery_ms = ev.delivery_ms
                tx.ul_attempts = ev.attempts
                tx.server_in_ms = ev.delivery_ms + proc_ms + t_cn_ms
                if pdl_rngs[tx.ue_id].random() < traffic.p_dl:
                    tx.dl_issued = True
                    tx.dl_gen_ms = tx.server_in_ms
                    tx.dl_eligible_ms = tx.server_in_ms + t_cn_ms + proc_ms
                    sched.submit_downlink(tx.ue_id, tx.dl_eligible_ms, token=tx)
            else:
                tx.dl_delivery_ms = ev.delivery_ms
                tx.dl_attempts = ev.attempts
                tx.complete_ms = ev.delivery_ms + proc_ms

    full_loop: list[Transaction] = []
    ul_only: list[Transaction] = []
    for tx in transactions:
        if tx.full_loop and tx.complete_ms <= sim_ms:
            tx.t_p_ue_ms = 2.0 * proc_ms
            tx.t_p_gnb_ms = 2.0 * proc_ms
            tx.t_cn_ms = 2.0 * t_cn_ms
            full_loop.append(tx)
        elif (
            not tx.dl_issued and tx.ul_delivered and tx.server_in_ms <= sim_ms
        ):
            tx.t_p_ue_ms = proc_ms
            tx.t_p_gnb_ms = proc_ms
            tx.t_cn_ms = t_cn_ms
            ul_only.append(tx)
        # anything else was truncated by the end of the run: discarded
    return ReplicationResult(transactions, full_loop, ul_only, grant_log)


@dataclass
class ScopeStats:
    full_loop_mean_ms: float
    ul_only_mean_ms: float
    n_full_loop: int
    n_ul_only: int
    empty_full_loop: bool


def rtt_stat_scope(result: ReplicationResult) -> ScopeStats:
    """Split statistics: round trips are defined only where a command came
    back; uplink-only latency is reported separately for the rest."""
    if not result.transactions:
        raise ValueError("no transactions to summarise")
    full = [tx.t_5g_nr_ms for tx in result.full_loop]
    ul = [tx.ul_one_way_ms for tx in result.ul_only]
    return ScopeStats(
        full_loop_mean_ms=float(np.mean(full)) if full else math.nan,
        ul_only_mean_ms=float(np.mean(ul)) if ul else math.nan,
        n_full_loop=len(full),
        n_ul_only=len(ul),
        empty_full_loop=not full,
    )


@dataclass
class SimReport:
    """Replication-averaged campaign statistics with a Student-t 90% CI."""

    config: dict
    config_hash: str
    seeds: list
    per_replication_means: list
    excluded_replications: list  # (replication index, reason)
    mean_t_5g_nr_ms: float
    mean_rtt_ms: float  # in-simulator end-to-end mean; equals T_5G_NR here
    ci90_halfwidth_ms: float
    mean_t_ran_ul_ms: float
    mean_t_ran_dl_ms: float
    ul_only_mean_ms: float
    n_full_loop: int
    n_ul_only: int

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "seeds": list(self.seeds),
            "per_replication_means_ms": self.per_replication_means,
            "excluded_replications": self.excluded_replications,
            "mean_t_5g_nr_ms": self.mean_t_5g_nr_ms,
            "mean_rtt_ms": self.mean_rtt_ms,
            "ci90_halfwidth_ms": self.ci90_halfwidth_ms,
            "mean_t_ran_ul_ms": self.mean_t_ran_ul_ms,
            "mean_t_ran_dl_ms": self.mean_t_ran_dl_ms,
            "ul_only_mean_ms": self.ul_only_mean_ms,
            "n_full_loop": self.n_full_loop,
            "n_ul_only": self.n_ul_only,
        }


def ci90_halfwidth(values) -> float:
    """Student-t two-sided 90% confidence half-width of the mean."""
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return 0.0
    sem = arr.std(ddof=1) / math.sqrt(arr.size)
    return float(stats.t.ppf(0.95, arr.size - 1) * sem)


def run_campaign(
    radio: RadioConfig,
    traffic: TrafficConfig,
    chan: GilbertElliotParams,
    seeds,
    t_cn_ms: float = 0.0,
    policy: str = "fifo",
    cycle_ms: float = DEFAULT_CYCLE_MS,
    results: list | None = None,
    pusch_minislots: int = 3,
    pdsch_minislots: int = 1,
) -> SimReport:
    """Aggregate per-replication means over the given seeds.

    Replications that produce no full-loop transaction are flagged,
    excluded from the averages and reported.  Pre-computed replication
    results may be passed to avoid re-simulation.
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ConfigurationError(
            "need at least two replications for a confidence interval"
        )
    if results is None:
        results = [
            run_replication(
                radio, traffic, chan, s, t_cn_ms, policy, cycle_ms,
                pusch_minislots=pusch_minislots,
                pdsch_minislots=pdsch_minislots,
            )
            for s in seeds
        ]

    rep_means: list[float] = []
    excluded: list = []
    ran_ul: list[float] = []
    ran_dl: list[float] = []
    ul_only_means: list[float] = []
    n_full = 0
    n_ul = 0
    for idx, res in enumerate(results):
        scope = rtt_stat_scope(res)
        n_ul += scope.n_ul_only
        if not math.isnan(scope.ul_only_mean_ms):
            ul_only_means.append(scope.ul_only_mean_ms)
        if scope.empty_full_loop:
            excluded.append((idx, "no full-loop transaction"))
            continue
        n_full += scope.n_full_loop
        rep_means.append(scope.full_loop_mean_ms)
        ran_ul.append(float(np.mean([t.t_ran_ul_ms for t in res.full_loop])))
        ran_dl.append(float(np.mean([t.t_ran_dl_ms for t in res.full_loop])))

    mean = float(np.mean(rep_means)) if rep_means else math.nan
    return SimReport(
        config=config_echo(radio, traffic, chan, t_cn_ms, policy, cycle_ms),
        config_hash=radio_config_hash(radio, traffic, chan, t_cn_ms, policy, cycle_ms),
        seeds=seeds,
        per_replication_means=rep_means,
        excluded_replications=excluded,
        mean_t_5g_nr_ms=mean,
        mean_rtt_ms=mean,
        ci90_halfwidth_ms=ci90_halfwidth(rep_means),
        mean_t_ran_ul_ms=float(np.mean(ran_ul)) if ran_ul else math.nan,
        mean_t_ran_dl_ms=float(np.mean(ran_dl)) if ran_dl else math.nan,
        ul_only_mean_ms=float(np.mean(ul_only_means)) if ul_only_means else math.nan,
        n_full_loop=n_full,
        n_ul_only=n_ul,
    )


# -- output artefacts -------------------------------------------------------


def atomic_write_text(path: str, text: str) -> None:
    """Write-temp-then-rename so partial output never lands at `path`."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text)
    os.replace(tmp, path)


def transactions_csv(results, header_lines=()) -> str:
    """Long-format per-transaction table (one row per counted transaction)."""
    lines = [f"# {line}" for line in header_lines]
    lines.append(
        "replication,ue_id,ul_gen_ms,t_ran_ul_ms,t_cn_ms,t_ran_dl_ms,t_5g_nr_ms,dl_issued"
    )
    for rep_idx, res in enumerate(results):
        for tx in res.full_loop + res.ul_only:
            if tx.full_loop:
                tail = f"{tx.t_ran_dl_ms!r},{tx.t_5g_nr_ms!r},1"
            else:
                tail = ",,0"
            lines.append(
                f"{rep_idx},{tx.ue_id},{tx.ul_gen_ms!r},{tx.t_ran_ul_ms!r},"
                f"{tx.t_cn_ms!r},{tail}"
            )
    return "\n".join(lines) + "\n"


def report_json(report: SimReport) -> str:
    return json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"
