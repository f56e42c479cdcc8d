"""Command-line front end: config parsing, sweeps, plot-data emission.

Configuration is a flat key=value file with namespaced keys; every flag
overrides its file counterpart.  Outputs are written atomically and are
byte-identical across re-runs with the same config and seeds.

Recognised keys (defaults in parentheses):
    radio.bandwidth_mhz (5)      radio.scs_khz (30)      radio.mod_order (256)
    radio.header_bytes (72)      radio.ul_payload_bytes (32)
    radio.dl_payload_bytes (1)
    traffic.n_ues (1)            traffic.ul_period_ms (100)
    traffic.p_dl (0.1)           traffic.sim_time_s (10)
    traffic.n_replications (20)
    channel.g (1.0)  channel.b (0.0)  channel.v (0.5)  channel.target_pe (0.01)
    sched.policy (fifo)          sched.cycle_ms (2.0)
    sched.pusch_minislots (3)    sched.pdsch_minislots (1)
    server.anchors (1:1.2,50:119.2)   server.t_a_ms (200)
    rul.advance_s_m5 (0.27)      rul.advance_s_m10 (0.80)
    arch.id (unset; picks radio.* and t_cn_ms from the preset)
    t_cn_ms (0)                  seed (1)
    out_dir (out)                figure (unset: single campaign)
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .chain import (
    ARCHITECTURES,
    ServerModel,
    compose_rtt,
    feasibility,
    feasibility_table_csv,
    t_p_s,
)
from .channel import calibrate
from .engine import (
    TrafficConfig,
    atomic_write_text,
    config_echo,
    radio_config_hash,
    report_json,
    run_campaign,
    run_replication,
    transactions_csv,
)
from .phy import ConfigurationError, Numerology, RadioConfig
from .scheduler import cycle_layout, grant_log_csv

DEFAULT_SWEEP_N = (1, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50)
FIG2_PAIRS = ((5.0, 30), (20.0, 60), (100.0, 120))
FIG3_PAIRS = ((5.0, 30), (20.0, 60))

DEFAULTS = {
    "radio.bandwidth_mhz": "5",
    "radio.scs_khz": "30",
    "radio.mod_order": "256",
    "radio.header_bytes": "72",
    "radio.ul_payload_bytes": "32",
    "radio.dl_payload_bytes": "1",
    "traffic.n_ues": "1",
    "traffic.ul_period_ms": "100",
    "traffic.p_dl": "0.1",
    "traffic.sim_time_s": "10",
    "traffic.n_replications": "20",
    "channel.g": "1.0",
    "channel.b": "0.0",
    "channel.v": "0.5",
    "channel.target_pe": "0.01",
    "sched.policy": "fifo",
    "sched.cycle_ms": "2.0",
    "sched.pusch_minislots": "3",
    "sched.pdsch_minislots": "1",
    "server.anchors": "1:1.2,50:119.2",
    "server.t_a_ms": "200",
    "rul.advance_s_m5": "0.27",
    "rul.advance_s_m10": "0.80",
    "t_cn_ms": "0",
    "seed": "1",
    "out_dir": "out",
}


def parse_config_file(path: str) -> dict:
    values: dict = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}"
                )
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


def _parse_anchors(text: str):
    anchors = []
    for part in text.split(","):
        n, t = part.split(":")
        anchors.append((int(n), float(t)))
    return tuple(anchors)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nrrulsim",
        description="Radio-access RTT simulation and RUL feasibility sweeps",
    )
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--arch", type=int, choices=sorted(ARCHITECTURES))
    parser.add_argument("--n-ues", help="terminal count, or comma list for sweeps")
    parser.add_argument("--bandwidth-mhz", type=float)
    parser.add_argument("--scs-khz", type=int)
    parser.add_argument("--mod-order", type=int)
    parser.add_argument("--t-cn-ms", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--replications", type=int)
    parser.add_argument("--out-dir")
    parser.add_argument("--figure", choices=("fig2", "fig3", "fig5"))
    parser.add_argument("--policy", choices=("fifo", "rr"))
    parser.add_argument(
        "--transactions-csv",
        action="store_true",
        help="also dump the per-transaction table for single campaigns",
    )
    parser.add_argument(
        "--grant-log",
        action="store_true",
        help="dump the first replication's resource grants for auditing",
    )
    return parser


def merge_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if args.config:
        settings.update(parse_config_file(args.config))
    if args.arch is not None:
        settings["arch.id"] = str(args.arch)
    overrides = {
        "radio.bandwidth_mhz": args.bandwidth_mhz,
        "radio.scs_khz": args.scs_khz,
        "radio.mod_order": args.mod_order,
        "traffic.n_ues": args.n_ues,
        "t_cn_ms": args.t_cn_ms,
        "seed": args.seed,
        "traffic.n_replications": args.replications,
        "out_dir": args.out_dir,
        "sched.policy": args.policy,
    }
    for key, value in overrides.items():
        if value is not None:
            settings[key] = str(value)
    return settings


def _radio_from(settings: dict) -> tuple[RadioConfig, float]:
    if "arch.id" in settings:
        preset = ARCHITECTURES[int(settings["arch.id"])]
        radio = RadioConfig(
            bandwidth_hz=preset.bandwidth_hz,
            numerology=Numerology(preset.scs_khz),
            mod_order=preset.mod_order,
            header_bytes=int(settings["radio.header_bytes"]),
            ul_payload_bytes=int(settings["radio.ul_payload_bytes"]),
            dl_payload_bytes=int(settings["radio.dl_payload_bytes"]),
        )
        return radio, preset.t_cn_ms
    radio = RadioConfig(
        bandwidth_hz=float(settings["radio.bandwidth_mhz"]) * 1e6,
        numerology=Numerology(int(settings["radio.scs_khz"])),
        mod_order=int(settings["radio.mod_order"]),
        header_bytes=int(settings["radio.header_bytes"]),
        ul_payload_bytes=int(settings["radio.ul_payload_bytes"]),
        dl_payload_bytes=int(settings["radio.dl_payload_bytes"]),
    )
    return radio, float(settings["t_cn_ms"])


def _traffic_from(settings: dict, n_ues: int) -> TrafficConfig:
    return TrafficConfig(
        n_ues=n_ues,
        ul_period_ms=float(settings["traffic.ul_period_ms"]),
        p_dl=float(settings["traffic.p_dl"]),
        sim_time_s=float(settings["traffic.sim_time_s"]),
        n_replications=int(settings["traffic.n_replications"]),
    )


def _channel_from(settings: dict):
    return calibrate(
        float(settings["channel.target_pe"]),
        g=float(settings["channel.g"]),
        b=float(settings["channel.b"]),
        v=float(settings["channel.v"]),
    )


def _n_list(settings: dict) -> list[int]:
    raw = settings["traffic.n_ues"]
    return [int(part) for part in str(raw).split(",")]


def _worker_count() -> int:
    env = os.environ.get("NRSIM_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _replication_job(payload):
    (radio, traffic, chan, seed, t_cn_ms, policy, cycle_ms, pusch, pdsch) = payload
    return run_replication(
        radio, traffic, chan, seed, t_cn_ms, policy, cycle_ms,
        pusch_minislots=pusch, pdsch_minislots=pdsch,
    )


def _campaign(radio, traffic, chan, seeds, t_cn_ms, policy, cycle_ms,
              pusch=3, pdsch=1, pool=None):
    if pool is None:
        return run_campaign(
            radio, traffic, chan, seeds, t_cn_ms, policy, cycle_ms,
            pusch_minislots=pusch, pdsch_minislots=pdsch,
        )
    jobs = [
        (radio, traffic, chan, s, t_cn_ms, policy, cycle_ms, pusch, pdsch)
        for s in seeds
    ]
    results = list(pool.map(_replication_job, jobs))  # ordered by seed index
    return run_campaign(
        radio, traffic, chan, seeds, t_cn_ms, policy, cycle_ms, results=results,
        pusch_minislots=pusch, pdsch_minislots=pdsch,
    )


def validate_report_invariants(results) -> None:
    """Cheap post-run audit: additivity and causality per transaction."""
    for res in results:
        for tx in res.full_loop:
            total = tx.complete_ms - tx.ul_gen_ms
            if not math.isclose(tx.t_5g_nr_ms, total, abs_tol=1e-9):
                raise AssertionError(
                    f"delay decomposition does not add up for UE {tx.ue_id}"
                )
            if tx.ul_delivery_ms < tx.ul_eligible_ms or tx.dl_delivery_ms < tx.dl_eligible_ms:
                raise AssertionError("delivery precedes eligibility")


def run_single(settings: dict, dump_transactions: bool, dump_grants: bool = False) -> int:
    radio, t_cn_ms = _radio_from(settings)
    n_list = _n_list(settings)
    if len(n_list) != 1:
        raise ConfigurationError("single campaign takes one terminal count")
    traffic = _traffic_from(settings, n_list[0])
    chan = _channel_from(settings)
    policy = settings["sched.policy"]
    cycle_ms = float(settings["sched.cycle_ms"])
    pusch = int(settings["sched.pusch_minislots"])
    pdsch = int(settings["sched.pdsch_minislots"])
    base_seed = int(settings["seed"])
    seeds = [base_seed + i for i in range(traffic.n_replications)]

    results = [
        run_replication(
            radio, traffic, chan, s, t_cn_ms, policy, cycle_ms,
            collect_grant_log=(dump_grants and s == seeds[0]),
            pusch_minislots=pusch, pdsch_minislots=pdsch,
        )
        for s in seeds
    ]
    validate_report_invariants(results)
    report = run_campaign(
        radio, traffic, chan, seeds, t_cn_ms, policy, cycle_ms, results=results
    )

    out_dir = settings["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    stem = f"campaign_{report.config_hash}"
    atomic_write_text(os.path.join(out_dir, f"{stem}.json"), report_json(report))
    header = [f"config_hash={report.config_hash}", f"seeds={','.join(map(str, seeds))}"]
    if dump_transactions:
        atomic_write_text(
            os.path.join(out_dir, f"{stem}_transactions.csv"),
            transactions_csv(results, header),
        )
    if dump_grants and results[0].grant_log is not None:
        layout = cycle_layout(radio, cycle_ms, pusch, pdsch)
        results[0].grant_log.audit(layout.n_rb)
        atomic_write_text(
            os.path.join(out_dir, f"{stem}_grants.csv"),
            grant_log_csv(results[0].grant_log, layout, header),
        )
    print(
        f"n_ues={traffic.n_ues} mean_t_5g_nr_ms={report.mean_t_5g_nr_ms:.4f} "
        f"ci90_ms={report.ci90_halfwidth_ms:.4f} full_loop={report.n_full_loop} "
        f"-> {out_dir}/{stem}.json"
    )
    return 0


def _sweep_reports(settings: dict, configs) -> list:
    """configs: (bandwidth_mhz, scs_khz, mod_order, t_cn_ms, n_ues) tuples."""
    chan = _channel_from(settings)
    policy = settings["sched.policy"]
    cycle_ms = float(settings["sched.cycle_ms"])
    pusch = int(settings["sched.pusch_minislots"])
    pdsch = int(settings["sched.pdsch_minislots"])
    base_seed = int(settings["seed"])
    n_reps = int(settings["traffic.n_replications"])
    seeds = [base_seed + i for i in range(n_reps)]
    reports = []
    workers = _worker_count()
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for bw_mhz, scs, mod, t_cn_ms, n in configs:
            radio = RadioConfig(
                bandwidth_hz=bw_mhz * 1e6,
                numerology=Numerology(scs),
                mod_order=mod,
                header_bytes=int(settings["radio.header_bytes"]),
                ul_payload_bytes=int(settings["radio.ul_payload_bytes"]),
                dl_payload_bytes=int(settings["radio.dl_payload_bytes"]),
            )
            traffic = _traffic_from(settings, n)
            reports.append(
                _campaign(radio, traffic, chan, seeds, t_cn_ms, policy,
                          cycle_ms, pusch, pdsch, pool)
            )
    finally:
        if pool is not None:
            pool.shutdown()
    return reports


def emit_plot_data(settings: dict, figure: str, reports: list | None = None) -> str:
    """Long-format CSV for one figure; returns the written path."""
    n_list = _n_list(settings) if settings.get("_n_overridden") else list(DEFAULT_SWEEP_N)
    out_dir = settings["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    seeds_header = (
        f"seeds={settings['seed']}.."
        f"{int(settings['seed']) + int(settings['traffic.n_replications']) - 1}"
    )

    if figure in ("fig2", "fig3"):
        pairs = FIG2_PAIRS if figure == "fig2" else FIG3_PAIRS
        mods = (256,) if figure == "fig2" else (64, 256)
        configs = [
            (bw, scs, mod, 0.0, n)
            for (bw, scs) in pairs
            for mod in mods
            for n in n_list
        ]
        if reports is None:
            reports = _sweep_reports(settings, configs)
        if len(reports) != len(configs):
            raise ConfigurationError(
                f"{figure} needs {len(configs)} reports, got {len(reports)}"
            )
        lines = [f"# {seeds_header}"]
        lines.append(
            "bandwidth_mhz,scs_khz,mod_order,n_ues,mean_t_5g_nr_ms,ci90_ms,config_hash"
        )
        for (bw, scs, mod, _, n), rep in zip(configs, reports):
            lines.append(
                f"{bw!r},{scs},{mod},{n},{rep.mean_t_5g_nr_ms!r},"
                f"{rep.ci90_halfwidth_ms!r},{rep.config_hash}"
            )
        path = os.path.join(out_dir, f"{figure}.csv")
        atomic_write_text(path, "\n".join(lines) + "\n")
        return path

    if figure == "fig5":
        server = ServerModel(
            anchors=_parse_anchors(settings["server.anchors"]),
            t_a_ms=float(settings["server.t_a_ms"]),
        )
        advances = {
            "m5": float(settings["rul.advance_s_m5"]),
            "m10": float(settings["rul.advance_s_m10"]),
        }
        configs = [
            (p.bandwidth_hz / 1e6, p.scs_khz, p.mod_order, p.t_cn_ms, n)
            for p in ARCHITECTURES.values()
            for n in n_list
        ]
        if reports is None:
            reports = _sweep_reports(settings, configs)
        table_rows = []
        segment_lines = [f"# {seeds_header}"]
        segment_lines.append("arch,n_ues,segment,value_ms,config_hash")
        presets = [p for p in ARCHITECTURES.values() for _ in n_list]
        for preset, rep in zip(presets, reports):
            breakdown = compose_rtt(rep, server, preset)
            for label, adv in advances.items():
                table_rows.append(
                    (breakdown, feasibility(breakdown.rtt_ms, adv, label))
                )
            for segment, value in (
                ("t_5g_nr_ms", breakdown.t_5g_nr_ms),
                ("t_p_s_ms", breakdown.t_p_s_ms),
                ("t_a_ms", breakdown.t_a_ms),
            ):
                segment_lines.append(
                    f"{preset.arch_id},{breakdown.n_ues},{segment},{value!r},"
                    f"{rep.config_hash}"
                )
        path = os.path.join(out_dir, "fig5_feasibility.csv")
        atomic_write_text(
            path, feasibility_table_csv(table_rows, header_lines=[seeds_header])
        )
        atomic_write_text(
            os.path.join(out_dir, "fig5_segments.csv"),
            "\n".join(segment_lines) + "\n",
        )
        return path

    raise ConfigurationError(f"unknown figure {figure!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = merge_settings(args)
        if args.n_ues is not None:
            settings["_n_overridden"] = True
        if args.figure:
            path = emit_plot_data(settings, args.figure)
            print(f"wrote {path}")
            return 0
        return run_single(settings, args.transactions_csv, args.grant_log)
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except AssertionError as exc:
        print(f"simulation invariant violation: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
