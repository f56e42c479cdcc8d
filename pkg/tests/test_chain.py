import pytest

from nrrulsim.chain import (
    ARCHITECTURES,
    ServerModel,
    Verdict,
    compose_rtt,
    feasibility,
    feasibility_table_csv,
    t_p_s,
)
from nrrulsim.channel import calibrate
from nrrulsim.engine import TrafficConfig, run_campaign
from nrrulsim.phy import ConfigurationError


class TestPresets:
    def test_published_settings(self):
        assert (ARCHITECTURES[1].bandwidth_hz, ARCHITECTURES[1].scs_khz) == (5e6, 30)
        assert ARCHITECTURES[1].t_cn_ms == 7.0
        assert ARCHITECTURES[2].t_cn_ms == 2.0
        assert (ARCHITECTURES[3].bandwidth_hz, ARCHITECTURES[3].scs_khz) == (100e6, 120)
        assert ARCHITECTURES[3].mod_order == 64
        assert ARCHITECTURES[3].t_cn_ms == 2.0
        assert ARCHITECTURES[4].t_cn_ms == 1.0

    def test_radio_config_construction(self):
        radio = ARCHITECTURES[4].radio_config()
        assert radio.mod_order == 64
        assert radio.numerology.scs_khz == 120


class TestServerTiming:
    def test_anchor_endpoints(self):
        assert t_p_s(1) == pytest.approx(1.2)
        assert t_p_s(50) == pytest.approx(119.2)

    def test_midpoint_interpolation(self):
        # 1.2 + 118 * 24 / 49, straight line between the measured endpoints
        assert t_p_s(25) == pytest.approx(1.2 + 118.0 * 24.0 / 49.0)

    def test_no_extrapolation(self):
        with pytest.raises(ConfigurationError):
            t_p_s(0)
        with pytest.raises(ConfigurationError):
            t_p_s(51)

    def test_custom_anchor_table(self):
        model = ServerModel(anchors=((1, 10.0), (10, 20.0), (100, 120.0)))
        assert t_p_s(5, model) == pytest.approx(10 + 10 * 4 / 9)
        assert t_p_s(55, model) == pytest.approx(20 + 100 * 45 / 90)

    def test_anchor_validation(self):
        with pytest.raises(ConfigurationError):
            ServerModel(anchors=((1, 1.2),))
        with pytest.raises(ConfigurationError):
            ServerModel(anchors=((1, 5.0), (10, 4.0)))
        with pytest.raises(ConfigurationError):
            ServerModel(anchors=((10, 1.0), (1, 2.0)))
        with pytest.raises(ConfigurationError):
            ServerModel(t_a_ms=-1.0)


def small_report(preset, n_ues, seeds=(1, 2), sim_s=2.0):
    chan = calibrate(0.01)
    traffic = TrafficConfig(n_ues=n_ues, sim_time_s=sim_s, p_dl=0.5,
                            n_replications=len(seeds))
    return run_campaign(
        preset.radio_config(), traffic, chan, seeds=seeds, t_cn_ms=preset.t_cn_ms
    )


class TestComposeRtt:
    def test_additive_terms(self):
        report = small_report(ARCHITECTURES[4], 1)
        server = ServerModel(t_a_ms=200.0)
        breakdown = compose_rtt(report, server, ARCHITECTURES[4])
        assert breakdown.rtt_ms == pytest.approx(
            breakdown.t_p_s_ms + breakdown.t_5g_nr_ms + breakdown.t_a_ms
        )
        assert breakdown.t_p_s_ms == pytest.approx(1.2)
        assert breakdown.t_a_ms == 200.0

    def test_published_arithmetic_example(self):
        # 10 ms radio chain + 1.2 ms server + 200 ms actuation
        report = small_report(ARCHITECTURES[4], 1)
        report.mean_t_5g_nr_ms = 10.0
        breakdown = compose_rtt(report, ServerModel(), ARCHITECTURES[4])
        assert breakdown.rtt_ms == pytest.approx(211.2)

    def test_degenerate_all_zero(self):
        report = small_report(ARCHITECTURES[4], 1)
        report.mean_t_5g_nr_ms = 0.0
        server = ServerModel(anchors=((1, 0.0), (50, 1e-9)), t_a_ms=0.0)
        assert compose_rtt(report, server, ARCHITECTURES[4]).rtt_ms == 0.0

    def test_mismatched_preset_rejected(self):
        report = small_report(ARCHITECTURES[4], 1)
        with pytest.raises(ConfigurationError):
            compose_rtt(report, ServerModel(), ARCHITECTURES[1])

    def test_architecture_ordering_with_shared_seeds(self):
        # only the core delay separates 1 from 2 and 3 from 4; wider grids
        # separate the pairs
        seeds = (3, 4, 5)
        rtts, cis = {}, {}
        for arch_id, preset in ARCHITECTURES.items():
            report = small_report(preset, 5, seeds=seeds, sim_s=3.0)
            breakdown = compose_rtt(report, ServerModel(), preset)
            rtts[arch_id] = breakdown.rtt_ms
            cis[arch_id] = breakdown.ci90_ms
        # ordering within confidence-interval overlap (end-of-run truncation
        # makes the transaction sets differ slightly between core delays)
        for slow, fast in ((1, 2), (2, 3), (3, 4)):
            assert rtts[fast] <= rtts[slow] + cis[fast] + cis[slow]
        # the core delay enters twice per loop
        assert rtts[3] == pytest.approx(rtts[4] + 2.0, abs=0.5)
        assert rtts[1] == pytest.approx(rtts[2] + 10.0, abs=0.5)


class TestFeasibility:
    def test_comfortable_margin(self):
        verdict = feasibility(230.0, 0.27)
        assert verdict.feasible and verdict.slack_ms == pytest.approx(40.0)

    def test_margin_switch_restores_feasibility(self):
        tight = feasibility(300.0, 0.27)
        relaxed = feasibility(300.0, 0.80)
        assert not tight.feasible
        assert relaxed.feasible and relaxed.slack_ms == pytest.approx(500.0)

    def test_equality_is_infeasible(self):
        verdict = feasibility(270.0, 0.27)
        assert not verdict.feasible
        assert verdict.slack_ms == pytest.approx(0.0)

    def test_monotone_in_both_arguments(self):
        base = feasibility(250.0, 0.27)
        assert base.feasible
        assert feasibility(240.0, 0.27).feasible  # faster network stays green
        assert feasibility(250.0, 0.30).feasible  # more warning stays green
        # tightening either side can only flip green -> red, never back
        assert not feasibility(280.0, 0.27).feasible
        assert not feasibility(250.0, 0.20).feasible

    def test_required_slack(self):
        verdict = feasibility(250.0, 0.27, required_slack_ms=30.0)
        assert not verdict.feasible
        assert feasibility(230.0, 0.27, required_slack_ms=30.0).feasible

    def test_table_rendering(self):
        report = small_report(ARCHITECTURES[4], 1)
        breakdown = compose_rtt(report, ServerModel(), ARCHITECTURES[4])
        verdict = feasibility(breakdown.rtt_ms, 0.27, "m5")
        text = feasibility_table_csv([(breakdown, verdict)], ["seeds=1,2"])
        lines = text.strip().split("\n")
        assert lines[0] == "# seeds=1,2"
        assert lines[1].startswith("arch,n_ues,t_5g_nr_ms")
        assert lines[2].split(",")[0] == "4"
        assert lines[2].endswith(("FEASIBLE", "INFEASIBLE"))
