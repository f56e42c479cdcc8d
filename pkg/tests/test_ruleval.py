import itertools
import json
import math

import numpy as np
import pytest

from nrrulsim import ruleval as rv


# -- independent oracles ------------------------------------------------------
# Deliberate re-implementations from the definitions, kept free of any code
# shared with the module under test.


def oracle_cost(predictions, labeled, c_fp, margin):
    """Per-sample summation: 0.2 per false alarm, (margin - F + q) per miss."""
    total = 0.0
    for pred, ls in zip(predictions, labeled):
        fault_1based = ls.series.fault_idx + 1
        for i in range(len(pred)):
            q = i + 1
            if pred[i] and not ls.labels[i]:
                total += c_fp
            elif not pred[i] and ls.labels[i]:
                total += margin - fault_1based + q
    return total


def oracle_best_threshold(scores, labeled, params):
    """Dense sweep: all observed scores, midpoints between neighbours, +inf."""
    values = np.sort(np.unique(np.concatenate([np.asarray(s) for s in scores])))
    candidates = list(values) + [
        (a + b) / 2 for a, b in zip(values, values[1:])
    ] + [math.inf]
    best_cost, best_t = math.inf, math.inf
    for t in sorted(candidates):
        preds = [np.asarray(s) >= t for s in scores]
        c = oracle_cost(preds, labeled, params.c_fp, params.margin)
        if c < best_cost or (c == best_cost and t > best_t):
            best_cost, best_t = c, t
    return best_t, best_cost


def make_series(n, fault_idx, values=None, dt_ms=100.0, sid="s"):
    values = np.zeros(n) if values is None else np.asarray(values, float)
    return rv.Series(sid, np.arange(n) * dt_ms, {"ax": values}, fault_idx)


class TestLabeling:
    def test_margin_window(self):
        ls = rv.label_with_margin(make_series(20, 19), 5)
        assert np.array_equal(np.nonzero(ls.labels)[0], np.arange(14, 20))

    def test_zero_margin_marks_only_fault(self):
        ls = rv.label_with_margin(make_series(20, 19), 0)
        assert np.array_equal(np.nonzero(ls.labels)[0], [19])

    def test_margin_swallowing_history_rejected(self):
        with pytest.raises(ValueError):
            rv.label_with_margin(make_series(20, 19), 20)

    def test_exclusive_fault_switch(self):
        ls = rv.label_with_margin(make_series(20, 19), 3, include_fault=False)
        assert np.array_equal(np.nonzero(ls.labels)[0], np.arange(16, 19))

    def test_series_validation(self):
        with pytest.raises(ValueError):
            rv.Series("bad", np.array([0.0, 100.0, 150.0]), {"ax": np.zeros(3)}, 2)
        with pytest.raises(ValueError):
            rv.Series("bad", np.array([0.0, 100.0]), {"ax": np.zeros(3)}, 1)


class TestCost:
    def test_perfect_predictions_cost_nothing(self):
        ls = rv.label_with_margin(make_series(20, 19), 5)
        assert rv.cost([ls.labels.copy()], [ls], rv.CostParams(margin=5)) == 0.0

    def test_single_miss_at_the_fault(self):
        ls = rv.label_with_margin(make_series(20, 19), 5)
        pred = ls.labels.copy()
        pred[19] = False  # q = 20, |S| = 20, margin 5 -> cost 5
        assert rv.cost([pred], [ls], rv.CostParams(margin=5)) == 5.0

    def test_mixed_miss_and_alarms(self):
        ls = rv.label_with_margin(make_series(20, 19), 5)
        pred = ls.labels.copy()
        pred[15] = False  # q = 16 -> cost 1
        pred[[0, 1, 2]] = True  # three false alarms at 0.2
        assert rv.cost([pred], [ls], rv.CostParams(margin=5)) == pytest.approx(1.6)

    def test_misaligned_predictions_rejected(self):
        ls = rv.label_with_margin(make_series(20, 19), 5)
        with pytest.raises(ValueError):
            rv.cost([np.zeros(19, bool)], [ls], rv.CostParams(margin=5))

    def test_exhaustive_small_series_match_oracle(self):
        rng = np.random.default_rng(8)
        params = rv.CostParams(margin=3)
        for n in range(4, 9):
            fault = int(rng.integers(3, n))
            ls = rv.label_with_margin(make_series(n, fault), 3)
            for bits in itertools.product([False, True], repeat=n):
                pred = np.array(bits)
                assert rv.cost([pred], [ls], params) == pytest.approx(
                    oracle_cost([pred], [ls], 0.2, 3)
                )

    def test_decomposes_into_fp_and_fn_parts(self):
        rng = np.random.default_rng(9)
        params = rv.CostParams(margin=4)
        ls = rv.label_with_margin(make_series(15, 14), 4)
        for _ in range(30):
            pred = rng.random(15) < 0.5
            combined = rv.cost([pred], [ls], params)
            # forgiving all misses leaves the false-alarm part; removing all
            # false alarms leaves the miss part; the two halves add up
            fp_part = rv.cost([pred | ls.labels], [ls], params)
            fn_part = rv.cost([pred & ls.labels], [ls], params)
            assert combined == pytest.approx(fp_part + fn_part)
            # adding one false alarm adds exactly 0.2
            clear = np.nonzero(~pred & ~ls.labels)[0]
            if clear.size:
                bumped = pred.copy()
                bumped[clear[0]] = True
                assert rv.cost([bumped], [ls], params) == pytest.approx(combined + 0.2)


class TestAdvance:
    def test_detection_at_fault_gives_zero(self):
        s = make_series(20, 19)
        assert rv.advance(19, s) == 0.0

    def test_five_samples_early_at_ten_hertz(self):
        s = make_series(20, 19, dt_ms=100.0)
        assert rv.advance(14, s) == pytest.approx(0.5)

    def test_earliest_detection_bounds_advance(self):
        s = make_series(20, 19)
        m = 7
        ls = rv.label_with_margin(s, m)
        first_labeled = np.nonzero(ls.labels)[0][0]
        assert rv.advance(int(first_labeled), s) == pytest.approx(m * s.dt_ms / 1000)

    def test_detection_after_fault_rejected(self):
        with pytest.raises(ValueError):
            rv.advance(20, make_series(25, 19))

    def test_mean_advance(self):
        assert rv.mean_advance([0.3, 0.3, 0.3]) == pytest.approx(0.3)
        assert rv.mean_advance([0.2, 0.4]) == pytest.approx(0.3)
        with pytest.raises(ValueError):
            rv.mean_advance([])

    def test_invariant_under_time_shift_and_linear_in_dt(self):
        base = make_series(30, 29, dt_ms=100.0)
        shifted = rv.Series("sh", base.t_ms + 5000.0, dict(base.features), 29)
        stretched = make_series(30, 29, dt_ms=200.0)
        assert rv.advance(24, base) == rv.advance(24, shifted)
        assert rv.advance(24, stretched) == pytest.approx(2 * rv.advance(24, base))


class TestThreshold:
    def test_separable_scores_reach_zero_cost(self):
        ls = rv.label_with_margin(make_series(10, 9), 4)
        scores = np.where(ls.labels, 0.9, 0.1)
        t, c = rv.optimize_threshold([scores], [ls], rv.CostParams(margin=4))
        assert c == 0.0
        assert 0.1 < t <= 0.9

    def test_two_sample_sweep_by_hand(self):
        ls = rv.label_with_margin(make_series(2, 1), 1)
        t, c = rv.optimize_threshold(
            [np.array([0.1, 0.9])], [ls], rv.CostParams(margin=1)
        )
        assert (t, c) == (0.9, 0.0)

    def test_ties_break_toward_fewer_positives(self):
        # all-healthy series: every threshold that silences the detector is
        # optimal; +inf must win
        s = make_series(6, 5, values=[1, 2, 3, 4, 5, 6])
        ls = rv.label_with_margin(s, 0)
        pred_free = rv.CostParams(margin=0)
        t, c = rv.optimize_threshold([s.features["ax"]], [ls], pred_free)
        assert t == math.inf
        assert c == 0.0

    def test_matches_dense_grid_oracle(self):
        rng = np.random.default_rng(10)
        params = rv.CostParams(margin=4)
        for _ in range(25):
            labeled, scores = [], []
            for k in range(3):
                n = int(rng.integers(8, 14))
                s = make_series(n, int(rng.integers(4, n)), sid=f"s{k}")
                labeled.append(rv.label_with_margin(s, 4))
                scores.append(np.round(rng.random(n), 2))
            t_mine, c_mine = rv.optimize_threshold(scores, labeled, params)
            t_oracle, c_oracle = oracle_best_threshold(scores, labeled, params)
            assert c_mine == pytest.approx(c_oracle)
            got = oracle_cost([np.asarray(s) >= t_mine for s in scores],
                              labeled, params.c_fp, params.margin)
            assert got == pytest.approx(c_oracle)


class TestBaseline:
    def test_threshold_above_everything_silences(self):
        s = make_series(10, 9, values=np.linspace(-1, 1, 10))
        assert not rv.baseline_detect(s, 2.0).any()

    def test_zero_threshold_fires_everywhere(self):
        s = make_series(10, 9, values=np.linspace(-1, 1, 10))
        assert rv.baseline_detect(s, 0.0).all()

    def test_missing_channel_rejected(self):
        with pytest.raises(KeyError):
            rv.baseline_detect(make_series(10, 9), 1.0, channel="gyro")


class TestPreprocess:
    def test_constant_series_has_flat_derived_features(self):
        s = make_series(12, 11, values=np.full(12, 3.0))
        out = rv.preprocess(s, [4], channels=["ax"])
        assert np.allclose(out.features["ax_w4_std"], 0.0)
        assert np.allclose(out.features["ax_diff"], 0.0)
        assert np.allclose(out.features["ax_w4_mean"], 3.0)

    def test_trailing_mean_of_ramp(self):
        s = make_series(10, 9, values=np.arange(10, dtype=float))
        out = rv.preprocess(s, [3], channels=["ax"])
        mean = out.features["ax_w3_mean"]
        assert mean[0] == 0.0  # partial window: only sample 0
        assert mean[1] == 0.5
        assert np.allclose(mean[2:], np.arange(2, 10) - 1.0)

    def test_order_statistics_sandwich_the_mean(self):
        rng = np.random.default_rng(12)
        s = make_series(40, 39, values=rng.normal(size=40))
        out = rv.preprocess(s, [2, 5], channels=["ax"])
        for length in (2, 5):
            lo = out.features[f"ax_w{length}_min"]
            mid = out.features[f"ax_w{length}_mean"]
            hi = out.features[f"ax_w{length}_max"]
            assert np.all(lo <= mid + 1e-12) and np.all(mid <= hi + 1e-12)

    def test_bad_window_rejected(self):
        s = make_series(10, 9)
        for length in (1, 11):
            with pytest.raises(ValueError):
                rv.preprocess(s, [length])


class TestContextDifferencing:
    @staticmethod
    def series_at(sid, x, yaw, accel):
        n = len(accel)
        feats = {
            "ax": np.asarray(accel, float),
            "ay": np.zeros(n),
            "az": np.zeros(n),
            "x": np.full(n, float(x)),
            "y": np.zeros(n),
            "yaw": np.full(n, float(yaw)),
        }
        return rv.Series(sid, np.arange(n) * 100.0, feats, n - 1)

    def test_single_context_centres_output(self):
        train = [self.series_at("a", 0.0, 0.0, np.full(50, 2.5))]
        diff = rv.ContextDifferencer().fit(train)
        out = diff.transform(train[0])
        assert abs(out.features["ax"].mean()) < 1e-9

    def test_two_contexts_centred_separately(self):
        a = self.series_at("a", 0.0, 0.0, np.full(50, 1.0))
        b = self.series_at("b", 9.0, 3.0, np.full(50, -1.0))
        diff = rv.ContextDifferencer().fit([a, b])
        assert abs(diff.transform(a).features["ax"].mean()) < 1e-9
        assert abs(diff.transform(b).features["ax"].mean()) < 1e-9

    def test_idempotent_once_centred(self):
        rng = np.random.default_rng(13)
        train = [
            self.series_at(f"s{i}", i % 3, (i * 0.7) % 2, rng.normal(1.0, 0.2, 60))
            for i in range(6)
        ]
        diff = rv.ContextDifferencer().fit(train)
        centred = [diff.transform(s) for s in train]
        diff2 = rv.ContextDifferencer().fit(centred)
        twice = diff2.transform(centred[0])
        assert np.allclose(twice.features["ax"], centred[0].features["ax"], atol=1e-9)

    def test_unseen_context_falls_back_to_global_mean(self):
        train = [self.series_at("a", 0.0, 0.0, np.full(50, 2.0))]
        diff = rv.ContextDifferencer().fit(train)
        probe = self.series_at("p", 99.0, 9.0, np.full(10, 2.0))
        out = diff.transform(probe)
        assert np.allclose(out.features["ax"], 0.0)

    def test_requires_training_data(self):
        with pytest.raises(ValueError):
            rv.ContextDifferencer().fit([])


class TestStandardize:
    def test_training_set_becomes_unit_scale(self):
        rng = np.random.default_rng(14)
        train = [make_series(80, 79, values=rng.normal(3.0, 2.5, 80), sid=f"s{i}")
                 for i in range(4)]
        std = rv.Standardizer().fit(train)
        stacked = np.concatenate([std.transform(s).features["ax"] for s in train])
        assert abs(stacked.mean()) < 1e-9
        assert abs(stacked.std() - 1.0) < 1e-9

    def test_constant_feature_dropped_with_notice(self):
        s = make_series(10, 9, values=np.zeros(10))
        s.features["flat"] = np.full(10, 7.0)
        s.features["ax"] = np.arange(10.0)
        std = rv.Standardizer().fit([s])
        assert std.dropped == ["flat"]
        assert "flat" not in std.transform(s).features

    def test_affine_inputs_standardize_identically(self):
        rng = np.random.default_rng(15)
        raw = rng.normal(size=60)
        a = make_series(60, 59, values=raw, sid="a")
        b = make_series(60, 59, values=3.0 * raw + 11.0, sid="b")
        za = rv.Standardizer().fit([a]).transform(a).features["ax"]
        zb = rv.Standardizer().fit([b]).transform(b).features["ax"]
        assert np.allclose(za, zb)


class TestClassWeights:
    def test_balanced(self):
        s = make_series(10, 9)
        ls = rv.label_with_margin(s, 4)  # 5 fault, 5 healthy
        assert rv.class_weights([ls]) == (1.0, 1.0)

    def test_ninety_ten_split(self):
        s = make_series(100, 99)
        ls = rv.label_with_margin(s, 9)  # 10 fault samples
        w_nf, w_f = rv.class_weights([ls])
        assert w_nf == pytest.approx(100 / 180)
        assert w_f == pytest.approx(5.0)
        # weighted sample mass matches across classes
        assert w_nf * 90 == pytest.approx(w_f * 10)

    def test_missing_class_rejected(self):
        s = make_series(10, 9)
        ls = rv.label_with_margin(s, 4)
        ls.labels[:] = False
        with pytest.raises(ValueError):
            rv.class_weights([ls])


class TestFolds:
    def test_ratio_sizes(self):
        folds = rv.split_folds([f"s{i}" for i in range(40)], seed=2)
        sizes = tuple(len(f) for f in (folds.train, folds.val_model,
                                       folds.val_threshold, folds.test))
        assert sizes == (20, 6, 6, 8)
        everything = set(folds.train) | set(folds.val_model) \
            | set(folds.val_threshold) | set(folds.test)
        assert len(everything) == 40

    def test_leak_guard_trips_on_test_access(self):
        folds = rv.split_folds([f"s{i}" for i in range(10)], seed=2)
        with pytest.raises(rv.TrainingLeakError):
            folds.check_fit_allowed([folds.test[0]], "threshold search")
        folds.check_fit_allowed(list(folds.train), "context means")

    def test_bad_ratios_rejected(self):
        with pytest.raises(ValueError):
            rv.split_folds(["a"], ratios=(0.5, 0.5, 0.5, 0.5))


class TestSyntheticCorpus:
    def test_deterministic(self):
        a = rv.gen_synthetic_corpus(5, 60, rv.FaultSignature(), seed=3)
        b = rv.gen_synthetic_corpus(5, 60, rv.FaultSignature(), seed=3)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.features["ax"], sb.features["ax"])
            assert sa.fault_idx == sb.fault_idx == 59

    def test_length_must_exceed_transient(self):
        with pytest.raises(ValueError):
            rv.gen_synthetic_corpus(2, 10, rv.FaultSignature(transient_samples=10), 1)

    def test_flat_signature_gives_baseline_nothing(self):
        # without a transient the calibrated raw detector cannot beat the
        # do-nothing cost by any real margin
        sig = rv.FaultSignature(amplitude=0.0)
        corpus = rv.gen_synthetic_corpus(24, 120, sig, seed=11)
        folds = rv.split_folds([s.series_id for s in corpus], seed=1)
        by_id = {s.series_id: s for s in corpus}
        params = rv.CostParams(margin=5)
        lab_val = [rv.label_with_margin(by_id[i], 5) for i in folds.val_threshold]
        lab_test = [rv.label_with_margin(by_id[i], 5) for i in folds.test]
        t, _ = rv.calibrate_baseline(lab_val, params)
        got = rv.cost(
            [rv.baseline_detect(ls.series, t) for ls in lab_test], lab_test, params
        )
        do_nothing = rv.cost(
            [np.zeros(len(ls.series), bool) for ls in lab_test], lab_test, params
        )
        assert got >= 0.9 * do_nothing

    def test_strong_transient_is_separable(self):
        sig = rv.FaultSignature(amplitude=12.0, noise_sigma=0.2, spike_rate=0.0)
        corpus = rv.gen_synthetic_corpus(12, 80, sig, seed=4)
        labeled = [rv.label_with_margin(s, 5) for s in corpus]
        t, c = rv.calibrate_baseline(labeled, rv.CostParams(margin=5))
        assert c == 0.0


@pytest.fixture(scope="module")
def corpus_setup():
    corpus = rv.gen_synthetic_corpus(48, 150, rv.FaultSignature(), seed=11)
    folds = rv.split_folds([s.series_id for s in corpus], seed=1)
    by_id = {s.series_id: s for s in corpus}
    return corpus, folds, by_id


class TestPipelineExperiments:
    """Deterministic corpus experiments mirroring the published comparison."""

    @staticmethod
    def pipeline_feature(series):
        return rv.preprocess(series, [10], channels=["ax"]).features["ax_w10_mean"]

    def evaluate(self, folds, by_id, margin):
        params = rv.CostParams(margin=margin)
        lab_val = [rv.label_with_margin(by_id[i], margin) for i in folds.val_threshold]
        lab_test = [rv.label_with_margin(by_id[i], margin) for i in folds.test]
        folds.check_fit_allowed(folds.val_threshold, "threshold search")
        t_base, _ = rv.calibrate_baseline(lab_val, params)
        base_cost = rv.cost(
            [rv.baseline_detect(ls.series, t_base) for ls in lab_test],
            lab_test,
            params,
        )
        t_pipe, _ = rv.optimize_threshold(
            [self.pipeline_feature(ls.series) for ls in lab_val], lab_val, params
        )
        preds = rv.binarize(
            [self.pipeline_feature(ls.series) for ls in lab_test], t_pipe
        )
        pipe_cost = rv.cost(preds, lab_test, params)
        advances = [
            rv.advance(i, ls.series)
            for ls, p in zip(lab_test, preds)
            if (i := rv.first_detection(ls, p)) is not None
        ]
        return base_cost, pipe_cost, rv.mean_advance(advances)

    def test_baseline_loses_to_windowed_feature(self, corpus_setup):
        _, folds, by_id = corpus_setup
        for margin in (5, 10):
            base_cost, pipe_cost, _ = self.evaluate(folds, by_id, margin)
            assert pipe_cost < base_cost

    def test_advance_grows_with_margin(self, corpus_setup):
        _, folds, by_id = corpus_setup
        advances = [self.evaluate(folds, by_id, m)[2] for m in (5, 10)]
        assert advances[0] < advances[1]


class TestArtifacts:
    def test_corpus_csv_round_trip(self, tmp_path):
        corpus = rv.gen_synthetic_corpus(3, 40, rv.FaultSignature(), seed=6)
        path = str(tmp_path / "corpus.csv")
        rv.write_corpus_csv(path, corpus)
        back = rv.read_corpus_csv(path)
        assert len(back) == 3
        for orig, re_read in zip(corpus, sorted(back, key=lambda s: s.series_id)):
            assert orig.series_id == re_read.series_id
            assert orig.fault_idx == re_read.fault_idx
            assert np.allclose(orig.features["ax"], re_read.features["ax"])

    def test_scores_csv_and_metrics_json(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text(
            "series_id,t_ms,score\ns0,0,0.1\ns0,100,0.9\ns1,0,0.4\n",
            encoding="utf-8",
        )
        scores = rv.read_scores_csv(str(path))
        assert set(scores) == {"s0", "s1"}
        assert np.allclose(scores["s0"], [0.1, 0.9])
        blob = rv.metrics_report_json(0.5, 12.4, {"s0": 3}, 0.3)
        payload = json.loads(blob)
        assert payload["threshold"] == 0.5
        assert payload["first_detections"] == {"s0": 3}

    def test_evaluate_scores_end_to_end(self):
        corpus = rv.gen_synthetic_corpus(4, 60, rv.FaultSignature(), seed=9)
        labeled = [rv.label_with_margin(s, 5) for s in corpus]
        scores = {s.series_id: s.features["ax"] for s in corpus}
        c, adv, detections = rv.evaluate_scores(
            scores, labeled, rv.CostParams(margin=5), threshold=0.5
        )
        assert c >= 0.0
        assert set(detections) == {s.series_id for s in corpus}

    def test_external_score_ingestion_workflow(self, tmp_path):
        # the full path an externally trained detector takes: corpus CSV in,
        # score CSV in, threshold calibrated on the validation fold only,
        # metrics JSON out
        corpus = rv.gen_synthetic_corpus(20, 80, rv.FaultSignature(), seed=21)
        corpus_path = str(tmp_path / "corpus.csv")
        rv.write_corpus_csv(corpus_path, corpus)
        loaded = {s.series_id: s for s in rv.read_corpus_csv(corpus_path)}

        # stand-in model: noisy trailing mean, dumped through the wire format
        lines = ["series_id,t_ms,score"]
        rng = np.random.default_rng(2)
        for s in corpus:
            feat = rv.preprocess(s, [8], channels=["ax"]).features["ax_w8_mean"]
            noisy = feat + rng.normal(0, 0.02, len(s))
            lines.extend(
                f"{s.series_id},{float(t)!r},{float(v)!r}"
                for t, v in zip(s.t_ms, noisy)
            )
        scores_path = tmp_path / "scores.csv"
        scores_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        scores = rv.read_scores_csv(str(scores_path))

        folds = rv.split_folds(sorted(loaded), seed=3)
        params = rv.CostParams(margin=5)
        folds.check_fit_allowed(folds.val_threshold, "threshold search")
        lab_val = [rv.label_with_margin(loaded[i], 5) for i in folds.val_threshold]
        threshold, _ = rv.optimize_threshold(
            [scores[ls.series.series_id] for ls in lab_val], lab_val, params
        )
        lab_test = [rv.label_with_margin(loaded[i], 5) for i in folds.test]
        c, adv, detections = rv.evaluate_scores(scores, lab_test, params, threshold)
        blob = rv.metrics_report_json(threshold, c, detections, adv)
        payload = json.loads(blob)
        assert payload["cost"] == c
        assert set(payload["first_detections"]) == set(folds.test)
        assert 0.0 <= payload["mean_advance_s"] <= 0.5  # within the margin span
