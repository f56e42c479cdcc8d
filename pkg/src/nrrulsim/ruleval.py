"""Fault-prediction evaluation: margin labeling, cost, advance, calibration.

The prediction task is binary classification over regularly sampled motion
traces: the fault sample and the margin of samples right before it are the
positive class.  A detector (externally produced model scores or the raw
threshold baseline) is judged by an asymmetric cost (cheap false alarms,
escalating misses near the fault) and by how much advance warning the
first correct detection gives.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .engine import atomic_write_text

ACCEL_CHANNELS = ("ax", "ay", "az")
POSITION_CHANNELS = ("x", "y")
ORIENTATION_CHANNEL = "yaw"


class TrainingLeakError(RuntimeError):
    """Fitting touched series reserved for testing."""


@dataclass
class Series:
    """One recorded session: regular timestamps, channels, one fault.

    fault_idx is the 0-based position of the sample labeled as the fault
    event (the last sample of the labeled region).
    """

    series_id: str
    t_ms: np.ndarray
    features: dict
    fault_idx: int

    def __post_init__(self) -> None:
        self.t_ms = np.asarray(self.t_ms, dtype=float)
        if self.t_ms.ndim != 1 or self.t_ms.size < 2:
            raise ValueError("need at least two samples")
        steps = np.diff(self.t_ms)
        if not np.all(steps > 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.allclose(steps, steps[0]):
            raise ValueError("timestamps must be regularly spaced")
        if not 0 <= self.fault_idx < self.t_ms.size:
            raise ValueError("fault index out of bounds")
        for name, values in self.features.items():
            values = np.asarray(values, dtype=float)
            if values.shape != self.t_ms.shape:
                raise ValueError(f"channel {name!r} misaligned with timestamps")
            self.features[name] = values

    def __len__(self) -> int:
        return int(self.t_ms.size)

    @property
    def dt_ms(self) -> float:
        return float(self.t_ms[1] - self.t_ms[0])


@dataclass
class LabeledSeries:
    series: Series
    margin: int
    labels: np.ndarray  # True on the fault sample and the margin before it


def label_with_margin(series: Series, margin: int, include_fault: bool = True) -> LabeledSeries:
    """Mark the fault sample plus the `margin` samples before it as faulty.

    include_fault=False restricts the positive class to the margin samples
    alone (the alternative labeling convention, off by default).
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if margin >= series.fault_idx + 1:
        raise ValueError(
            f"margin {margin} leaves no healthy history before the fault "
            f"at position {series.fault_idx}"
        )
    labels = np.zeros(len(series), dtype=bool)
    start = series.fault_idx - margin
    end = series.fault_idx + 1 if include_fault else series.fault_idx
    labels[start:end] = True
    return LabeledSeries(series=series, margin=margin, labels=labels)


@dataclass(frozen=True)
class CostParams:
    c_fp: float = 0.2
    margin: int = 5

    def __post_init__(self) -> None:
        if self.c_fp <= 0:
            raise ValueError("false-positive cost must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")


def false_negative_cost(q_index_1based: int, fault_index_1based: int, margin: int) -> float:
    """Penalty for missing the faulty sample at 1-based position q.

    The penalty ramps up to `margin` at the fault itself.  The series
    length term of the published formula is the fault position; they are
    the same number in the recorded sessions, where the fault ends the
    series, and using the fault position keeps padded traces sane.
    """
    return margin - fault_index_1based + q_index_1based


def cost(predictions, labeled: list, params: CostParams) -> float:
    """Total cost of a prediction set over K labeled series."""
    if len(predictions) != len(labeled):
        raise ValueError("one prediction vector per series is required")
    total = 0.0
    for pred, ls in zip(predictions, labeled):
        pred = np.asarray(pred, dtype=bool)
        if pred.shape != ls.labels.shape:
            raise ValueError(
                f"prediction length {pred.size} does not match series "
                f"{ls.series.series_id} length {ls.labels.size}"
            )
        fp = np.count_nonzero(pred & ~ls.labels)
        total += params.c_fp * fp
        fault_1based = ls.series.fault_idx + 1
        fn_positions = np.nonzero(~pred & ls.labels)[0]
        for idx in fn_positions:
            total += false_negative_cost(int(idx) + 1, fault_1based, params.margin)
    return total


def first_detection(ls: LabeledSeries, prediction) -> int | None:
    """0-based index of the first correctly detected faulty sample."""
    pred = np.asarray(prediction, dtype=bool)
    hits = np.nonzero(pred & ls.labels)[0]
    return int(hits[0]) if hits.size else None


def advance(detection_idx: int, series: Series) -> float:
    """Warning time in seconds between a detection and the actual fault."""
    if detection_idx > series.fault_idx:
        raise ValueError("detection after the fault has no advance")
    return (series.fault_idx - detection_idx) * series.dt_ms / 1000.0


def mean_advance(advances) -> float:
    """Average advance over the series with at least one correct detection."""
    advances = list(advances)
    if not advances:
        raise ValueError("no correct detections: mean advance undefined")
    return float(np.mean(advances))


def optimize_threshold(scores, labeled: list, params: CostParams):
    """Exhaustive threshold sweep minimising the cost on a validation set.

    Candidates are every distinct score plus +inf (predict nothing);
    a sample is predicted faulty when score >= threshold.  Ties break
    toward the larger threshold, i.e. fewer positives.
    Returns (threshold, cost).
    """
    if len(scores) != len(labeled) or not labeled:
        raise ValueError("need aligned, non-empty scores and labels")
    all_scores = []
    fn_costs = []
    is_fault = []
    for s, ls in zip(scores, labeled):
        s = np.asarray(s, dtype=float)
        if s.shape != ls.labels.shape:
            raise ValueError("score series misaligned with its labels")
        all_scores.append(s)
        fault_1based = ls.series.fault_idx + 1
        q = np.arange(1, len(ls.series) + 1)
        fn_costs.append(
            np.where(ls.labels, params.margin - fault_1based + q, 0.0)
        )
        is_fault.append(ls.labels)
    flat_scores = np.concatenate(all_scores)
    flat_fn = np.concatenate(fn_costs)
    flat_fault = np.concatenate(is_fault)

    order = np.argsort(flat_scores, kind="stable")
    sorted_scores = flat_scores[order]
    sorted_fn = flat_fn[order]
    sorted_nonfault = (~flat_fault[order]).astype(float)

    # For threshold t: FN cost accrues on faulty samples with score < t,
    # FP cost on non-faulty samples with score >= t.
    cum_fn = np.concatenate(([0.0], np.cumsum(sorted_fn)))
    cum_nf = np.concatenate(([0.0], np.cumsum(sorted_nonfault)))
    total_nf = cum_nf[-1]

    candidates = np.concatenate((np.unique(sorted_scores), [np.inf]))
    best_threshold = math.inf
    best_cost = math.inf
    for t in candidates:
        below = int(np.searchsorted(sorted_scores, t, side="left"))
        c = float(cum_fn[below] + params.c_fp * (total_nf - cum_nf[below]))
        if c < best_cost or (c == best_cost and t > best_threshold):
            best_cost = c
            best_threshold = float(t)
    return best_threshold, best_cost


def binarize(scores, threshold: float):
    return [np.asarray(s, dtype=float) >= threshold for s in scores]


def baseline_detect(series: Series, raw_threshold: float, channel: str = "ax"):
    """Threshold detector straight over one raw data channel."""
    if channel not in series.features:
        raise KeyError(f"series {series.series_id} has no channel {channel!r}")
    return np.abs(series.features[channel]) >= raw_threshold


def calibrate_baseline(labeled: list, params: CostParams, channel: str = "ax"):
    """Pick the raw-magnitude threshold that minimises cost on these series."""
    scores = [np.abs(ls.series.features[channel]) for ls in labeled]
    return optimize_threshold(scores, labeled, params)


# -- preprocessing ------------------------------------------------------------


def preprocess(series: Series, window_lengths, channels=None) -> Series:
    """Append trailing-window statistics and first differences per channel.

    Windows that would reach before the first sample shrink to the
    available history.  Added channels are named
    `<ch>_w<L>_{mean,max,min,std}` and `<ch>_diff`.
    """
    channels = list(channels) if channels is not None else sorted(series.features)
    for length in window_lengths:
        if length < 2 or length > len(series):
            raise ValueError(f"window length {length} outside [2, {len(series)}]")
    out = dict(series.features)
    for ch in channels:
        x = series.features[ch]
        for length in window_lengths:
            mean = np.empty_like(x)
            maxi = np.empty_like(x)
            mini = np.empty_like(x)
            std = np.empty_like(x)
            for i in range(x.size):
                window = x[max(0, i - length + 1) : i + 1]
                mean[i] = window.mean()
                maxi[i] = window.max()
                mini[i] = window.min()
                std[i] = window.std()
            out[f"{ch}_w{length}_mean"] = mean
            out[f"{ch}_w{length}_max"] = maxi
            out[f"{ch}_w{length}_min"] = mini
            out[f"{ch}_w{length}_std"] = std
        diff = np.empty_like(x)
        diff[0] = 0.0
        diff[1:] = np.diff(x)
        out[f"{ch}_diff"] = diff
    return Series(series.series_id, series.t_ms.copy(), out, series.fault_idx)


@dataclass
class ContextDifferencer:
    """Removes the location/heading-dependent acceleration baseline.

    Bins positions and orientation on uniform grids fitted on training
    data, stores the per-context mean of each acceleration channel, and
    subtracts it sample by sample.  Contexts never seen in training fall
    back to the global mean.
    """

    pos_bins: int = 8
    yaw_bins: int = 8
    channels: tuple = ACCEL_CHANNELS
    _edges: dict = field(default_factory=dict, repr=False)
    _context_means: dict = field(default_factory=dict, repr=False)
    _global_means: dict = field(default_factory=dict, repr=False)

    def fit(self, train: list) -> "ContextDifferencer":
        if not train:
            raise ValueError("context means need at least one training series")
        for name, bins in (("x", self.pos_bins), ("y", self.pos_bins),
                           (ORIENTATION_CHANNEL, self.yaw_bins)):
            values = np.concatenate([s.features[name] for s in train])
            lo, hi = float(values.min()), float(values.max())
            if hi <= lo:
                hi = lo + 1.0
            self._edges[name] = np.linspace(lo, hi, bins + 1)[1:-1]
        keys = [self._context_keys(s) for s in train]
        for ch in self.channels:
            values = np.concatenate([s.features[ch] for s in train])
            flat_keys = np.concatenate(keys)
            sums: dict = {}
            counts: dict = {}
            for key, value in zip(flat_keys, values):
                sums[key] = sums.get(key, 0.0) + value
                counts[key] = counts.get(key, 0) + 1
            self._context_means[ch] = {k: sums[k] / counts[k] for k in sums}
            self._global_means[ch] = float(values.mean())
        return self

    def _context_keys(self, series: Series) -> np.ndarray:
        ix = np.digitize(series.features["x"], self._edges["x"])
        iy = np.digitize(series.features["y"], self._edges["y"])
        iyaw = np.digitize(series.features[ORIENTATION_CHANNEL],
                           self._edges[ORIENTATION_CHANNEL])
        # single integer key per (position cell, orientation bin)
        return (ix * (self.pos_bins * self.yaw_bins) + iy * self.yaw_bins + iyaw)

    def transform(self, series: Series) -> Series:
        if not self._context_means:
            raise ValueError("fit the context table before transforming")
        keys = self._context_keys(series)
        out = dict(series.features)
        for ch in self.channels:
            table = self._context_means[ch]
            fallback = self._global_means[ch]
            baseline = np.array([table.get(k, fallback) for k in keys])
            out[ch] = series.features[ch] - baseline
        return Series(series.series_id, series.t_ms.copy(), out, series.fault_idx)


@dataclass
class Standardizer:
    """Z-scores every feature with training-set statistics.

    Features that are constant on the training set carry no information
    and break the scaling; they are dropped and reported.
    """

    _mean: dict = field(default_factory=dict, repr=False)
    _std: dict = field(default_factory=dict, repr=False)
    dropped: list = field(default_factory=list)

    def fit(self, train: list) -> "Standardizer":
        if not train:
            raise ValueError("standardization needs training series")
        names = sorted(train[0].features)
        for name in names:
            values = np.concatenate([s.features[name] for s in train])
            std = float(values.std())
            if std <= 0.0:
                self.dropped.append(name)
                continue
            self._mean[name] = float(values.mean())
            self._std[name] = std
        return self

    def transform(self, series: Series) -> Series:
        out = {}
        for name, values in series.features.items():
            if name in self.dropped:
                continue
            if name not in self._mean:
                raise KeyError(f"feature {name!r} was not fitted")
            out[name] = (values - self._mean[name]) / self._std[name]
        return Series(series.series_id, series.t_ms.copy(), out, series.fault_idx)


def class_weights(labeled: list) -> tuple[float, float]:
    """(non-fault, fault) weights: total / (2 * class count)."""
    n_fault = sum(int(ls.labels.sum()) for ls in labeled)
    n_total = sum(ls.labels.size for ls in labeled)
    n_nonfault = n_total - n_fault
    if n_fault == 0 or n_nonfault == 0:
        raise ValueError("both classes must be present to weight them")
    return n_total / (2.0 * n_nonfault), n_total / (2.0 * n_fault)


# -- fold handling ------------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    """Four-way series split: model training, model validation, threshold
    validation, held-out test."""

    train: tuple
    val_model: tuple
    val_threshold: tuple
    test: tuple

    def check_fit_allowed(self, series_ids, purpose: str) -> None:
        """Trip if a fit-time computation touches held-out test series."""
        leaked = sorted(set(series_ids) & set(self.test))
        if leaked:
            raise TrainingLeakError(
                f"{purpose} touched test series {leaked}: training-derived "
                "statistics must only use training/validation folds"
            )


def split_folds(series_ids, ratios=(0.5, 0.15, 0.15, 0.2), seed: int = 0) -> FoldSplit:
    if len(ratios) != 4 or not math.isclose(sum(ratios), 1.0):
        raise ValueError("need four ratios summing to 1")
    ids = list(series_ids)
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    n = len(ids)
    c1 = int(round(ratios[0] * n))
    c2 = c1 + int(round(ratios[1] * n))
    c3 = c2 + int(round(ratios[2] * n))
    return FoldSplit(
        train=tuple(ids[:c1]),
        val_model=tuple(ids[c1:c2]),
        val_threshold=tuple(ids[c2:c3]),
        test=tuple(ids[c3:]),
    )


# -- synthetic corpus ---------------------------------------------------------


@dataclass(frozen=True)
class FaultSignature:
    """Shape of the pre-fault transient injected into synthetic traces.

    Besides smooth background noise, raw accelerations carry occasional
    impulsive shocks (spike_rate per sample) such as a real vehicle picks
    up from floor joints; they punish naive raw-value thresholding.
    """

    transient_samples: int = 14
    amplitude: float = 1.0
    noise_sigma: float = 0.5
    smoothing: int = 5
    spike_rate: float = 0.10
    spike_amplitude: float = 1.2
    dt_ms: float = 100.0


def gen_synthetic_corpus(
    n_series: int, length: int, signature: FaultSignature, seed: int = 0
) -> list[Series]:
    """Deterministic stand-in corpus: smooth noise with a ramped jerk
    ending at the fault, which closes every series."""
    if length <= signature.transient_samples:
        raise ValueError("series must be longer than the fault transient")
    root = np.random.SeedSequence(seed)
    corpus = []
    for idx, child in enumerate(root.spawn(n_series)):
        rng = np.random.default_rng(child)
        t_ms = np.arange(length) * signature.dt_ms
        features = {}
        kernel = np.ones(signature.smoothing) / signature.smoothing
        for ch in ACCEL_CHANNELS:
            noise = rng.normal(0.0, signature.noise_sigma, length + signature.smoothing)
            smooth = np.convolve(noise, kernel, mode="same")[:length]
            # floor-joint shocks: a jolt and its recoil in consecutive
            # samples (zero net impulse), large in the raw trace but nearly
            # invisible to trailing-window averages
            shocks = np.zeros(length)
            hit = np.nonzero(rng.random(length - 1) < signature.spike_rate)[0]
            jolt = rng.normal(0.0, signature.spike_amplitude, hit.size)
            shocks[hit] += jolt
            shocks[hit + 1] -= jolt
            features[ch] = smooth + shocks
        ramp = np.linspace(
            1.0 / signature.transient_samples, 1.0, signature.transient_samples
        )
        features["ax"] = features["ax"].copy()
        features["ax"][length - signature.transient_samples :] += (
            signature.amplitude * ramp
        )
        features["x"] = np.cumsum(rng.normal(0.0, 0.05, length)) + rng.uniform(0, 10)
        features["y"] = np.cumsum(rng.normal(0.0, 0.05, length)) + rng.uniform(0, 10)
        features[ORIENTATION_CHANNEL] = np.cumsum(rng.normal(0.0, 0.02, length))
        corpus.append(Series(f"s{idx:03d}", t_ms, features, fault_idx=length - 1))
    return corpus


# -- artefact input/output ----------------------------------------------------

CORPUS_COLUMNS = ("series_id", "t_ms", "ax", "ay", "az", "x", "y", "yaw", "is_fault")


def write_corpus_csv(path: str, corpus: list) -> None:
    lines = [",".join(CORPUS_COLUMNS)]
    for series in corpus:
        for i in range(len(series)):
            row = [series.series_id, repr(float(series.t_ms[i]))]
            for ch in CORPUS_COLUMNS[2:-1]:
                row.append(repr(float(series.features[ch][i])))
            row.append("1" if i == series.fault_idx else "0")
            lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_corpus_csv(path: str) -> list[Series]:
    groups: dict = {}
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            groups.setdefault(row["series_id"], []).append(row)
    corpus = []
    for sid, rows in groups.items():
        t_ms = np.array([float(r["t_ms"]) for r in rows])
        features = {
            ch: np.array([float(r[ch]) for r in rows]) for ch in CORPUS_COLUMNS[2:-1]
        }
        fault_rows = [i for i, r in enumerate(rows) if r["is_fault"] == "1"]
        if len(fault_rows) != 1:
            raise ValueError(f"series {sid} must mark exactly one fault sample")
        corpus.append(Series(sid, t_ms, features, fault_idx=fault_rows[0]))
    return corpus


def read_scores_csv(path: str) -> dict:
    """Maps series_id -> score array, aligned by row order within a series."""
    groups: dict = {}
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            groups.setdefault(row["series_id"], []).append(float(row["score"]))
    return {sid: np.array(vals) for sid, vals in groups.items()}


def metrics_report_json(
    threshold: float, total_cost: float, advances: dict, mean_advance_s: float
) -> str:
    payload = {
        "threshold": threshold,
        "cost": total_cost,
        "mean_advance_s": mean_advance_s,
        "first_detections": advances,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def evaluate_scores(
    scores_by_id: dict,
    labeled: list,
    params: CostParams,
    threshold: float,
):
    """Apply a calibrated threshold to per-series scores on evaluation data.

    Returns (cost, mean_advance_s, first_detection_by_id); series with no
    correct detection contribute nothing to the advance average.
    """
    ordered_scores = []
    for ls in labeled:
        sid = ls.series.series_id
        if sid not in scores_by_id:
            raise KeyError(f"no scores for series {sid}")
        ordered_scores.append(scores_by_id[sid])
    predictions = binarize(ordered_scores, threshold)
    total_cost = cost(predictions, labeled, params)
    detections = {}
    advances = []
    for ls, pred in zip(labeled, predictions):
        idx = first_detection(ls, pred)
        detections[ls.series.series_id] = idx
        if idx is not None:
            advances.append(advance(idx, ls.series))
    mean_adv = mean_advance(advances) if advances else math.nan
    return total_cost, mean_adv, detections
