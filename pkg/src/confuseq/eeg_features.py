"""Overlapping windowing and the 16-feature-per-window extraction.

The per-window feature vector, in fixed column order:

    5 canonical band powers (delta, theta, alpha, beta, gamma)
    5 sub-band powers       (theta_sub, alpha1, alpha2, beta1, beta2)
    mean, std, excess kurtosis, skewness
    mean frequency (PSD-weighted centroid), peak frequency (PSD argmax)

Band powers integrate a Welch density estimate (1 s Hann segments, 50%
overlap); a constant window yields zeros everywhere except its mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EpochSet, FeatureBands, FeatureTable, WindowParams
from .dsp import band_weights, welch_psd_array
from .errors import DataError

N_FEATURES = 16
TIME_FREQ_NAMES = ("mean", "std", "kurtosis", "skewness", "mean_freq", "peak_freq")
WELCH_SEGMENT = 512
MIN_WINDOW_SAMPLES = 256


@dataclass(frozen=True)
class WindowPlan:
    length_samples: int
    hop_samples: int
    n_windows: int
    analysis_samples: int

    def __post_init__(self):
        if self.n_windows < 1:
            raise DataError("n_windows must be >= 1")
        if self.hop_samples < 1 or self.length_samples < 1:
            raise DataError("window length and hop must be positive")

    @classmethod
    def from_config(cls, window: WindowParams, sample_rate_hz: float) -> "WindowPlan":
        length = round(window.length_s * sample_rate_hz)
        hop = round(length * (1.0 - window.overlap))
        return cls(length_samples=length, hop_samples=hop,
                   n_windows=window.n_windows,
                   analysis_samples=round(window.analysis_duration_s * sample_rate_hz))


def plan_windows(epoch_len_samples: int, plan: WindowPlan) -> list[tuple[int, int]]:
    """Window (start, end) ranges: starts on the hop grid from 0, kept while
    they fit inside both the epoch and the analysis span, truncated to
    n_windows."""
    limit = min(epoch_len_samples, plan.analysis_samples)
    if plan.length_samples > limit:
        raise DataError(f"first window ({plan.length_samples} samples) does not "
                        f"fit in {limit} samples")
    windows = []
    start = 0
    while start + plan.length_samples <= limit and len(windows) < plan.n_windows:
        windows.append((start, start + plan.length_samples))
        start += plan.hop_samples
    return windows


def feature_names(bands: FeatureBands) -> tuple[str, ...]:
    names = [name for name, _, _ in bands.canonical]
    names += [name for name, _, _ in bands.sub]
    names += list(TIME_FREQ_NAMES)
    if len(names) != N_FEATURES:
        raise DataError(f"band table yields {len(names)} features, expected "
                        f"{N_FEATURES}")
    return tuple(names)


def _window_features(windows: np.ndarray, sample_rate_hz: float,
                     bands: FeatureBands) -> np.ndarray:
    """Features for an array of windows (..., n_samples) -> (..., 16)."""
    x = np.asarray(windows, dtype=np.float64)
    n = x.shape[-1]
    seg = min(WELCH_SEGMENT, n)
    freqs, psd = welch_psd_array(x, sample_rate_hz, segment_len=seg)

    band_list = list(bands.canonical) + list(bands.sub)
    powers = np.stack([psd @ band_weights(freqs, lo, hi)
                       for _, lo, hi in band_list], axis=-1)

    mean = x.mean(axis=-1)
    centered = x - mean[..., None]
    var = (centered ** 2).mean(axis=-1)
    std = np.sqrt(var)
    safe = np.where(var > 0, var, 1.0)
    skew = np.where(var > 0, (centered ** 3).mean(axis=-1) / safe ** 1.5, 0.0)
    kurt = np.where(var > 0, (centered ** 4).mean(axis=-1) / safe ** 2 - 3.0, 0.0)

    total = psd.sum(axis=-1)
    safe_total = np.where(total > 0, total, 1.0)
    mean_freq = np.where(total > 0, (psd * freqs).sum(axis=-1) / safe_total, 0.0)
    peak_freq = np.where(total > 0, freqs[np.argmax(psd, axis=-1)], 0.0)

    out = np.concatenate([powers,
                          np.stack([mean, std, kurt, skew, mean_freq, peak_freq],
                                   axis=-1)], axis=-1)
    if not np.isfinite(out).all():
        raise DataError("non-finite feature values")
    return out


def extract_window_features(window_signal: np.ndarray, sample_rate_hz: float,
                            bands: FeatureBands) -> np.ndarray:
    """The 16-vector for a single window."""
    x = np.asarray(window_signal, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("expected a 1-D window")
    if len(x) < MIN_WINDOW_SAMPLES:
        raise DataError(f"window of {len(x)} samples is shorter than "
                        f"{MIN_WINDOW_SAMPLES}")
    return _window_features(x, sample_rate_hz, bands)


def build_feature_table(epochs: EpochSet, plan: WindowPlan, bands: FeatureBands,
                        channel_subset=None) -> FeatureTable:
    """Per trial: the 16-vector for every (selected channel, window),
    concatenated channel-major. Columns are named ``channel|w<k>|feature``."""
    if channel_subset is None:
        channel_subset = epochs.channels
    ch_idx = [epochs.channel_index(ch) for ch in channel_subset]
    windows = plan_windows(epochs.epochs.shape[2], plan)
    if not windows:
        raise DataError("no windows fit the epoch")

    data = epochs.epochs[:, ch_idx]     # trials x sel_channels x samples
    sliced = np.stack([data[:, :, s:e] for s, e in windows], axis=2)
    feats = _window_features(sliced, epochs.sample_rate_hz, bands)
    n_trials = feats.shape[0]
    values = feats.reshape(n_trials, -1)

    fnames = feature_names(bands)
    columns = tuple(f"{ch}|w{wi}|{fn}"
                    for ch in channel_subset
                    for wi in range(len(windows))
                    for fn in fnames)
    return FeatureTable(trial_ids=epochs.trial_ids, columns=columns,
                        values=values, labels=epochs.labels)


def write_features_csv(path, table: FeatureTable) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trial_id,label," + ",".join(table.columns) + "\n")
        for tid, lab, row in zip(table.trial_ids, table.labels, table.values):
            cells = ",".join(repr(float(v)) for v in row)
            fh.write(f"{tid},{lab.value},{cells}\n")


def read_features_csv(path) -> FeatureTable:
    from .core import ConditionLabel

    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:2] != ["trial_id", "label"]:
            raise DataError(f"{path}: expected 'trial_id,label,...' header")
        columns = tuple(header[2:])
        ids, labels, rows = [], [], []
        for line in fh:
            cells = line.rstrip("\n").split(",")
            ids.append(int(cells[0]))
            labels.append(ConditionLabel.from_string(cells[1]))
            rows.append([float(v) for v in cells[2:]])
    values = np.array(rows, dtype=np.float64) if rows else np.zeros((0, len(columns)))
    return FeatureTable(trial_ids=tuple(ids), columns=columns, values=values,
                        labels=tuple(labels))
