"""EEG preprocessing: filtering, bad-channel rejection, ICA artifact removal,
epoching, and per-channel standardization.

Ordering follows the upstream recording pipeline: filter the continuous data,
detect bad channels on the filtered signal, unmix with ICA and drop artifact
components, then epoch and z-score.

Visual inspection of ICA components is replaced by an automated rule: a
component is rejected when its activation correlates strongly with the mean
frontal signal (blinks) or is heavily leptokurtic (spiky artifacts).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .core import ConditionLabel, EpochSet, PipelineConfig, Recording
from .dsp import apply_filter, design_fir, design_notch
from .errors import DataError, NumericalError

_CHUNK = 200_000    # samples per block for the long-recording matrix products


@dataclass(frozen=True)
class BadChannelReport:
    channels: tuple[str, ...]
    abnormal_fraction: np.ndarray
    verdicts: tuple[str, ...]           # good | bad | preflagged
    r_low: float
    r_high: float
    threshold: float

    @property
    def good_channels(self) -> tuple[str, ...]:
        return tuple(ch for ch, v in zip(self.channels, self.verdicts) if v == "good")

    def to_dict(self) -> dict:
        return {"r_low": self.r_low, "r_high": self.r_high,
                "threshold": self.threshold,
                "channels": {ch: {"abnormal_fraction": float(f), "verdict": v}
                             for ch, f, v in zip(self.channels,
                                                 self.abnormal_fraction,
                                                 self.verdicts)}}


@dataclass(frozen=True)
class IcaModel:
    n_components: int
    unmixing: np.ndarray        # components x channels, applied to centered data
    mixing: np.ndarray          # channels x components
    whitening: np.ndarray       # components x channels
    channel_mean: np.ndarray
    n_iter: int
    kurtosis: np.ndarray | None = None
    frontal_corr: np.ndarray | None = None
    rejected: np.ndarray | None = None

    def __post_init__(self):
        proj = self.mixing @ self.unmixing
        # mixing . unmixing must be the projector onto the retained subspace;
        # checked through its idempotency and symmetry.
        if not np.allclose(proj, proj @ proj, atol=1e-6):
            raise DataError("ICA mixing/unmixing inconsistent")


def _correlation_matrix(data: np.ndarray) -> np.ndarray:
    """Pearson correlations between channels; zero-variance rows yield r = 0."""
    n_ch, n = data.shape
    mean = np.zeros(n_ch)
    for start in range(0, n, _CHUNK):
        mean += data[:, start:start + _CHUNK].astype(np.float64).sum(axis=1)
    mean /= n
    gram = np.zeros((n_ch, n_ch))
    for start in range(0, n, _CHUNK):
        block = data[:, start:start + _CHUNK].astype(np.float64) - mean[:, None]
        gram += block @ block.T
    var = np.diag(gram).copy()
    scale = np.sqrt(np.where(var > 0, var, 1.0))
    r = gram / scale[:, None] / scale[None, :]
    r[var == 0, :] = 0.0
    r[:, var == 0] = 0.0
    np.fill_diagonal(r, 1.0)
    return r


def detect_bad_channels(recording: Recording, r_low: float = 0.2,
                        r_high: float = 0.99,
                        abnormal_fraction_threshold: float = 0.8,
                        preflagged=()) -> BadChannelReport:
    """Flag channels whose pairwise correlations are mostly abnormal.

    A partner correlation is abnormal when it falls outside (r_low, r_high);
    a channel is bad when more than the threshold fraction of its partners
    are abnormal. Preflagged channels are always bad.
    """
    n_ch, n = recording.data.shape
    if n_ch < 3:
        raise DataError("bad-channel detection needs at least 3 channels")
    if n < 2 * recording.sample_rate_hz:
        raise DataError("bad-channel detection needs at least 2 s of data")
    unknown = set(preflagged) - set(recording.channels)
    if unknown:
        raise DataError(f"preflagged channels {sorted(unknown)} not in recording")

    r = _correlation_matrix(recording.data)
    abnormal = ~((r > r_low) & (r < r_high))
    np.fill_diagonal(abnormal, False)
    fraction = abnormal.sum(axis=1) / (n_ch - 1)

    verdicts = []
    for i, ch in enumerate(recording.channels):
        if ch in preflagged:
            verdicts.append("preflagged")
        elif fraction[i] > abnormal_fraction_threshold:
            verdicts.append("bad")
        else:
            verdicts.append("good")
    return BadChannelReport(channels=recording.channels,
                            abnormal_fraction=fraction, verdicts=tuple(verdicts),
                            r_low=r_low, r_high=r_high,
                            threshold=abnormal_fraction_threshold)


# ---------------------------------------------------------------------------
# FastICA (tanh contrast, symmetric decorrelation)
# ---------------------------------------------------------------------------

def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(w @ w.T)
    vals = np.maximum(vals, 1e-12)
    return (vecs / np.sqrt(vals)) @ vecs.T @ w


def fit_ica(data: np.ndarray, n_components: int, seed: int,
            tolerance: float = 1e-4, max_iter: int = 500) -> IcaModel:
    """Fit FastICA on channels x samples data.

    Whitens via the covariance eigendecomposition; reduces n_components to the
    covariance rank with a warning when necessary; raises NumericalError with
    the iteration count when the symmetric fixed-point iteration does not
    reach the tolerance.
    """
    data = np.asarray(data)
    n_ch, n = data.shape
    mean = np.zeros(n_ch)
    for start in range(0, n, _CHUNK):
        mean += data[:, start:start + _CHUNK].astype(np.float64).sum(axis=1)
    mean /= n
    cov = np.zeros((n_ch, n_ch))
    for start in range(0, n, _CHUNK):
        block = data[:, start:start + _CHUNK].astype(np.float64) - mean[:, None]
        cov += block @ block.T
    cov /= n

    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    rank = int(np.sum(vals > vals[0] * 1e-10)) if vals[0] > 0 else 0
    if rank == 0:
        raise DataError("ICA input has zero variance")
    if n_components > rank:
        warnings.warn(f"requested {n_components} ICA components but data rank "
                      f"is {rank}; reducing", stacklevel=2)
        n_components = rank
    k = n_components
    whitening = (vecs[:, :k] / np.sqrt(vals[:k])).T     # k x channels

    # Whitened data, materialized once (k rows only).
    xw = np.empty((k, n))
    for start in range(0, n, _CHUNK):
        block = data[:, start:start + _CHUNK].astype(np.float64) - mean[:, None]
        xw[:, start:start + _CHUNK] = whitening @ block

    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((k, k)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        acc_gx = np.zeros((k, k))
        acc_gp = np.zeros(k)
        for start in range(0, n, _CHUNK):
            u = w @ xw[:, start:start + _CHUNK]
            g = np.tanh(u)
            acc_gx += g @ xw[:, start:start + _CHUNK].T
            acc_gp += (1.0 - g * g).sum(axis=1)
        w_new = _sym_decorrelate(acc_gx / n - (acc_gp / n)[:, None] * w)
        lim = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0)))
        w = w_new
        if lim < tolerance:
            converged = True
            break
    if not converged:
        raise NumericalError(f"FastICA did not converge within {it} iterations "
                             f"(tolerance {tolerance})")

    unmixing = w @ whitening                            # k x channels
    mixing = vecs[:, :k] * np.sqrt(vals[:k]) @ w.T      # channels x k
    return IcaModel(n_components=k, unmixing=unmixing, mixing=mixing,
                    whitening=whitening, channel_mean=mean, n_iter=it)


def ica_sources(model: IcaModel, data: np.ndarray) -> np.ndarray:
    """Component activations (components x samples)."""
    n = data.shape[1]
    out = np.empty((model.n_components, n))
    for start in range(0, n, _CHUNK):
        block = data[:, start:start + _CHUNK].astype(np.float64) \
            - model.channel_mean[:, None]
        out[:, start:start + _CHUNK] = model.unmixing @ block
    return out


def ica_reconstruct(model: IcaModel, data: np.ndarray,
                    dtype=np.float64) -> np.ndarray:
    """Reconstruct the recording from the non-rejected components."""
    keep = np.ones(model.n_components, dtype=bool)
    if model.rejected is not None:
        keep = ~model.rejected
    n_ch, n = data.shape
    out = np.empty((n_ch, n), dtype=dtype)
    mix = model.mixing[:, keep]
    unmix = model.unmixing[keep]
    for start in range(0, n, _CHUNK):
        block = data[:, start:start + _CHUNK].astype(np.float64) \
            - model.channel_mean[:, None]
        out[:, start:start + _CHUNK] = mix @ (unmix @ block) \
            + model.channel_mean[:, None]
    return out


def _excess_kurtosis(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = x - x.mean(axis=axis, keepdims=True)
    var = (x * x).mean(axis=axis)
    var = np.where(var > 0, var, 1.0)
    return (x ** 4).mean(axis=axis) / var ** 2 - 3.0


def reject_components(model: IcaModel, recording: Recording, frontal_channels,
                      kurtosis_threshold: float = 10.0,
                      frontal_corr_threshold: float = 0.7) -> IcaModel:
    """Flag artifact components: strong frontal correlation or high kurtosis."""
    missing = [ch for ch in frontal_channels if ch not in recording.channels]
    if missing:
        raise DataError(f"frontal channels {missing} not in recording")
    idx = [recording.channels.index(ch) for ch in frontal_channels]
    frontal = recording.data[idx].astype(np.float64).mean(axis=0)
    frontal -= frontal.mean()
    fnorm = np.sqrt((frontal * frontal).sum())

    sources = ica_sources(model, recording.data)
    kurt = _excess_kurtosis(sources)
    centered = sources - sources.mean(axis=1, keepdims=True)
    snorm = np.sqrt((centered * centered).sum(axis=1))
    denom = np.where(snorm * fnorm > 0, snorm * fnorm, 1.0)
    corr = (centered @ frontal) / denom

    rejected = (np.abs(corr) > frontal_corr_threshold) | (kurt > kurtosis_threshold)
    return replace(model, kurtosis=kurt, frontal_corr=corr, rejected=rejected)


# ---------------------------------------------------------------------------
# Epoching and standardization
# ---------------------------------------------------------------------------

def epoch(recording: Recording, duration_s: float,
          labels: dict[int, ConditionLabel]) -> EpochSet:
    """Cut one fixed-duration epoch per event marker.

    labels maps trial_id to its condition; sample values are copied verbatim.
    """
    n_samples = round(duration_s * recording.sample_rate_hz)
    too_late = [trial for sample, trial in recording.events
                if sample + n_samples > recording.n_samples]
    if too_late:
        raise DataError(f"epochs of trials {too_late} extend past the end of "
                        f"the recording")
    missing = [trial for _, trial in recording.events if trial not in labels]
    if missing:
        raise DataError(f"no condition labels for trials {missing}")

    n_trials = len(recording.events)
    out = np.empty((n_trials, len(recording.channels), n_samples), dtype=np.float32)
    lab = []
    ids = []
    for i, (sample, trial) in enumerate(recording.events):
        out[i] = recording.data[:, sample:sample + n_samples]
        lab.append(labels[trial])
        ids.append(trial)
    return EpochSet(epochs=out, labels=tuple(lab),
                    sample_rate_hz=recording.sample_rate_hz,
                    epoch_duration_s=duration_s, channels=recording.channels,
                    trial_ids=tuple(ids))


def zscore_channels(epochs: EpochSet) -> EpochSet:
    """Per-channel per-trial standardization with population std.

    Zero-variance channels map to all-zeros rather than NaN.
    """
    x = epochs.epochs.astype(np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    safe = np.where(std > 0, std, 1.0)
    z = (x - mean) / safe
    z = np.where(std > 0, z, 0.0)
    return replace(epochs, epochs=z)


# ---------------------------------------------------------------------------
# Stage orchestration
# ---------------------------------------------------------------------------

def preprocess_recording(recording: Recording, labels: dict[int, ConditionLabel],
                         config: PipelineConfig, seed: int | None = None):
    """Full continuous-data pipeline: filter, drop bad channels, ICA-clean,
    epoch, z-score. Returns (EpochSet, report dict)."""
    config.check_rates(recording.sample_rate_hz)
    fp = config.filters
    fs = recording.sample_rate_hz
    filters = [design_notch(fp.notch_hz, fp.notch_halfwidth_hz,
                            fp.notch_transition_hz, fs),
               design_fir("highpass", fp.highpass_hz, fp.highpass_transition_hz, fs),
               design_fir("lowpass", fp.lowpass_hz, fp.lowpass_transition_hz, fs)]

    filtered = np.empty_like(recording.data, dtype=np.float32)
    for i in range(recording.data.shape[0]):
        row = recording.data[i].astype(np.float64)
        for filt in filters:
            row = apply_filter(filt, row)
        filtered[i] = row
    clean = Recording(sample_rate_hz=fs, channels=recording.channels,
                      data=filtered, events=recording.events)

    bad_report = detect_bad_channels(clean, config.bad_channels.r_low,
                                     config.bad_channels.r_high,
                                     config.bad_channels.abnormal_fraction,
                                     tuple(config.bad_channels.preflagged))
    good = bad_report.good_channels
    if len(good) < 3:
        raise DataError(f"only {len(good)} good channels remain")
    good_idx = [recording.channels.index(ch) for ch in good]
    good_rec = Recording(sample_rate_hz=fs, channels=good,
                         data=filtered[good_idx], events=recording.events)

    ica_seed = config.seed if seed is None else seed
    model = fit_ica(good_rec.data, config.ica.n_components, seed=ica_seed,
                    tolerance=config.ica.tolerance, max_iter=config.ica.max_iter)
    frontal = [ch for ch in config.ica.frontal_channels if ch in good]
    if frontal:
        model = reject_components(model, good_rec, frontal,
                                  config.ica.kurtosis_threshold,
                                  config.ica.frontal_corr_threshold)
    reconstructed = ica_reconstruct(model, good_rec.data, dtype=np.float32)
    good_rec = Recording(sample_rate_hz=fs, channels=good, data=reconstructed,
                         events=recording.events)

    epochs = epoch(good_rec, config.epoch_duration_s, labels)
    epochs = zscore_channels(epochs)

    n_rejected = int(model.rejected.sum()) if model.rejected is not None else 0
    report = {
        "bad_channels": bad_report.to_dict(),
        "n_good_channels": len(good),
        "ica": {"n_components": model.n_components, "n_iter": model.n_iter,
                "n_rejected": n_rejected,
                "rejected": [] if model.rejected is None else
                            [int(i) for i in np.flatnonzero(model.rejected)]},
        "n_trials": epochs.n_trials,
    }
    return epochs, report
