"""Trial-averaged ERPs, N400-window band power, per-channel one-way ANOVA,
and significance maps.

The F-distribution survival function is computed from a regularized
incomplete beta evaluated by modified-Lentz continued fractions, so reported
p-values do not depend on an external stats library. A channel is significant
when its smallest per-band p (optionally Bonferroni-adjusted across bands)
falls below alpha; min-p reporting is anti-conservative and is why the
adjustment switch exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Band, ConditionLabel, EpochSet
from .dsp import apply_filter, band_weights, design_fir, welch_psd_array
from .errors import DataError, NumericalError

_CF_MAX_ITER = 300
_CF_EPS = 3e-16
_CF_FPMIN = 1e-300


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_FPMIN:
        d = _CF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_FPMIN:
            d = _CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _CF_FPMIN:
            c = _CF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise NumericalError(f"incomplete-beta continued fraction did not converge "
                         f"for a={a}, b={b}, x={x}")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), abs error well below 1e-10."""
    if a <= 0 or b <= 0:
        raise DataError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def f_survival(f: float, df1: float, df2: float) -> float:
    """P(F(df1, df2) > f)."""
    if df1 <= 0 or df2 <= 0:
        raise DataError("F-distribution degrees of freedom must be positive")
    if not np.isfinite(f):
        return 0.0 if f > 0 else 1.0
    if f <= 0.0:
        return 1.0
    x = df2 / (df2 + df1 * f)
    return min(1.0, max(0.0, betainc_reg(df2 / 2.0, df1 / 2.0, x)))


def one_way_anova(groups) -> tuple[float, float]:
    """Classical one-way ANOVA: F = MS_between / MS_within and its p-value.

    All-identical data gives (0, 1); zero within-group variance with nonzero
    between-group variance gives p = 0 by convention.
    """
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2:
        raise DataError("ANOVA needs at least 2 groups")
    if any(len(g) < 2 for g in groups):
        raise DataError("every ANOVA group needs at least 2 values")
    sizes = np.array([len(g) for g in groups], dtype=np.float64)
    n_total = sizes.sum()
    k = len(groups)
    df1, df2 = k - 1.0, n_total - k
    if df2 < 1:
        raise DataError("not enough within-group degrees of freedom")

    means = np.array([g.mean() for g in groups])
    grand = sum(g.sum() for g in groups) / n_total
    ss_between = float((sizes * (means - grand) ** 2).sum())
    ss_within = float(sum(((g - m) ** 2).sum() for g, m in zip(groups, means)))
    ms_between = ss_between / df1
    ms_within = ss_within / df2
    if ms_within == 0.0:
        if ms_between == 0.0:
            return 0.0, 1.0
        return float("inf"), 0.0
    f = ms_between / ms_within
    return f, f_survival(f, df1, df2)


# ---------------------------------------------------------------------------
# ERP waveforms and N400-window band power
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErpWaveform:
    condition: ConditionLabel
    data: np.ndarray                # channels x samples, first second
    sample_rate_hz: float
    channels: tuple[str, ...]
    n_trials: int


def average_erp(epochs: EpochSet, condition: ConditionLabel,
                lowpass_hz: float = 15.0,
                duration_s: float = 1.0) -> ErpWaveform:
    """Trial average of one condition, low-passed, cropped post-onset."""
    mask = np.array([lab is condition for lab in epochs.labels])
    if not mask.any():
        raise DataError(f"no trials with condition {condition.value}")
    avg = epochs.epochs[mask].astype(np.float64).mean(axis=0)
    filt = design_fir("lowpass", lowpass_hz, lowpass_hz / 3.0,
                      epochs.sample_rate_hz)
    smoothed = apply_filter(filt, avg)
    n_keep = round(duration_s * epochs.sample_rate_hz)
    return ErpWaveform(condition=condition, data=smoothed[:, :n_keep],
                       sample_rate_hz=epochs.sample_rate_hz,
                       channels=epochs.channels, n_trials=int(mask.sum()))


def n400_band_power(epochs: EpochSet, window_s: tuple[float, float] = (0.350, 0.450),
                    erp_bands: list[Band] | None = None) -> np.ndarray:
    """Band powers of the N400 window slice: trials x channels x bands.

    Values are bandwidth-normalized (mean spectral density over the band):
    the 100 ms slice only resolves ~10 Hz, so a raw integral would favor wide
    bands over the band actually carrying a narrowband response. The
    normalization rescales each band by a constant, leaving the downstream
    ANOVA statistics unchanged.
    """
    if erp_bands is None:
        erp_bands = [("alpha", 8.0, 12.0), ("beta", 12.0, 30.0), ("gamma", 30.0, 45.0)]
    fs = epochs.sample_rate_hz
    i0, i1 = round(window_s[0] * fs), round(window_s[1] * fs)
    if not 0 <= i0 < i1 <= epochs.epochs.shape[2]:
        raise DataError(f"window {window_s} s outside the epoch")
    if i1 - i0 < 2:
        raise DataError("N400 window shorter than 2 samples")
    sliced = epochs.epochs[:, :, i0:i1].astype(np.float64)
    freqs, psd = welch_psd_array(sliced, fs, segment_len=i1 - i0)
    return np.stack([psd @ band_weights(freqs, lo, hi) / (hi - lo)
                     for _, lo, hi in erp_bands], axis=-1)


# ---------------------------------------------------------------------------
# Per-channel significance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignificanceMap:
    channels: tuple[str, ...]
    f_stat: np.ndarray          # F of the band achieving the reported p
    p_value: np.ndarray         # per-channel p (min over bands, maybe adjusted)
    significant: np.ndarray     # bool, p < alpha
    band_p: np.ndarray          # channels x bands, unadjusted
    bands: tuple[str, ...]
    alpha: float
    conditions: tuple[str, ...]
    errors: dict[str, str]

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "bands": list(self.bands),
                "conditions": list(self.conditions),
                "channels": {ch: {"f": None if not np.isfinite(self.f_stat[i]) else float(self.f_stat[i]),
                                  "p": None if np.isnan(self.p_value[i]) else float(self.p_value[i]),
                                  "significant": bool(self.significant[i])}
                             for i, ch in enumerate(self.channels)},
                "errors": dict(self.errors)}


def significance_map(epochs: EpochSet, conditions_to_compare,
                     erp_bands: list[Band] | None = None, alpha: float = 0.02,
                     window_s: tuple[float, float] = (0.350, 0.450),
                     bonferroni: bool = False) -> SignificanceMap:
    """ANOVA of N400-window band power across conditions, per channel.

    A channel is significant when any band's p-value (Bonferroni-adjusted when
    requested) is below alpha; the smallest p is reported. Per-channel ANOVA
    failures are recorded without aborting the remaining channels.
    """
    if erp_bands is None:
        erp_bands = [("alpha", 8.0, 12.0), ("beta", 12.0, 30.0), ("gamma", 30.0, 45.0)]
    conditions = tuple(conditions_to_compare)
    if len(conditions) < 2:
        raise DataError("need at least 2 conditions to compare")
    masks = []
    for cond in conditions:
        mask = np.array([lab is cond for lab in epochs.labels])
        if mask.sum() < 2:
            raise DataError(f"condition {cond.value} has fewer than 2 trials")
        masks.append(mask)

    powers = n400_band_power(epochs, window_s=window_s, erp_bands=erp_bands)
    n_ch = len(epochs.channels)
    n_bands = len(erp_bands)
    band_p = np.full((n_ch, n_bands), np.nan)
    band_f = np.full((n_ch, n_bands), np.nan)
    errors: dict[str, str] = {}
    for ci, ch in enumerate(epochs.channels):
        try:
            for bi in range(n_bands):
                groups = [powers[mask, ci, bi] for mask in masks]
                band_f[ci, bi], band_p[ci, bi] = one_way_anova(groups)
        except (DataError, NumericalError) as exc:
            errors[ch] = str(exc)

    adj = np.minimum(band_p * n_bands, 1.0) if bonferroni else band_p
    with np.errstate(invalid="ignore"):
        has_p = ~np.all(np.isnan(adj), axis=1)
    p_value = np.full(n_ch, np.nan)
    f_stat = np.full(n_ch, np.nan)
    significant = np.zeros(n_ch, dtype=bool)
    for ci in range(n_ch):
        if not has_p[ci]:
            continue
        bi = int(np.nanargmin(adj[ci]))
        p_value[ci] = adj[ci, bi]
        f_stat[ci] = band_f[ci, bi]
        significant[ci] = adj[ci, bi] < alpha
    return SignificanceMap(channels=epochs.channels, f_stat=f_stat,
                           p_value=p_value, significant=significant,
                           band_p=band_p,
                           bands=tuple(name for name, _, _ in erp_bands),
                           alpha=alpha,
                           conditions=tuple(c.value for c in conditions),
                           errors=errors)


def aggregate_significance(maps: list[SignificanceMap]) -> dict[str, int]:
    """Per channel, in how many maps (participants) it came out significant."""
    if not maps:
        raise DataError("no significance maps to aggregate")
    channels = maps[0].channels
    for m in maps[1:]:
        if m.channels != channels:
            raise DataError("significance maps use different channel montages")
    counts = np.zeros(len(channels), dtype=int)
    for m in maps:
        counts += m.significant.astype(int)
    return {ch: int(c) for ch, c in zip(channels, counts)}


# ---------------------------------------------------------------------------
# Report assembly (used by the CLI erp stage)
# ---------------------------------------------------------------------------

def _downsample(row: np.ndarray, n_points: int) -> list[float]:
    t = np.linspace(0.0, 1.0, len(row))
    grid = np.linspace(0.0, 1.0, n_points)
    return [float(v) for v in np.interp(grid, t, row)]


def make_erp_report(epochs: EpochSet, erp_bands: list[Band], alpha: float,
                    window_s: tuple[float, float], lowpass_hz: float,
                    bonferroni: bool = False, n_waveform_points: int = 128) -> dict:
    """Waveforms (downsampled), per-channel F/p tables for each confusion
    condition against control, and per-channel aggregation counts."""
    present = {lab for lab in epochs.labels}
    waveforms = {}
    for cond in ConditionLabel:
        if cond in present:
            erp = average_erp(epochs, cond, lowpass_hz=lowpass_hz)
            waveforms[cond.value] = {
                ch: _downsample(erp.data[i], n_waveform_points)
                for i, ch in enumerate(epochs.channels)}

    maps: list[SignificanceMap] = []
    comparisons = {}
    skipped = {}
    for cond in (ConditionLabel.FACTUAL_CONFUSION, ConditionLabel.CONTEXTUAL_CONFUSION):
        key = f"{cond.value}_vs_control"
        n_cond = sum(lab is cond for lab in epochs.labels)
        n_ctrl = sum(lab is ConditionLabel.CONTROL for lab in epochs.labels)
        if n_cond < 2 or n_ctrl < 2:
            skipped[key] = "needs at least 2 trials per condition"
            continue
        smap = significance_map(epochs, (ConditionLabel.CONTROL, cond),
                                erp_bands=erp_bands, alpha=alpha,
                                window_s=window_s, bonferroni=bonferroni)
        maps.append(smap)
        comparisons[key] = smap.to_dict()

    report = {"waveform_points": n_waveform_points,
              "waveforms": waveforms,
              "comparisons": comparisons,
              "skipped_comparisons": skipped,
              "n400_window_s": list(window_s),
              "alpha": alpha}
    if maps:
        report["aggregate_counts"] = aggregate_significance(maps)
    return report
