"""Domain types, file formats, and configuration shared by all pipeline stages.

File formats (all plain text, little-endian binary containers live in
``confuseq.containers``):

* EEG CSV: first line ``# sample_rate_hz=<float>``, second line the
  comma-separated channel names, then one row of microvolt values per sample.
* Events: JSON lines, one ``{"sample": int, "trial": int}`` object per line.
* Gaze CSV: header ``t,x,y,c,trial_id``; seconds, normalized [0,1] screen
  coordinates, confidence in [0,1].
* Stimuli: JSON ``{"trials": [{"id":.., "class":.., "words": [{"text":..,
  "box": [x0,y0,x1,y1]}]}]}``.
* Config: a single JSON document mirroring the PipelineConfig field names.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError

EEG_HEADER_PREFIX = "# sample_rate_hz="
GAZE_HEADER = "t,x,y,c,trial_id"


class ConditionLabel(enum.Enum):
    """Trial condition. Binary view maps Control to 0, both confusion classes to 1."""

    CONTROL = "control"
    FACTUAL_CONFUSION = "factual_confusion"
    CONTEXTUAL_CONFUSION = "contextual_confusion"

    @property
    def binary(self) -> int:
        return 0 if self is ConditionLabel.CONTROL else 1

    @classmethod
    def from_string(cls, s: str) -> "ConditionLabel":
        try:
            return cls(s)
        except ValueError:
            raise DataError(f"unknown condition label {s!r}; expected one of "
                            f"{[m.value for m in cls]}") from None


# Stable numeric codes used inside binary containers.
LABEL_CODES = {ConditionLabel.CONTROL: 0,
               ConditionLabel.FACTUAL_CONFUSION: 1,
               ConditionLabel.CONTEXTUAL_CONFUSION: 2}
CODE_LABELS = {v: k for k, v in LABEL_CODES.items()}


@dataclass(frozen=True)
class Recording:
    """Continuous multi-channel EEG with event markers.

    data is channels x samples in microvolts. events is a list of
    (sample_index, trial_id) pairs, strictly increasing in sample_index.
    """

    sample_rate_hz: float
    channels: tuple[str, ...]
    data: np.ndarray
    events: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise DataError("sample_rate_hz must be positive")
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DataError("recording data must be channels x samples")
        if data.shape[0] != len(self.channels):
            raise DataError(f"{len(self.channels)} channel names but data has "
                            f"{data.shape[0]} rows")
        if len(set(self.channels)) != len(self.channels):
            raise DataError("duplicate channel names")
        if not np.isfinite(data).all():
            raise DataError("recording contains non-finite samples")
        prev = -1
        seen: set[int] = set()
        for sample, trial in self.events:
            if sample <= prev:
                raise DataError("events not monotone in sample_index")
            if trial in seen:
                raise DataError(f"duplicate trial_id {trial} in events")
            prev = sample
            seen.add(trial)

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz


@dataclass(frozen=True)
class EpochSet:
    """trials x channels x samples tensor with one condition label per trial."""

    epochs: np.ndarray
    labels: tuple[ConditionLabel, ...]
    sample_rate_hz: float
    epoch_duration_s: float
    channels: tuple[str, ...]
    trial_ids: tuple[int, ...]

    def __post_init__(self):
        ep = np.asarray(self.epochs)
        if ep.ndim != 3:
            raise DataError("epochs must be trials x channels x samples")
        want = round(self.epoch_duration_s * self.sample_rate_hz)
        if ep.shape[2] != want:
            raise DataError(f"epoch length {ep.shape[2]} != "
                            f"round(duration*rate) = {want}")
        if ep.shape[1] != len(self.channels):
            raise DataError("channel-name count mismatch")
        if len(self.labels) != ep.shape[0] or len(self.trial_ids) != ep.shape[0]:
            raise DataError("labels/trial_ids length must equal trial count")

    @property
    def n_trials(self) -> int:
        return self.epochs.shape[0]

    def channel_index(self, name: str) -> int:
        try:
            return self.channels.index(name)
        except ValueError:
            raise DataError(f"unknown channel {name!r}") from None


@dataclass(frozen=True)
class GazeStream:
    """Timestamped gaze samples of one trial, ordered by time."""

    trial_id: int
    t: np.ndarray   # seconds
    x: np.ndarray   # [0, 1]
    y: np.ndarray   # [0, 1]
    c: np.ndarray   # confidence [0, 1]

    def __post_init__(self):
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.c) == n):
            raise DataError("gaze sample arrays must have equal length")
        if n and np.any(np.diff(self.t) < 0):
            raise DataError("gaze timestamps must be nondecreasing")
        if n and (self.c.min() < 0 or self.c.max() > 1):
            raise DataError("gaze confidence outside [0, 1]")

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True)
class Word:
    text: str
    box: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise DataError(f"degenerate box {self.box} for word {self.text!r}")


@dataclass(frozen=True)
class StimulusTrial:
    trial_id: int
    condition: ConditionLabel
    words: tuple[Word, ...]


@dataclass(frozen=True)
class FeatureTable:
    """Per-trial flat feature vectors with column provenance and labels."""

    trial_ids: tuple[int, ...]
    columns: tuple[str, ...]
    values: np.ndarray
    labels: tuple[ConditionLabel, ...]

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise DataError("feature values must be 2-D")
        if v.shape != (len(self.trial_ids), len(self.columns)):
            raise DataError(f"feature shape {v.shape} inconsistent with "
                            f"{len(self.trial_ids)} trials x {len(self.columns)} columns")
        if len(self.labels) != len(self.trial_ids):
            raise DataError("labels length must equal trial count")
        if v.size and not np.isfinite(v).all():
            raise DataError("feature table contains NaN/Inf")

    @property
    def binary_labels(self) -> np.ndarray:
        return np.array([lab.binary for lab in self.labels], dtype=np.int64)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class FilterParams:
    notch_hz: float = 60.0
    notch_halfwidth_hz: float = 1.0     # bandstop notch_hz +/- halfwidth
    highpass_hz: float = 1.0
    lowpass_hz: float = 100.0
    notch_transition_hz: float = 1.0
    highpass_transition_hz: float = 1.0
    lowpass_transition_hz: float = 10.0


@dataclass
class BadChannelParams:
    r_low: float = 0.2
    r_high: float = 0.99
    abnormal_fraction: float = 0.8
    preflagged: list[str] = field(default_factory=list)


@dataclass
class IcaParams:
    n_components: int = 20
    tolerance: float = 1e-4
    max_iter: int = 500
    kurtosis_threshold: float = 10.0
    frontal_corr_threshold: float = 0.7
    frontal_channels: list[str] = field(default_factory=lambda: ["Fp1", "Fpz", "Fp2"])


@dataclass
class WindowParams:
    length_s: float = 2.0
    overlap: float = 0.5
    n_windows: int = 4
    analysis_duration_s: float = 6.0


Band = tuple[str, float, float]     # (name, lo_hz, hi_hz); order is significant


@dataclass
class FeatureBands:
    """Canonical bands plus the sub-band split used by the 16-vector.

    Ordered lists, not dicts: the feature-column order follows this order.
    """

    canonical: list[Band] = field(default_factory=lambda: [
        ("delta", 0.5, 4.0), ("theta", 4.0, 8.0), ("alpha", 8.0, 13.0),
        ("beta", 13.0, 30.0), ("gamma", 30.0, 45.0)])
    sub: list[Band] = field(default_factory=lambda: [
        ("theta_sub", 4.0, 6.0), ("alpha1", 8.0, 10.0), ("alpha2", 10.0, 13.0),
        ("beta1", 13.0, 20.0), ("beta2", 20.0, 30.0)])


@dataclass
class ErpParams:
    window_s: tuple[float, float] = (0.350, 0.450)
    bands: list[Band] = field(default_factory=lambda: [
        ("alpha", 8.0, 12.0), ("beta", 12.0, 30.0), ("gamma", 30.0, 45.0)])
    alpha: float = 0.02
    bonferroni: bool = False
    waveform_lowpass_hz: float = 15.0
    waveform_duration_s: float = 1.0


@dataclass
class ClassifierParams:
    n_estimators: int = 100
    max_depth: int = 60
    learning_rate: float = 0.3
    cnn_epochs: int = 100
    cnn_lr: float = 1e-3
    cnn_batch: int = 16
    window_aggregation: str = "mean"    # mean | majority, per-trial CNN-window vote


@dataclass
class GazeParams:
    confidence_threshold: float = 0.6
    dbscan_eps: float = 0.08
    dbscan_min_pts: int = 5
    w_size: float = 0.01
    w_uniformity: float = 1.0
    fixation_dispersion: float = 0.02
    fixation_min_duration_s: float = 0.1
    entropy_grid: int = 8
    trace_len: int = 1000
    align_tolerance: float = 0.03


@dataclass
class PipelineConfig:
    filters: FilterParams = field(default_factory=FilterParams)
    bad_channels: BadChannelParams = field(default_factory=BadChannelParams)
    ica: IcaParams = field(default_factory=IcaParams)
    window: WindowParams = field(default_factory=WindowParams)
    feature_bands: FeatureBands = field(default_factory=FeatureBands)
    erp: ErpParams = field(default_factory=ErpParams)
    classifier: ClassifierParams = field(default_factory=ClassifierParams)
    train_fraction: float = 0.8
    w_eeg: float = 0.8
    w_eye: float = 0.2
    gaze: GazeParams = field(default_factory=GazeParams)
    channel_subset: list[str] = field(default_factory=lambda: [
        "T7", "T8", "FT7", "FT8", "TP7", "TP8", "C5", "C6"])
    epoch_duration_s: float = 10.0
    seed: int = 7

    def __post_init__(self):
        if not math.isclose(self.w_eeg + self.w_eye, 1.0, abs_tol=1e-9):
            raise DataError(f"ensemble weights must sum to 1, got "
                            f"{self.w_eeg} + {self.w_eye}")
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError("train_fraction must lie in (0, 1)")

    def check_rates(self, sample_rate_hz: float) -> None:
        """All configured frequencies must sit below Nyquist."""
        nyq = sample_rate_hz / 2.0
        hz = [self.filters.notch_hz + self.filters.notch_halfwidth_hz,
              self.filters.highpass_hz, self.filters.lowpass_hz,
              self.erp.waveform_lowpass_hz]
        for table in (self.feature_bands.canonical, self.feature_bands.sub,
                      self.erp.bands):
            hz += [edge for _, lo, hi in table for edge in (lo, hi)]
        bad = [f for f in hz if f >= nyq]
        if bad:
            raise DataError(f"configured frequencies {bad} exceed Nyquist {nyq} Hz")


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _to_jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def _dataclass_from_dict(cls, data: dict):
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise DataError(f"unknown config field {key!r} for {cls.__name__}")
        if key in _NESTED:
            value = _dataclass_from_dict(_NESTED[key], value)
        elif key == "window_s":
            value = tuple(value)
        elif key in ("canonical", "sub", "bands"):
            value = [(str(b[0]), float(b[1]), float(b[2])) for b in value]
        kwargs[key] = value
    return cls(**kwargs)


_NESTED = {
    "filters": FilterParams, "bad_channels": BadChannelParams, "ica": IcaParams,
    "window": WindowParams, "feature_bands": FeatureBands, "erp": ErpParams,
    "classifier": ClassifierParams, "gaze": GazeParams,
}


def config_to_dict(config: PipelineConfig) -> dict:
    return _to_jsonable(config)


def config_from_dict(data: dict) -> PipelineConfig:
    return _dataclass_from_dict(PipelineConfig, data)


def load_config(path: str | Path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data)


def save_config(path: str | Path, config: PipelineConfig) -> None:
    write_report(path, config_to_dict(config))


# ---------------------------------------------------------------------------
# EEG CSV + events
# ---------------------------------------------------------------------------

def read_eeg_csv(path: str | Path, events_path: str | Path | None = None) -> Recording:
    """Read a recording from CSV, plus its events file when present.

    When events_path is None, a sibling ``<stem>.events.jsonl`` is used if it
    exists.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(EEG_HEADER_PREFIX):
            raise ParseError(f"{path}:1: expected '{EEG_HEADER_PREFIX}<float>' header, "
                             f"got {header[:40]!r}")
        try:
            rate = float(header[len(EEG_HEADER_PREFIX):])
        except ValueError:
            raise ParseError(f"{path}:1: could not parse sample rate from "
                             f"{header!r}") from None
        channel_line = fh.readline().rstrip("\n")
        channels = tuple(name.strip() for name in channel_line.split(","))
        if any(not name for name in channels):
            raise ParseError(f"{path}:2: empty channel name in {channel_line!r}")

    import pandas as pd

    try:
        frame = pd.read_csv(path, skiprows=2, header=None, dtype=np.float32,
                            na_filter=False, engine="c")
    except Exception as exc:
        raise ParseError(f"{path}: data rows unreadable ({exc})") from None
    if frame.shape[1] != len(channels):
        raise ParseError(f"{path}: rows have {frame.shape[1]} fields but header "
                         f"declares {len(channels)} channels")
    data = np.ascontiguousarray(frame.to_numpy().T)

    if events_path is None:
        candidate = path.parent / (path.stem + ".events.jsonl")
        events_path = candidate if candidate.exists() else None
    events = read_events(events_path) if events_path is not None else ()
    return Recording(sample_rate_hz=rate, channels=channels, data=data,
                     events=tuple(events))


def write_eeg_csv(path: str | Path, recording: Recording,
                  events_path: str | Path | None = None) -> None:
    """Write the canonical CSV form (fixed %.4f cells, LF line endings)."""
    import pandas as pd

    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{EEG_HEADER_PREFIX}{recording.sample_rate_hz!r}\n")
        fh.write(",".join(recording.channels) + "\n")
    pd.DataFrame(recording.data.T).to_csv(
        path, mode="a", header=False, index=False, float_format="%.4f",
        lineterminator="\n")
    if events_path is not None:
        write_events(events_path, recording.events)


def read_events(path: str | Path) -> list[tuple[int, int]]:
    events: list[tuple[int, int]] = []
    prev = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sample, trial = int(obj["sample"]), int(obj["trial"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise ParseError(f"{path}:{lineno}: expected "
                                 '{"sample": int, "trial": int}') from None
            if sample <= prev:
                raise ParseError(f"{path}:{lineno}: events not monotone "
                                 f"(sample {sample} after {prev})")
            prev = sample
            events.append((sample, trial))
    return events


def write_events(path: str | Path, events) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sample, trial in events:
            fh.write(json.dumps({"sample": int(sample), "trial": int(trial)}) + "\n")


# ---------------------------------------------------------------------------
# Gaze CSV
# ---------------------------------------------------------------------------

@dataclass
class GazeReadResult:
    streams: list[GazeStream]
    n_clamped: int      # x/y samples clamped back into [0, 1]


def read_gaze_csv(path: str | Path) -> GazeReadResult:
    """Read gaze samples, grouped per trial and ordered by time.

    Confidence outside [0,1] is a hard error; x/y outside [0,1] are clamped
    and counted.
    """
    import pandas as pd

    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
    if header != GAZE_HEADER:
        raise ParseError(f"{path}:1: expected header {GAZE_HEADER!r}, got {header!r}")
    try:
        frame = pd.read_csv(path, dtype={"t": np.float64, "x": np.float64,
                                         "y": np.float64, "c": np.float64,
                                         "trial_id": np.int64})
    except Exception as exc:
        raise ParseError(f"{path}: unreadable gaze rows ({exc})") from None
    c = frame["c"].to_numpy()
    if len(c) and (c.min() < 0 or c.max() > 1):
        bad = int(np.argmax((c < 0) | (c > 1)))
        raise ParseError(f"{path}:{bad + 2}: confidence {c[bad]} outside [0, 1]")

    n_clamped = 0
    xy = frame[["x", "y"]].to_numpy()
    out_of_range = (xy < 0) | (xy > 1)
    if out_of_range.any():
        n_clamped = int(out_of_range.any(axis=1).sum())
        xy = np.clip(xy, 0.0, 1.0)
        frame["x"], frame["y"] = xy[:, 0], xy[:, 1]

    streams = []
    for trial_id, group in frame.groupby("trial_id", sort=True):
        group = group.sort_values("t", kind="stable")
        streams.append(GazeStream(
            trial_id=int(trial_id),
            t=group["t"].to_numpy(), x=group["x"].to_numpy(),
            y=group["y"].to_numpy(), c=group["c"].to_numpy()))
    return GazeReadResult(streams=streams, n_clamped=n_clamped)


def write_gaze_csv(path: str | Path, streams) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(GAZE_HEADER + "\n")
        for stream in streams:
            for t, x, y, c in zip(stream.t, stream.x, stream.y, stream.c):
                fh.write(f"{t:.6f},{x:.6f},{y:.6f},{c:.4f},{stream.trial_id}\n")


# ---------------------------------------------------------------------------
# Stimuli + generic JSON reports
# ---------------------------------------------------------------------------

def read_stimuli(path: str | Path) -> list[StimulusTrial]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or "trials" not in doc:
        raise ParseError(f"{path}: expected object with a 'trials' array")
    trials: list[StimulusTrial] = []
    seen: set[int] = set()
    for entry in doc["trials"]:
        trial_id = int(entry["id"])
        if trial_id in seen:
            raise DataError(f"duplicate trial_id {trial_id} in stimuli")
        seen.add(trial_id)
        words = tuple(Word(text=w["text"], box=tuple(float(v) for v in w["box"]))
                      for w in entry.get("words", []))
        trials.append(StimulusTrial(
            trial_id=trial_id,
            condition=ConditionLabel.from_string(entry["class"]),
            words=words))
    return trials


def write_stimuli(path: str | Path, trials) -> None:
    doc = {"trials": [
        {"id": t.trial_id, "class": t.condition.value,
         "words": [{"text": w.text, "box": list(w.box)} for w in t.words]}
        for t in trials]}
    write_report(path, doc)


def write_report(path: str | Path, report: dict) -> None:
    """Canonical JSON: sorted keys, 2-space indent, full float precision."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from None


def sample_stimuli_path() -> Path:
    """Shipped demo stimulus file: 6 trials, 2 per condition."""
    return Path(__file__).parent / "data" / "sample_stimuli.json"
