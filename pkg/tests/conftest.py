import numpy as np
import pytest

from confuseq.core import ConditionLabel, EpochSet, GazeStream, Recording


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_recording(rng, n_channels=4, n_samples=4096, fs=512.0, events=()):
    data = rng.standard_normal((n_channels, n_samples))
    return Recording(sample_rate_hz=fs,
                     channels=tuple(f"ch{i}" for i in range(n_channels)),
                     data=data, events=tuple(events))


def make_epochs(rng, n_trials=6, n_channels=3, fs=512.0, duration_s=2.0,
                labels=None, channels=None):
    n = round(duration_s * fs)
    if labels is None:
        labels = [ConditionLabel.CONTROL if i % 2 == 0
                  else ConditionLabel.FACTUAL_CONFUSION
                  for i in range(n_trials)]
    if channels is None:
        channels = tuple(f"ch{i}" for i in range(n_channels))
    return EpochSet(epochs=rng.standard_normal((n_trials, n_channels, n)),
                    labels=tuple(labels), sample_rate_hz=fs,
                    epoch_duration_s=duration_s, channels=channels,
                    trial_ids=tuple(range(n_trials)))


def make_stream(trial_id=0, t=None, x=None, y=None, c=None):
    t = np.asarray([0.0, 0.1, 0.2] if t is None else t, dtype=float)
    x = np.asarray([0.5] * len(t) if x is None else x, dtype=float)
    y = np.asarray([0.5] * len(t) if y is None else y, dtype=float)
    c = np.asarray([0.9] * len(t) if c is None else c, dtype=float)
    return GazeStream(trial_id=trial_id, t=t, x=x, y=y, c=c)
