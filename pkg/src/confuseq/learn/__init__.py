"""Trial-wise splitting, classifiers, metrics, and the weighted ensemble."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from .cnn import (CnnModel, bce_with_logits, build_cnn, build_gaze_cnn,
                  load_cnn, predict_cnn, save_cnn, train_cnn)
from .gbt import GbtModel, load_gbt, predict_gbt, save_gbt, train_gbt

__all__ = [
    "SplitSpec", "split_trials", "assert_no_leakage", "balanced_accuracy",
    "confusion_matrix", "EvalReport", "evaluate_predictions",
    "ensemble_predict", "GbtModel", "train_gbt", "predict_gbt", "save_gbt",
    "load_gbt", "CnnModel", "build_cnn", "build_gaze_cnn", "train_cnn",
    "predict_cnn", "save_cnn", "load_cnn", "bce_with_logits",
]


@dataclass(frozen=True)
class SplitSpec:
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    seed: int
    stratified: bool = True

    def __post_init__(self):
        if set(self.train_ids) & set(self.test_ids):
            raise DataError("train and test trials overlap")

    def to_dict(self) -> dict:
        return {"train_ids": list(self.train_ids), "test_ids": list(self.test_ids),
                "seed": self.seed, "stratified": self.stratified}

    @classmethod
    def from_dict(cls, doc: dict) -> "SplitSpec":
        return cls(train_ids=tuple(doc["train_ids"]),
                   test_ids=tuple(doc["test_ids"]), seed=int(doc["seed"]),
                   stratified=bool(doc.get("stratified", True)))


def split_trials(trial_ids, binary_labels, train_fraction: float = 0.8,
                 seed: int = 0) -> SplitSpec:
    """Stratified trial-wise split, deterministic given the seed.

    Windows and traces derived from a trial inherit its assignment, so no
    test-trial data can reach training.
    """
    trial_ids = list(trial_ids)
    labels = np.asarray(binary_labels)
    if len(trial_ids) != len(labels):
        raise DataError("one label per trial required")
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train: list[int] = []
    test: list[int] = []
    for cls in sorted(set(labels.tolist())):
        ids = sorted(tid for tid, lab in zip(trial_ids, labels) if lab == cls)
        if len(ids) < 2:
            raise DataError(f"class {cls} has fewer than 2 trials")
        perm = rng.permutation(len(ids))
        n_train = int(round(train_fraction * len(ids)))
        n_train = min(max(n_train, 1), len(ids) - 1)    # both sides nonempty
        for k, pi in enumerate(perm):
            (train if k < n_train else test).append(ids[pi])
    return SplitSpec(train_ids=tuple(sorted(train)), test_ids=tuple(sorted(test)),
                     seed=seed)


def assert_no_leakage(split: SplitSpec, training_row_trials) -> None:
    """Provenance audit: no training row may come from a test trial."""
    test = set(split.test_ids)
    leaked = sorted({int(t) for t in training_row_trials if int(t) in test})
    if leaked:
        raise DataError(f"test trials {leaked} leaked into training rows")


def balanced_accuracy(y_true, y_pred) -> float:
    """Unweighted mean of per-class recall over the classes present in
    y_true; empty classes are excluded with a warning."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0 or len(y_true) != len(y_pred):
        raise DataError("need equally many labels and predictions")
    recalls = []
    for cls in (0, 1):
        mask = y_true == cls
        if not mask.any():
            warnings.warn(f"class {cls} absent; excluded from balanced accuracy",
                          stacklevel=2)
            continue
        recalls.append(float((y_pred[mask] == cls).mean()))
    if not recalls:
        raise DataError("no classes present")
    return float(np.mean(recalls))


def confusion_matrix(y_true, y_pred) -> list[list[int]]:
    """2x2 matrix, rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    return [[int(((y_true == r) & (y_pred == c)).sum()) for c in (0, 1)]
            for r in (0, 1)]


@dataclass
class EvalReport:
    model_kind: str
    seed: int
    train_balanced_accuracy: float
    test_balanced_accuracy: float
    per_class_recall: dict = field(default_factory=dict)
    confusion: list = field(default_factory=list)
    n_train: int = 0
    n_test: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"model_kind": self.model_kind, "seed": self.seed,
                "train_balanced_accuracy": self.train_balanced_accuracy,
                "test_balanced_accuracy": self.test_balanced_accuracy,
                "per_class_recall": self.per_class_recall,
                "confusion_matrix": self.confusion,
                "n_train": self.n_train, "n_test": self.n_test,
                **self.extra}


def evaluate_predictions(model_kind: str, seed: int,
                         y_train, p_train, y_test, p_test,
                         threshold: float = 0.5, extra: dict | None = None) -> EvalReport:
    """Balanced-accuracy report from class-1 probabilities."""
    pred_train = (np.asarray(p_train) >= threshold).astype(int)
    pred_test = (np.asarray(p_test) >= threshold).astype(int)
    y_test = np.asarray(y_test)
    recalls = {}
    for cls in (0, 1):
        mask = y_test == cls
        if mask.any():
            recalls[str(cls)] = float((pred_test[mask] == cls).mean())
    return EvalReport(
        model_kind=model_kind, seed=seed,
        train_balanced_accuracy=balanced_accuracy(y_train, pred_train),
        test_balanced_accuracy=balanced_accuracy(y_test, pred_test),
        per_class_recall=recalls,
        confusion=confusion_matrix(y_test, pred_test),
        n_train=len(pred_train), n_test=len(pred_test),
        extra=extra or {})


def ensemble_predict(p_eeg: np.ndarray, p_eye: np.ndarray, w_eeg: float = 0.8,
                     w_eye: float = 0.2) -> tuple[np.ndarray, int]:
    """Weighted fusion w_eeg * p_eeg + w_eye * p_eye.

    A NaN eye probability marks a trial without a usable gaze trace; those
    fall back to the EEG probability. Returns (fused, n_fallback).
    """
    if abs(w_eeg + w_eye - 1.0) > 1e-9:
        raise DataError("ensemble weights must sum to 1")
    p_eeg = np.asarray(p_eeg, dtype=np.float64)
    p_eye = np.asarray(p_eye, dtype=np.float64)
    if p_eeg.shape != p_eye.shape:
        raise DataError("probability arrays must align")
    if np.nanmin(p_eeg, initial=0.0) < 0 or np.nanmax(p_eeg, initial=1.0) > 1 \
            or np.nanmin(p_eye, initial=0.0) < 0 or np.nanmax(p_eye, initial=1.0) > 1:
        raise DataError("probabilities must lie in [0, 1]")
    missing = np.isnan(p_eye)
    fused = np.where(missing, p_eeg, w_eeg * p_eeg + w_eye * p_eye)
    return fused, int(missing.sum())
