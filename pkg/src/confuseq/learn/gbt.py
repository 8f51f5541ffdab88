"""Second-order gradient boosting on logistic loss with exact greedy splits.

Mirrors the reference library defaults at desk scale: 100 estimators, depth
cap 60 (trees grow until purity long before that), learning rate 0.3, L2
lambda 1, min_child_weight 1. Split candidates are midpoints between adjacent
sorted feature values; ties are broken toward the lower feature index and
lower threshold, which makes training fully deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError

_TINY_GRAD = 1e-12


@dataclass
class Tree:
    feature: np.ndarray     # ints, -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray       # leaf contribution (learning rate already applied)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        is_leaf = self.feature < 0
        while not is_leaf[node].all():
            f = self.feature[node]
            thr = self.threshold[node]
            active = ~is_leaf[node]
            go_left = np.zeros(len(x), dtype=bool)
            go_left[active] = x[np.flatnonzero(active), f[active]] < thr[active]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(is_leaf[node], node, nxt)
        return self.value[node]


@dataclass
class GbtModel:
    trees: list[Tree]
    base_score: float
    learning_rate: float
    n_estimators: int
    max_depth: int
    n_features: int
    feature_names: tuple[str, ...] | None = None
    seed: int = 0
    train_loss: list[float] = field(default_factory=list)

    def predict_margin(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DataError(f"feature width {x.shape} does not match the "
                            f"{self.n_features} training features")
        margin = np.full(len(x), self.base_score)
        for tree in self.trees:
            margin += tree.predict(x)
        return margin


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_loss(y: np.ndarray, margin: np.ndarray) -> float:
    # mean(softplus(margin) - y * margin), numerically stable
    softplus = np.logaddexp(0.0, margin)
    return float((softplus - y * margin).mean())


def _best_split(x: np.ndarray, g: np.ndarray, h: np.ndarray, lam: float,
                min_child_weight: float):
    """Best (gain, feature, threshold) over all features; None when no valid
    candidate exists. Vectorized prefix-sum scan per feature."""
    n, d = x.shape
    g_total, h_total = g.sum(), h.sum()
    parent = g_total * g_total / (h_total + lam)
    best = None
    for j in range(d):
        order = np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        gl = np.cumsum(g[order])[:-1]
        hl = np.cumsum(h[order])[:-1]
        cut = xs[:-1] < xs[1:]
        if not cut.any():
            continue
        gr = g_total - gl
        hr = h_total - hl
        valid = cut & (hl >= min_child_weight) & (hr >= min_child_weight)
        if not valid.any():
            continue
        gains = np.where(valid,
                         gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent,
                         -np.inf)
        k = int(np.argmax(gains))           # first max -> lowest threshold
        gain = 0.5 * gains[k]
        if best is None or gain > best[0]:  # strict -> lowest feature index
            best = (float(gain), j, float((xs[k] + xs[k + 1]) / 2.0))
    return best


def _build_tree(x: np.ndarray, g: np.ndarray, h: np.ndarray, max_depth: int,
                learning_rate: float, lam: float, min_child_weight: float) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def leaf(g_sum: float, h_sum: float) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(-learning_rate * g_sum / (h_sum + lam))
        return len(feature) - 1

    def grow(idx: np.ndarray, depth: int) -> int:
        g_sum, h_sum = g[idx].sum(), h[idx].sum()
        if depth >= max_depth or len(idx) < 2 \
                or np.abs(g[idx]).sum() < _TINY_GRAD:
            return leaf(g_sum, h_sum)
        split = _best_split(x[idx], g[idx], h[idx], lam, min_child_weight)
        if split is None or split[0] < 0.0:
            return leaf(g_sum, h_sum)
        _, j, thr = split
        go_left = x[idx, j] < thr
        if not go_left.any() or go_left.all():
            return leaf(g_sum, h_sum)
        node = len(feature)
        feature.append(j)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(len(x)), 0)
    return Tree(feature=np.array(feature, dtype=np.int64),
                threshold=np.array(threshold, dtype=np.float64),
                left=np.array(left, dtype=np.int64),
                right=np.array(right, dtype=np.int64),
                value=np.array(value, dtype=np.float64))


def train_gbt(features: np.ndarray, labels: np.ndarray, n_estimators: int = 100,
              max_depth: int = 60, learning_rate: float = 0.3, seed: int = 0,
              lam: float = 1.0, min_child_weight: float = 1.0,
              feature_names=None, base_score: float = 0.0) -> GbtModel:
    """Boosted binary classifier on 0/1 labels.

    The procedure is deterministic (no subsampling); the seed is recorded in
    the model metadata for provenance only.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise DataError("features must be 2-D with one label per row")
    if not np.isfinite(x).all():
        raise DataError("features contain NaN/Inf")
    classes = np.unique(y)
    if not np.isin(classes, (0.0, 1.0)).all():
        raise DataError("labels must be binary 0/1")
    if len(classes) < 2:
        raise DataError("training needs both classes present")

    model = GbtModel(trees=[], base_score=base_score, learning_rate=learning_rate,
                     n_estimators=n_estimators, max_depth=max_depth,
                     n_features=x.shape[1],
                     feature_names=tuple(feature_names) if feature_names else None,
                     seed=seed)
    margin = np.full(len(y), base_score)
    model.train_loss.append(_log_loss(y, margin))
    for _ in range(n_estimators):
        p = _sigmoid(margin)
        g = p - y
        h = p * (1.0 - p)
        tree = _build_tree(x, g, h, max_depth, learning_rate, lam,
                           min_child_weight)
        if tree.n_nodes == 1 and abs(tree.value[0]) < 1e-12:
            break       # nothing left to fit
        model.trees.append(tree)
        margin += tree.predict(x)
        model.train_loss.append(_log_loss(y, margin))
    return model


def predict_gbt(model: GbtModel, features: np.ndarray) -> np.ndarray:
    """Probability of class 1 per row."""
    return _sigmoid(model.predict_margin(np.asarray(features, dtype=np.float64)))


def save_gbt(path: str | Path, model: GbtModel) -> None:
    doc = {
        "kind": "gbt", "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "n_estimators": model.n_estimators, "max_depth": model.max_depth,
        "n_features": model.n_features, "seed": model.seed,
        "feature_names": list(model.feature_names) if model.feature_names else None,
        "train_loss": model.train_loss,
        "trees": [{"feature": t.feature.tolist(),
                   "threshold": t.threshold.tolist(),
                   "left": t.left.tolist(), "right": t.right.tolist(),
                   "value": t.value.tolist()} for t in model.trees],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_gbt(path: str | Path) -> GbtModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("kind") != "gbt":
        raise DataError(f"{path}: not a GBT model file")
    trees = [Tree(feature=np.array(t["feature"], dtype=np.int64),
                  threshold=np.array(t["threshold"], dtype=np.float64),
                  left=np.array(t["left"], dtype=np.int64),
                  right=np.array(t["right"], dtype=np.int64),
                  value=np.array(t["value"], dtype=np.float64))
             for t in doc["trees"]]
    names = doc.get("feature_names")
    return GbtModel(trees=trees, base_score=doc["base_score"],
                    learning_rate=doc["learning_rate"],
                    n_estimators=doc["n_estimators"], max_depth=doc["max_depth"],
                    n_features=doc["n_features"],
                    feature_names=tuple(names) if names else None,
                    seed=doc.get("seed", 0),
                    train_loss=list(doc.get("train_loss", [])))
