"""Gaze preprocessing: confidence filtering, DBSCAN clustering, cluster
scoring and selection, fixation detection, gaze features, CNN input traces,
and gaze-to-word alignment.

Cluster selection maximizes ``n_k * w_size - u_k * w_uniformity`` with
nonnegative weights: bigger clusters win, vertically drifting ones are
penalized. The vertical uniformity u_k is the absolute difference between the
mean y of the first floor(n/2) samples and the mean y of the rest, in time
order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .core import GazeParams, GazeStream, StimulusTrial
from .errors import DataError


@dataclass(frozen=True)
class GazeCluster:
    label: int
    indices: np.ndarray     # indices into the filtered trial stream, time order
    n: int
    u: float
    score: float = 0.0


@dataclass(frozen=True)
class Fixation:
    onset_s: float
    duration_s: float
    centroid: tuple[float, float]
    n_samples: int


def filter_confidence(stream: GazeStream, confidence_threshold: float) -> GazeStream:
    """Keep samples with confidence >= threshold, preserving order."""
    keep = stream.c >= confidence_threshold
    return GazeStream(trial_id=stream.trial_id, t=stream.t[keep],
                      x=stream.x[keep], y=stream.y[keep], c=stream.c[keep])


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density clustering with Euclidean metric; returns labels, -1 = noise.

    Clusters are numbered in order of their first core point, scanning points
    by index, so the labeling is deterministic.
    """
    if eps <= 0:
        raise DataError("eps must be positive")
    if min_pts < 1:
        raise DataError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels

    # Neighborhoods include the point itself; precompute in blocks.
    eps2 = eps * eps
    neighbors: list[np.ndarray] = []
    block = max(1, int(4e6 // max(n, 1)))
    for start in range(0, n, block):
        chunk = pts[start:start + block]
        d2 = ((chunk[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        for row in d2:
            neighbors.append(np.flatnonzero(row <= eps2))

    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        seeds = neighbors[i]
        if len(seeds) < min_pts:
            continue                    # noise unless claimed as border later
        labels[i] = cluster
        queue = deque(seeds)
        while queue:
            j = queue.popleft()
            if labels[j] == -1:
                labels[j] = cluster     # border point
            if visited[j]:
                continue
            visited[j] = True
            labels[j] = cluster
            j_neighbors = neighbors[j]
            if len(j_neighbors) >= min_pts:
                queue.extend(j_neighbors)
        cluster += 1
    return labels


def vertical_uniformity(y_values: np.ndarray) -> float:
    """|mean(first half) - mean(second half)| with the split at floor(n/2)."""
    y = np.asarray(y_values, dtype=np.float64)
    n = len(y)
    if n < 2:
        raise DataError("vertical uniformity needs at least 2 samples")
    half = n // 2
    return float(abs(y[:half].mean() - y[half:].mean()))


def clusters_from_labels(labels: np.ndarray, y: np.ndarray) -> list[GazeCluster]:
    """Build per-cluster summaries (size and vertical uniformity)."""
    out = []
    for lab in range(labels.max() + 1 if len(labels) else 0):
        idx = np.flatnonzero(labels == lab)
        if len(idx) == 0:
            continue
        out.append(GazeCluster(label=lab, indices=idx, n=len(idx),
                               u=vertical_uniformity(y[idx])))
    return out


def select_cluster(clusters: list[GazeCluster], w_size: float,
                   w_uniformity: float) -> GazeCluster:
    """Argmax of n * w_size - u * w_uniformity; ties prefer the larger
    cluster, then the lower cluster label."""
    if not clusters:
        raise DataError("trial unusable: no gaze clusters")
    if w_uniformity < 0 or w_size < 0:
        raise DataError("cluster-score weights must be nonnegative")
    best = None
    for c in clusters:
        score = c.n * w_size - c.u * w_uniformity
        c = replace(c, score=score)
        if best is None or score > best.score \
                or (score == best.score and (c.n, -c.label) > (best.n, -best.label)):
            best = c
    return best


def detect_fixations(stream: GazeStream, dispersion_threshold: float = 0.02,
                     min_duration_s: float = 0.1) -> list[Fixation]:
    """Dispersion-threshold (I-DT) fixation detection.

    A window is a fixation candidate when (max-min)_x + (max-min)_y stays
    within the threshold; windows are grown greedily and must span at least
    the minimum duration.
    """
    t, x, y = stream.t, stream.x, stream.y
    n = len(t)
    fixations: list[Fixation] = []
    i = 0
    while i < n:
        # smallest window starting at i that spans the minimum duration
        j = i + 1
        while j < n and t[j - 1] - t[i] < min_duration_s:
            j += 1
        if t[j - 1] - t[i] < min_duration_s:
            break
        win_x, win_y = x[i:j], y[i:j]
        if (win_x.max() - win_x.min()) + (win_y.max() - win_y.min()) \
                <= dispersion_threshold:
            while j < n:
                nx = np.append(win_x, x[j])
                ny = np.append(win_y, y[j])
                if (nx.max() - nx.min()) + (ny.max() - ny.min()) \
                        > dispersion_threshold:
                    break
                win_x, win_y = nx, ny
                j += 1
            fixations.append(Fixation(
                onset_s=float(t[i]), duration_s=float(t[j - 1] - t[i]),
                centroid=(float(win_x.mean()), float(win_y.mean())),
                n_samples=j - i))
            i = j
        else:
            i += 1
    return fixations


def gaze_entropy(x: np.ndarray, y: np.ndarray, grid: int = 8) -> float:
    """Shannon entropy (bits) of the sample distribution over grid cells."""
    if len(x) == 0:
        raise DataError("gaze entropy needs at least 1 point")
    cx = np.clip((np.asarray(x) * grid).astype(int), 0, grid - 1)
    cy = np.clip((np.asarray(y) * grid).astype(int), 0, grid - 1)
    counts = np.bincount(cy * grid + cx, minlength=grid * grid)
    p = counts[counts > 0] / len(x)
    return float(-(p * np.log2(p)).sum())


GAZE_FEATURE_NAMES = (
    "n_fixations", "mean_fixation_duration", "total_fixation_time",
    "mean_velocity", "max_velocity", "stationary_entropy", "n_clusters",
    "selected_cluster_fraction", "selected_u", "vertical_range")


@dataclass(frozen=True)
class GazeFeatureVector:
    n_fixations: float
    mean_fixation_duration: float
    total_fixation_time: float
    mean_velocity: float
    max_velocity: float
    stationary_entropy: float
    n_clusters: float
    selected_cluster_fraction: float
    selected_u: float
    vertical_range: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in GAZE_FEATURE_NAMES],
                        dtype=np.float64)


@dataclass(frozen=True)
class GazeTrialResult:
    """Everything downstream stages need from one trial's gaze stream."""

    trial_id: int
    features: GazeFeatureVector
    trace: np.ndarray               # 2 x trace_len, z-scored
    fixations: list[Fixation]
    selected: GazeCluster
    n_filtered: int


def _velocities(stream: GazeStream) -> np.ndarray:
    if len(stream) < 2:
        return np.zeros(0)
    dt = np.diff(stream.t)
    dist = np.hypot(np.diff(stream.x), np.diff(stream.y))
    ok = dt > 0
    return dist[ok] / dt[ok]


def extract_gaze_features(stream: GazeStream, params: GazeParams) -> GazeTrialResult:
    """Per-trial gaze processing: filter, cluster, select, featurize, trace.

    Raises DataError("trial unusable: ...") when the filtered stream is empty,
    no cluster survives DBSCAN, or the selected cluster has fewer than 2
    samples.
    """
    filtered = filter_confidence(stream, params.confidence_threshold)
    if len(filtered) == 0:
        raise DataError(f"trial unusable: no samples above confidence "
                        f"{params.confidence_threshold}")
    points = np.column_stack([filtered.x, filtered.y])
    labels = dbscan(points, params.dbscan_eps, params.dbscan_min_pts)
    clusters = clusters_from_labels(labels, filtered.y)
    selected = select_cluster(clusters, params.w_size, params.w_uniformity)

    fixations = detect_fixations(filtered, params.fixation_dispersion,
                                 params.fixation_min_duration_s)
    velocities = _velocities(filtered)
    durations = [f.duration_s for f in fixations]
    features = GazeFeatureVector(
        n_fixations=float(len(fixations)),
        mean_fixation_duration=float(np.mean(durations)) if durations else 0.0,
        total_fixation_time=float(np.sum(durations)) if durations else 0.0,
        mean_velocity=float(velocities.mean()) if len(velocities) else 0.0,
        max_velocity=float(velocities.max()) if len(velocities) else 0.0,
        stationary_entropy=gaze_entropy(filtered.x, filtered.y,
                                        params.entropy_grid),
        n_clusters=float(len(clusters)),
        selected_cluster_fraction=selected.n / len(filtered),
        selected_u=selected.u,
        vertical_range=float(filtered.y.max() - filtered.y.min()))

    idx = selected.indices
    trace = resample_trace(filtered.t[idx], filtered.x[idx], filtered.y[idx],
                           params.trace_len)
    return GazeTrialResult(trial_id=stream.trial_id, features=features,
                           trace=trace, fixations=fixations, selected=selected,
                           n_filtered=len(filtered))


def resample_trace(t: np.ndarray, x: np.ndarray, y: np.ndarray,
                   out_len: int = 1000) -> np.ndarray:
    """x(t), y(t) linearly interpolated on a uniform grid over the span, then
    per-channel z-scored (constant channels map to zeros)."""
    if len(t) < 2:
        raise DataError("trial unusable: trace needs at least 2 samples")
    grid = np.linspace(t[0], t[-1], out_len)
    trace = np.vstack([np.interp(grid, t, x), np.interp(grid, t, y)])
    mean = trace.mean(axis=1, keepdims=True)
    std = trace.std(axis=1, keepdims=True)
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, (trace - mean) / safe, 0.0)


def _point_box_distance(px: float, py: float, box) -> float:
    x0, y0, x1, y1 = box
    dx = max(x0 - px, 0.0, px - x1)
    dy = max(y0 - py, 0.0, py - y1)
    return float(np.hypot(dx, dy))


def align_to_words(fixations: list[Fixation], stimulus: StimulusTrial,
                   tolerance: float = 0.03):
    """Assign each fixation to the word box containing its centroid, else the
    nearest box within tolerance. Returns (per-word list of
    {fixation_count, total_duration}, n_unassigned)."""
    counts = [0] * len(stimulus.words)
    durations = [0.0] * len(stimulus.words)
    unassigned = 0
    for fix in fixations:
        px, py = fix.centroid
        target = None
        for wi, word in enumerate(stimulus.words):
            x0, y0, x1, y1 = word.box
            if x0 <= px <= x1 and y0 <= py <= y1:
                target = wi
                break
        if target is None and stimulus.words:
            dists = [_point_box_distance(px, py, w.box) for w in stimulus.words]
            wi = int(np.argmin(dists))
            if dists[wi] <= tolerance:
                target = wi
        if target is None:
            unassigned += 1
        else:
            counts[target] += 1
            durations[target] += fix.duration_s
    per_word = [{"fixation_count": c, "total_duration": d}
                for c, d in zip(counts, durations)]
    return per_word, unassigned
