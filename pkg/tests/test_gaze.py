import numpy as np
import pytest

from confuseq import gaze
from confuseq.core import ConditionLabel, GazeParams, StimulusTrial, Word
from confuseq.errors import DataError

from conftest import make_stream


def brute_force_dbscan(points, eps, min_pts):
    """Independent reference: O(N^2) core detection, transitive closure over
    core points, clusters numbered by first core point in index order, border
    points claimed by the lowest-numbered adjacent cluster."""
    n = len(points)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            d2 = (points[i, 0] - points[j, 0]) ** 2 + (points[i, 1] - points[j, 1]) ** 2
            adj[i, j] = d2 <= eps * eps
    core = adj.sum(axis=1) >= min_pts
    labels = np.full(n, -1, dtype=int)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        # flood over connected core points
        member = np.zeros(n, dtype=bool)
        member[i] = True
        changed = True
        while changed:
            changed = False
            for a in range(n):
                if member[a] and core[a]:
                    for b in range(n):
                        if core[b] and adj[a, b] and not member[b]:
                            member[b] = True
                            changed = True
        labels[member] = cluster
        cluster += 1
    for i in range(n):      # border points
        if labels[i] == -1:
            adjacent = [labels[j] for j in range(n)
                        if core[j] and adj[i, j] and labels[j] >= 0]
            if adjacent:
                labels[i] = min(adjacent)
    return labels


class TestDbscan:
    def test_two_blobs_one_noise(self, rng):
        pts = np.vstack([
            np.array([0.3, 0.5]) + 0.01 * rng.standard_normal((20, 2)) / 3,
            np.array([0.7, 0.5]) + 0.01 * rng.standard_normal((20, 2)) / 3,
            [[0.5, 0.9]]])
        labels = gaze.dbscan(pts, eps=0.05, min_pts=5)
        assert set(labels[:20]) == {0}
        assert set(labels[20:40]) == {1}
        assert labels[40] == -1

    def test_identical_points_single_cluster(self):
        pts = np.tile([0.4, 0.4], (10, 1))
        labels = gaze.dbscan(pts, eps=0.01, min_pts=5)
        assert set(labels) == {0}

    def test_sparse_points_all_noise(self, rng):
        pts = rng.uniform(size=(4, 2))
        labels = gaze.dbscan(pts, eps=1e-6, min_pts=5)
        assert set(labels) == {-1}

    def test_matches_brute_force_reference(self):
        # exact agreement (not just up to relabeling): both implementations
        # number clusters by first core point and give border points to the
        # lowest adjacent cluster
        for case in range(100):
            r = np.random.default_rng(case)
            n = int(r.integers(5, 120)) if case < 90 else int(r.integers(200, 500))
            k = int(r.integers(1, 5))
            centers = r.uniform(0.1, 0.9, size=(k, 2))
            pts = centers[r.integers(0, k, n)] + 0.02 * r.standard_normal((n, 2))
            eps = float(r.uniform(0.01, 0.08))
            min_pts = int(r.integers(1, 8))
            ours = gaze.dbscan(pts, eps, min_pts)
            ref = brute_force_dbscan(pts, eps, min_pts)
            np.testing.assert_array_equal(ours, ref)

    def test_parameter_validation(self):
        with pytest.raises(DataError):
            gaze.dbscan(np.zeros((3, 2)), eps=0.0, min_pts=3)
        with pytest.raises(DataError):
            gaze.dbscan(np.zeros((3, 2)), eps=0.1, min_pts=0)


class TestVerticalUniformity:
    def test_even_split(self):
        assert gaze.vertical_uniformity([1, 1, 1, 3, 3, 3]) == 2.0

    def test_floor_split(self):
        assert gaze.vertical_uniformity([0, 0, 3, 3, 3]) == 3.0

    def test_constant(self):
        assert gaze.vertical_uniformity([0.4] * 7) == pytest.approx(0.0, abs=1e-12)

    def test_needs_two(self):
        with pytest.raises(DataError):
            gaze.vertical_uniformity([1.0])


class TestSelectCluster:
    def _cluster(self, label, n, u):
        return gaze.GazeCluster(label=label, indices=np.arange(n), n=n, u=u)

    def test_spec_arithmetic(self):
        a = self._cluster(0, 100, 0.30)
        b = self._cluster(1, 80, 0.02)
        best = gaze.select_cluster([a, b], w_size=0.01, w_uniformity=1.0)
        assert best.label == 1
        assert best.score == pytest.approx(0.78)

    def test_single_cluster(self):
        only = self._cluster(0, 10, 0.5)
        assert gaze.select_cluster([only], 0.01, 1.0).label == 0

    def test_tie_break_larger_n(self):
        a = self._cluster(0, 40, 0.0)
        b = self._cluster(1, 50, 0.1)   # same score with w=(0.01, 1.0)
        best = gaze.select_cluster([a, b], 0.01, 1.0)
        assert best.label == 1 and best.n == 50

    def test_tie_break_lower_index(self):
        a = self._cluster(0, 50, 0.1)
        b = self._cluster(1, 50, 0.1)
        assert gaze.select_cluster([a, b], 0.01, 1.0).label == 0

    def test_no_clusters(self):
        with pytest.raises(DataError, match="unusable"):
            gaze.select_cluster([], 0.01, 1.0)

    def test_joint_weight_rescaling_invariance(self, rng):
        clusters = [self._cluster(i, int(n), float(u)) for i, (n, u) in
                    enumerate(zip(rng.integers(5, 200, 8),
                                  rng.uniform(0, 0.5, 8)))]
        base = gaze.select_cluster(clusters, 0.01, 1.0).label
        scaled = gaze.select_cluster(clusters, 0.01 * 7.3, 1.0 * 7.3).label
        assert base == scaled


class TestFixations:
    def _path(self, dwells, rate=100.0, jump=0.2):
        """Dwell segments of given durations separated by position jumps."""
        t, x, y = [], [], []
        now, px = 0.0, 0.1
        for dur in dwells:
            n = int(round(dur * rate))
            for i in range(n):
                t.append(now)
                x.append(px)
                y.append(0.5)
                now += 1.0 / rate
            px += jump
        return make_stream(t=t, x=x, y=y, c=[0.9] * len(t))

    def test_three_dwells(self):
        stream = self._path([0.2, 0.2, 0.2])
        fixations = gaze.detect_fixations(stream)
        assert len(fixations) == 3
        for k, f in enumerate(fixations):
            assert f.centroid[0] == pytest.approx(0.1 + 0.2 * k, abs=1e-6)
            assert f.centroid[1] == pytest.approx(0.5, abs=1e-6)

    def test_fast_sweep_no_fixation(self):
        n = 100
        stream = make_stream(t=np.arange(n) / 100.0,
                             x=np.linspace(0.0, 1.0, n),
                             y=[0.5] * n, c=[0.9] * n)
        assert gaze.detect_fixations(stream) == []

    def test_short_dwell_rejected(self):
        stream = self._path([0.09])
        assert gaze.detect_fixations(stream) == []

    def test_fixations_contiguous_nonoverlapping(self, rng):
        stream = self._path([0.3, 0.15, 0.5])
        fixations = gaze.detect_fixations(stream)
        for a, b in zip(fixations, fixations[1:]):
            assert a.onset_s + a.duration_s <= b.onset_s + 1e-9


class TestEntropy:
    def test_single_cell(self):
        assert gaze.gaze_entropy(np.full(50, 0.1), np.full(50, 0.1)) == 0.0

    def test_four_equal_cells(self):
        x = np.array([0.05, 0.9, 0.05, 0.9] * 10)
        y = np.array([0.05, 0.05, 0.9, 0.9] * 10)
        assert gaze.gaze_entropy(x, y) == pytest.approx(2.0)

    def test_upper_bound(self, rng):
        h = gaze.gaze_entropy(rng.uniform(size=1000), rng.uniform(size=1000))
        assert 0.0 <= h <= np.log2(64)

    def test_permutation_invariance(self, rng):
        x, y = rng.uniform(size=300), rng.uniform(size=300)
        perm = rng.permutation(300)
        assert gaze.gaze_entropy(x, y) == gaze.gaze_entropy(x[perm], y[perm])


class TestFilterConfidence:
    def test_zero_threshold_identity(self):
        s = make_stream(c=[0.1, 0.5, 0.9])
        assert len(gaze.filter_confidence(s, 0.0)) == 3

    def test_impossible_threshold_empty(self):
        s = make_stream(c=[0.1, 0.5, 0.9])
        assert len(gaze.filter_confidence(s, 1.01)) == 0

    def test_mixed(self):
        s = make_stream(c=[0.3, 0.9, 0.8])
        assert len(gaze.filter_confidence(s, 0.8)) == 2


class TestGazeFeatures:
    def test_single_dwell(self):
        n = 60
        stream = make_stream(t=np.arange(n) / 100.0, x=[0.4] * n, y=[0.4] * n,
                             c=[0.9] * n)
        result = gaze.extract_gaze_features(stream, GazeParams())
        f = result.features
        assert f.n_fixations == 1
        assert f.mean_velocity == pytest.approx(0.0, abs=1e-12)
        assert f.stationary_entropy == 0.0
        assert f.n_clusters == 1
        assert f.selected_cluster_fraction == 1.0

    def test_two_dwell_path(self):
        rate = 100.0
        t, x, y = [], [], []
        now = 0.0
        for cx, dur in ((0.2, 0.3), (0.6, 0.4)):
            for _ in range(int(dur * rate)):
                t.append(now)
                x.append(cx)
                y.append(0.5)
                now += 1 / rate
        stream = make_stream(t=t, x=x, y=y, c=[0.9] * len(t))
        params = GazeParams(dbscan_eps=0.05)
        result = gaze.extract_gaze_features(stream, params)
        assert result.features.n_fixations == 2
        expected = (0.3 - 1 / rate) + (0.4 - 1 / rate)
        assert result.features.total_fixation_time == pytest.approx(
            expected, abs=2 / rate)

    def test_time_dilation_halves_velocity(self):
        n = 50
        x = np.linspace(0.3, 0.5, n)
        s1 = make_stream(t=np.arange(n) / 100.0, x=x, y=[0.5] * n, c=[0.9] * n)
        s2 = make_stream(t=2 * np.arange(n) / 100.0, x=x, y=[0.5] * n,
                         c=[0.9] * n)
        f1 = gaze.extract_gaze_features(s1, GazeParams())
        f2 = gaze.extract_gaze_features(s2, GazeParams())
        assert f2.features.mean_velocity == pytest.approx(
            f1.features.mean_velocity / 2, rel=1e-9)

    def test_empty_after_filter_unusable(self):
        s = make_stream(c=[0.1, 0.2, 0.3])
        with pytest.raises(DataError, match="unusable"):
            gaze.extract_gaze_features(s, GazeParams(confidence_threshold=0.6))


class TestResampleTrace:
    def test_two_point_ramp(self):
        trace = gaze.resample_trace(np.array([0.0, 1.0]), np.array([0.0, 1.0]),
                                    np.array([0.0, 1.0]), out_len=1000)
        assert trace.shape == (2, 1000)
        # z-scored straight ramp: strictly increasing, mean 0, unit variance
        assert np.all(np.diff(trace[0]) > 0)
        np.testing.assert_allclose(trace.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(trace.std(axis=1), 1.0, atol=1e-12)

    def test_uniform_input_identity_up_to_zscore(self, rng):
        t = np.linspace(0.0, 1.0, 1000)
        x = rng.standard_normal(1000).cumsum()
        y = rng.standard_normal(1000).cumsum()
        trace = gaze.resample_trace(t, x, y, out_len=1000)
        np.testing.assert_allclose(trace[0], (x - x.mean()) / x.std(),
                                   atol=1e-9)
        np.testing.assert_allclose(trace[1], (y - y.mean()) / y.std(),
                                   atol=1e-9)

    def test_constant_channel_zeros(self):
        t = np.linspace(0.0, 1.0, 10)
        trace = gaze.resample_trace(t, np.full(10, 0.5), np.linspace(0, 1, 10))
        assert np.all(trace[0] == 0.0)

    def test_too_few_samples(self):
        with pytest.raises(DataError, match="unusable"):
            gaze.resample_trace(np.array([0.0]), np.array([0.5]),
                                np.array([0.5]))


class TestAlignment:
    def _stimulus(self):
        words = (Word("alpha", (0.1, 0.4, 0.2, 0.45)),
                 Word("beta", (0.25, 0.4, 0.35, 0.45)),
                 Word("gamma", (0.4, 0.4, 0.5, 0.45)))
        return StimulusTrial(trial_id=0, condition=ConditionLabel.CONTROL,
                             words=words)

    def _fixation(self, x, y, duration=0.2):
        return gaze.Fixation(onset_s=0.0, duration_s=duration,
                             centroid=(x, y), n_samples=10)

    def test_centroid_inside_box(self):
        per_word, unassigned = gaze.align_to_words(
            [self._fixation(0.45, 0.42)], self._stimulus())
        assert per_word[2]["fixation_count"] == 1
        assert unassigned == 0

    def test_near_box_within_tolerance(self):
        per_word, unassigned = gaze.align_to_words(
            [self._fixation(0.15, 0.46)], self._stimulus(), tolerance=0.03)
        assert per_word[0]["fixation_count"] == 1

    def test_far_from_every_box(self):
        per_word, unassigned = gaze.align_to_words(
            [self._fixation(0.8, 0.8)], self._stimulus(), tolerance=0.03)
        assert unassigned == 1
        assert all(w["fixation_count"] == 0 for w in per_word)

    def test_durations_accumulate(self):
        fixes = [self._fixation(0.15, 0.42, 0.2),
                 self._fixation(0.16, 0.43, 0.3)]
        per_word, _ = gaze.align_to_words(fixes, self._stimulus())
        assert per_word[0]["total_duration"] == pytest.approx(0.5)
