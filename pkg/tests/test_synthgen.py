import numpy as np
import pytest

from confuseq import dsp, eeg_prep, erp_stats, gaze, synthgen
from confuseq.core import ConditionLabel, GazeParams, read_report
from confuseq.errors import DataError


def small_spec(**kw):
    defaults = dict(class_counts=(8, 4, 4), seed=11)
    defaults.update(kw)
    return synthgen.SynthSpec(**defaults)


class TestSpec:
    def test_default_counts_match_study(self):
        spec = synthgen.SynthSpec()
        assert spec.class_counts == (120, 99, 81)
        assert len(spec.channels) == 64
        assert spec.sample_rate_hz == 512.0

    def test_affected_channels_in_montage(self):
        with pytest.raises(DataError, match="montage"):
            synthgen.SynthSpec(affected_channels=("XX",))

    def test_dict_round_trip(self):
        spec = small_spec(theta_shift=3.0)
        again = synthgen.SynthSpec.from_dict(spec.to_dict())
        assert again == spec

    def test_unknown_field(self):
        with pytest.raises(DataError, match="unknown"):
            synthgen.SynthSpec.from_dict({"bogus": 1})


class TestSynthEeg:
    def test_recording_invariants_and_counts(self):
        spec = small_spec()
        rec, labels, truth = synthgen.synth_eeg(spec)
        n = round(spec.trial_s * spec.sample_rate_hz)
        assert rec.data.shape == (64, 16 * n)
        assert len(rec.events) == 16
        counts = {lab: 0 for lab in ConditionLabel}
        for lab in labels.values():
            counts[lab] += 1
        assert counts[ConditionLabel.CONTROL] == 8
        assert counts[ConditionLabel.FACTUAL_CONFUSION] == 4
        assert counts[ConditionLabel.CONTEXTUAL_CONFUSION] == 4

    def test_deterministic(self):
        r1, _, _ = synthgen.synth_eeg(small_spec())
        r2, _, _ = synthgen.synth_eeg(small_spec())
        np.testing.assert_array_equal(r1.data, r2.data)

    def test_line_component_and_notch_removal(self):
        spec = small_spec()
        rec, _, _ = synthgen.synth_eeg(spec)
        fs = rec.sample_rate_hz
        seg = rec.data[0, :round(10 * fs)].astype(float)
        before = dsp.welch_psd(seg, fs, 512)
        peak_hz = before.freqs_hz[np.argmax(before.psd[before.freqs_hz > 30])
                                  + int(np.sum(before.freqs_hz <= 30))]
        assert abs(peak_hz - 60.0) < 1.5
        notch = dsp.design_notch(60.0, 1.0, 1.0, fs)
        # fine frequency resolution so the line is resolved from its
        # neighborhood rather than smeared by window leakage
        fine_before = dsp.welch_psd(seg, fs, 2048)
        fine_after = dsp.welch_psd(dsp.apply_filter(notch, seg), fs, 2048)
        hz60 = int(np.argmin(np.abs(fine_before.freqs_hz - 60.0)))
        reduction_db = 10 * np.log10(fine_before.psd[hz60] / fine_after.psd[hz60])
        assert reduction_db >= 30.0

    def test_n400_recovered_by_average_erp(self):
        spec = synthgen.SynthSpec(class_counts=(10, 60, 0), seed=5)
        rec, labels, _ = synthgen.synth_eeg(spec)
        epochs = eeg_prep.epoch(rec, spec.trial_s, labels)
        epochs = eeg_prep.zscore_channels(epochs)
        erp = erp_stats.average_erp(epochs, ConditionLabel.FACTUAL_CONFUSION)
        ch = epochs.channels.index("T7")
        peak_s = np.argmin(erp.data[ch]) / epochs.sample_rate_hz
        assert abs(peak_s - spec.n400_latency_s) <= 0.02

    def test_no_injection_no_effect(self):
        # small-n variant of the 20-seed acceptance bound
        fracs = []
        for seed in range(5):
            spec = synthgen.SynthSpec(class_counts=(20, 10, 10), seed=300 + seed,
                                      n400_amplitude_uv=0.0, theta_shift=1.0)
            rec, labels, _ = synthgen.synth_eeg(spec)
            epochs = eeg_prep.zscore_channels(
                eeg_prep.epoch(rec, spec.trial_s, labels))
            smap = erp_stats.significance_map(
                epochs, (ConditionLabel.CONTROL, ConditionLabel.FACTUAL_CONFUSION),
                alpha=0.02)
            fracs.append(smap.significant.mean())
        assert np.mean(fracs) <= 0.08

    def test_clean_channels_never_flagged(self):
        for seed in range(3):
            spec = small_spec(seed=500 + seed)
            rec, _, _ = synthgen.synth_eeg(spec)
            report = eeg_prep.detect_bad_channels(rec)
            assert report.verdicts == ("good",) * 64


class TestEffectMonotonicity:
    def test_significant_count_nondecreasing_in_amplitude(self):
        # amplitude ladder x seeds; +/- 1 channel of noise allowed
        ladder = (0.0, 30.0, 70.0, 140.0)
        for seed in range(3):
            counts = []
            for amp in ladder:
                spec = synthgen.SynthSpec(class_counts=(14, 7, 7),
                                          seed=700 + seed,
                                          n400_amplitude_uv=amp,
                                          theta_shift=1.0)
                rec, labels, _ = synthgen.synth_eeg(spec)
                epochs = eeg_prep.zscore_channels(
                    eeg_prep.epoch(rec, spec.trial_s, labels))
                smap = erp_stats.significance_map(
                    epochs,
                    (ConditionLabel.CONTROL, ConditionLabel.FACTUAL_CONFUSION),
                    alpha=0.02)
                counts.append(int(smap.significant.sum()))
            for lo, hi in zip(counts, counts[1:]):
                assert hi >= lo - 1, counts


class TestSynthGaze:
    def test_control_cluster_covers_text(self):
        spec = small_spec()
        stimuli, targets = synthgen.synth_stimuli(spec)
        streams = synthgen.synth_gaze(spec, stimuli, targets)
        params = GazeParams()
        checked = 0
        for stim, stream in zip(stimuli, streams):
            if stim.condition is not ConditionLabel.CONTROL:
                continue
            result = gaze.extract_gaze_features(stream, params)
            filtered = gaze.filter_confidence(stream, params.confidence_threshold)
            boxes = [w.box for w in stim.words]
            on_text = np.zeros(len(filtered), dtype=bool)
            for x0, y0, x1, y1 in boxes:
                on_text |= ((filtered.x >= x0) & (filtered.x <= x1)
                            & (filtered.y >= y0) & (filtered.y <= y1))
            selected = np.zeros(len(filtered), dtype=bool)
            selected[result.selected.indices] = True
            coverage = (selected & on_text).sum() / max(1, on_text.sum())
            assert coverage >= 0.8, (stim.trial_id, coverage)
            checked += 1
        assert checked == 8

    def test_confusion_target_word_gets_most_dwell(self):
        spec = small_spec()
        stimuli, targets = synthgen.synth_stimuli(spec)
        streams = synthgen.synth_gaze(spec, stimuli, targets)
        params = GazeParams()
        checked = 0
        for stim, stream in zip(stimuli, streams):
            if stim.condition is ConditionLabel.CONTROL:
                continue
            filtered = gaze.filter_confidence(stream, params.confidence_threshold)
            fixations = gaze.detect_fixations(filtered,
                                              params.fixation_dispersion,
                                              params.fixation_min_duration_s)
            per_word, _ = gaze.align_to_words(fixations, stim,
                                              params.align_tolerance)
            durations = [w["total_duration"] for w in per_word]
            assert int(np.argmax(durations)) == targets[stim.trial_id], \
                stim.trial_id
            checked += 1
        assert checked == 8

    def test_outliers_low_confidence_and_filtered(self):
        spec = small_spec()
        stimuli, targets = synthgen.synth_stimuli(spec)
        streams = synthgen.synth_gaze(spec, stimuli, targets)
        threshold = GazeParams().confidence_threshold
        stream = streams[0]
        n_low = int((stream.c < threshold).sum())
        assert n_low == round(spec.outlier_rate * len(stream))
        kept = gaze.filter_confidence(stream, threshold)
        assert len(kept) == len(stream) - n_low

    def test_deterministic(self):
        spec = small_spec()
        stimuli, targets = synthgen.synth_stimuli(spec)
        s1 = synthgen.synth_gaze(spec, stimuli, targets)
        s2 = synthgen.synth_gaze(spec, stimuli, targets)
        for a, b in zip(s1, s2):
            np.testing.assert_array_equal(a.x, b.x)
            np.testing.assert_array_equal(a.c, b.c)


class TestSynthDataset:
    def test_files_manifest_and_determinism(self, tmp_path):
        spec = small_spec()
        m1 = synthgen.synth_dataset(spec, tmp_path / "a")
        m2 = synthgen.synth_dataset(spec, tmp_path / "b")
        for name in ("eeg.csv", "eeg.events.jsonl", "gaze.csv", "stimuli.json",
                     "manifest.json"):
            assert (tmp_path / "a" / name).exists()
            assert (tmp_path / "a" / name).read_bytes() \
                == (tmp_path / "b" / name).read_bytes()
        assert m1["class_counts"] == {"control": 8, "factual_confusion": 4,
                                      "contextual_confusion": 4}
        manifest = read_report(tmp_path / "a" / "manifest.json")
        assert manifest["spec"]["seed"] == 11
        assert manifest["truth"]["affected_channels"] == list(synthgen.TEMPORAL_SET)

    def test_default_manifest_counts(self, tmp_path):
        # full-size label bookkeeping without generating signals
        spec = synthgen.SynthSpec()
        labels = synthgen.trial_labels(spec)
        assert len(labels) == 300
        assert labels.count(ConditionLabel.CONTROL) == 120
        assert labels.count(ConditionLabel.FACTUAL_CONFUSION) == 99
        assert labels.count(ConditionLabel.CONTEXTUAL_CONFUSION) == 81
