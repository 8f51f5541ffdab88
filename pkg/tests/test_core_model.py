import json

import numpy as np
import pytest

from confuseq.core import (ConditionLabel, FeatureTable, PipelineConfig,
                           Recording, Word, config_from_dict, config_to_dict,
                           load_config, read_eeg_csv, read_gaze_csv,
                           read_report, read_stimuli, sample_stimuli_path,
                           save_config, write_eeg_csv, write_gaze_csv,
                           write_report, write_stimuli)
from confuseq.errors import DataError, ParseError

from conftest import make_stream


class TestConditionLabel:
    def test_three_values(self):
        assert len(list(ConditionLabel)) == 3

    def test_binary_view(self):
        assert ConditionLabel.CONTROL.binary == 0
        assert ConditionLabel.FACTUAL_CONFUSION.binary == 1
        assert ConditionLabel.CONTEXTUAL_CONFUSION.binary == 1

    def test_unknown_label(self):
        with pytest.raises(DataError):
            ConditionLabel.from_string("bored")


class TestRecordingInvariants:
    def test_events_must_increase(self):
        with pytest.raises(DataError, match="monotone"):
            Recording(sample_rate_hz=512.0, channels=("a", "b", "c"),
                      data=np.zeros((3, 100)), events=((10, 0), (5, 1)))

    def test_duplicate_trial_ids(self):
        with pytest.raises(DataError, match="duplicate trial_id"):
            Recording(sample_rate_hz=512.0, channels=("a",),
                      data=np.zeros((1, 100)), events=((1, 0), (5, 0)))

    def test_nonpositive_rate(self):
        with pytest.raises(DataError):
            Recording(sample_rate_hz=0.0, channels=("a",), data=np.zeros((1, 4)))

    def test_channel_count_mismatch(self):
        with pytest.raises(DataError):
            Recording(sample_rate_hz=1.0, channels=("a", "b"),
                      data=np.zeros((3, 4)))


class TestEegCsv:
    def test_small_round_trip_shape(self, tmp_path):
        rec = Recording(sample_rate_hz=512.0, channels=("c1", "c2"),
                        data=np.array([[1.0, 2, 3, 4], [5.0, 6, 7, 8]]))
        path = tmp_path / "r.csv"
        write_eeg_csv(path, rec)
        back = read_eeg_csv(path)
        assert back.data.shape == (2, 4)
        assert back.sample_rate_hz == 512.0
        assert back.channels == ("c1", "c2")

    def test_bad_header(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("sample_rate=512\nc1\n1.0\n")
        with pytest.raises(ParseError, match=":1:"):
            read_eeg_csv(path)

    def test_ragged_rows(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("# sample_rate_hz=512.0\nc1,c2\n1.0,2.0\n3.0\n")
        with pytest.raises(ParseError):
            read_eeg_csv(path)

    def test_events_not_monotone(self, tmp_path):
        path = tmp_path / "r.csv"
        rec = Recording(sample_rate_hz=512.0, channels=("c1",),
                        data=np.zeros((1, 8)))
        write_eeg_csv(path, rec)
        ev = tmp_path / "r.events.jsonl"
        ev.write_text('{"sample": 5, "trial": 0}\n{"sample": 3, "trial": 1}\n')
        with pytest.raises(ParseError, match="monotone"):
            read_eeg_csv(path, ev)

    def test_round_trip_byte_identical(self, tmp_path, rng):
        # canonical files (those produced by the writer) must round-trip exactly
        for k in range(20):
            r = np.random.default_rng(k)
            n_ch = int(r.integers(1, 5))
            rec = Recording(sample_rate_hz=float(r.choice([256.0, 512.0])),
                            channels=tuple(f"c{i}" for i in range(n_ch)),
                            data=r.normal(scale=50.0, size=(n_ch, 64)),
                            events=((0, 0), (32, 1)))
            p1 = tmp_path / f"a{k}.csv"
            p2 = tmp_path / f"b{k}.csv"
            write_eeg_csv(p1, rec, events_path=tmp_path / f"a{k}.events.jsonl")
            back = read_eeg_csv(p1, tmp_path / f"a{k}.events.jsonl")
            write_eeg_csv(p2, back)
            assert p1.read_bytes() == p2.read_bytes()


class TestGazeCsv:
    def test_three_rows_one_trial(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text("t,x,y,c,trial_id\n0.0,0.1,0.2,0.9,3\n"
                        "0.1,0.2,0.2,0.8,3\n0.2,0.3,0.2,0.7,3\n")
        result = read_gaze_csv(path)
        assert len(result.streams) == 1
        assert len(result.streams[0]) == 3
        assert result.streams[0].trial_id == 3

    def test_confidence_out_of_range(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text("t,x,y,c,trial_id\n0.0,0.1,0.2,1.5,0\n")
        with pytest.raises(ParseError, match="confidence"):
            read_gaze_csv(path)

    def test_xy_clamped_and_counted(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text("t,x,y,c,trial_id\n0.0,1.2,0.2,0.9,0\n0.1,0.5,0.5,0.9,0\n")
        result = read_gaze_csv(path)
        assert result.n_clamped == 1
        assert result.streams[0].x[0] == 1.0

    def test_shuffled_time_sorted(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text("t,x,y,c,trial_id\n0.2,0.3,0.2,0.9,0\n"
                        "0.0,0.1,0.2,0.9,0\n0.1,0.2,0.2,0.9,0\n")
        stream = read_gaze_csv(path).streams[0]
        assert list(stream.t) == [0.0, 0.1, 0.2]
        assert list(stream.x) == [0.1, 0.2, 0.3]

    def test_write_read_round_trip(self, tmp_path):
        stream = make_stream(trial_id=2, t=[0.0, 0.5], x=[0.25, 0.75],
                             y=[0.5, 0.5], c=[0.9, 0.8])
        path = tmp_path / "g.csv"
        write_gaze_csv(path, [stream])
        back = read_gaze_csv(path).streams[0]
        np.testing.assert_allclose(back.x, stream.x, atol=1e-6)


class TestStimuli:
    def test_shipped_sample_file(self):
        trials = read_stimuli(sample_stimuli_path())
        assert len(trials) == 6
        counts = {}
        for t in trials:
            counts[t.condition] = counts.get(t.condition, 0) + 1
        assert all(v == 2 for v in counts.values())

    def test_degenerate_box(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"trials": [
            {"id": 0, "class": "control",
             "words": [{"text": "x", "box": [0.1, 0.1, 0.1, 0.2]}]}]}))
        with pytest.raises(DataError, match="degenerate box"):
            read_stimuli(path)

    def test_duplicate_trial_ids(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"trials": [
            {"id": 0, "class": "control", "words": []},
            {"id": 0, "class": "control", "words": []}]}))
        with pytest.raises(DataError, match="duplicate"):
            read_stimuli(path)

    def test_round_trip(self, tmp_path):
        trials = read_stimuli(sample_stimuli_path())
        path = tmp_path / "s.json"
        write_stimuli(path, trials)
        again = read_stimuli(path)
        assert again == trials


class TestReports:
    def test_numeric_precision_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        doc = {"values": [float(v) for v in rng.standard_normal(50)],
               "nested": {"pi": 3.14159265358979, "tiny": 1.2345678901234e-12}}
        path = tmp_path / "r.json"
        write_report(path, doc)
        back = read_report(path)
        for a, b in zip(doc["values"], back["values"]):
            assert abs(a - b) <= abs(a) * 1e-12
        assert back["nested"]["tiny"] == doc["nested"]["tiny"]


class TestFeatureTableInvariants:
    def test_rejects_nan(self):
        with pytest.raises(DataError, match="NaN"):
            FeatureTable(trial_ids=(0,), columns=("a",),
                         values=np.array([[np.nan]]),
                         labels=(ConditionLabel.CONTROL,))

    def test_shape_consistency(self):
        with pytest.raises(DataError):
            FeatureTable(trial_ids=(0, 1), columns=("a",),
                         values=np.zeros((1, 1)),
                         labels=(ConditionLabel.CONTROL,) * 2)


class TestConfig:
    def test_defaults_round_trip(self, tmp_path):
        cfg = PipelineConfig()
        path = tmp_path / "cfg.json"
        save_config(path, cfg)
        again = load_config(path)
        assert config_to_dict(again) == config_to_dict(cfg)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(DataError, match="sum to 1"):
            PipelineConfig(w_eeg=0.9, w_eye=0.2)

    def test_train_fraction_bounds(self):
        with pytest.raises(DataError):
            PipelineConfig(train_fraction=1.0)

    def test_nyquist_check(self):
        cfg = PipelineConfig()
        with pytest.raises(DataError, match="Nyquist"):
            cfg.check_rates(128.0)
        cfg.check_rates(512.0)

    def test_unknown_field_rejected(self):
        with pytest.raises(DataError, match="unknown config field"):
            config_from_dict({"no_such_field": 1})

    def test_band_order_preserved_through_json(self, tmp_path):
        cfg = PipelineConfig()
        path = tmp_path / "cfg.json"
        save_config(path, cfg)
        again = load_config(path)
        assert again.feature_bands.canonical == cfg.feature_bands.canonical
        assert again.feature_bands.sub == cfg.feature_bands.sub


class TestWord:
    def test_valid_box(self):
        Word(text="ok", box=(0.0, 0.0, 0.1, 0.1))

    def test_degenerate(self):
        with pytest.raises(DataError):
            Word(text="bad", box=(0.2, 0.0, 0.1, 0.1))
