"""confuseq command line: every stage plus an end-to-end pipeline.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.
CONFUSEQ_THREADS serves as the fallback for --threads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import containers, eeg_prep, erp_stats, gaze, learn, synthgen
from .core import (ConditionLabel, PipelineConfig, load_config, read_eeg_csv,
                   read_gaze_csv, read_stimuli, write_report)
from .eeg_features import (WindowPlan, build_feature_table, plan_windows,
                           read_features_csv, write_features_csv)
from .errors import ConfuseqError, DataError, NumericalError, ParseError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def _threads(value: int | None) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("CONFUSEQ_THREADS", "")
    return max(1, int(env)) if env.isdigit() and env != "0" else 1


def _config(path: str | None) -> PipelineConfig:
    return load_config(path) if path else PipelineConfig()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_hash(config: PipelineConfig) -> str:
    from .core import config_to_dict
    blob = json.dumps(config_to_dict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Stage implementations (shared between subcommands and `pipeline`)
# ---------------------------------------------------------------------------

def stage_preprocess_eeg(eeg_path, events_path, stimuli_path, config, out_path):
    recording = read_eeg_csv(eeg_path, events_path)
    stimuli = read_stimuli(stimuli_path)
    labels = {s.trial_id: s.condition for s in stimuli}
    epochs, report = eeg_prep.preprocess_recording(recording, labels, config)
    containers.write_epochs(out_path, epochs)
    return report


def stage_features(epochs_path, config, out_path):
    epochs = containers.read_epochs(epochs_path)
    plan = WindowPlan.from_config(config.window, epochs.sample_rate_hz)
    table = build_feature_table(epochs, plan, config.feature_bands,
                                config.channel_subset)
    write_features_csv(out_path, table)
    return {"n_trials": len(table.trial_ids), "n_features": len(table.columns),
            "windows": plan_windows(epochs.epochs.shape[2], plan)}


def stage_preprocess_gaze(gaze_path, stimuli_path, config, out_features,
                          out_traces, out_align, threads: int = 1):
    result = read_gaze_csv(gaze_path)
    stimuli = {s.trial_id: s for s in read_stimuli(stimuli_path)}
    unknown = [s.trial_id for s in result.streams if s.trial_id not in stimuli]
    if unknown:
        raise DataError(f"gaze trials {unknown} missing from stimuli")

    def process(stream):
        try:
            return gaze.extract_gaze_features(stream, config.gaze)
        except DataError as exc:
            return (stream.trial_id, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(process, result.streams))
    else:
        outputs = [process(s) for s in result.streams]

    usable = [o for o in outputs if isinstance(o, gaze.GazeTrialResult)]
    unusable = {str(tid): reason for tid, reason in
                (o for o in outputs if not isinstance(o, gaze.GazeTrialResult))}

    with open(out_features, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trial_id,label," + ",".join(gaze.GAZE_FEATURE_NAMES) + "\n")
        for res in usable:
            label = stimuli[res.trial_id].condition.value
            cells = ",".join(repr(float(v)) for v in res.features.to_array())
            fh.write(f"{res.trial_id},{label},{cells}\n")

    traces = np.stack([r.trace for r in usable]) if usable \
        else np.zeros((0, 2, config.gaze.trace_len), dtype=np.float32)
    containers.write_traces(out_traces, traces,
                            [r.trial_id for r in usable],
                            [stimuli[r.trial_id].condition for r in usable])

    alignment = {}
    for res in usable:
        stim = stimuli[res.trial_id]
        per_word, n_unassigned = gaze.align_to_words(
            res.fixations, stim, config.gaze.align_tolerance)
        alignment[str(res.trial_id)] = {
            "words": [w.text for w in stim.words],
            "per_word": per_word, "unassigned": n_unassigned}
    write_report(out_align, alignment)
    return {"n_trials": len(result.streams), "n_usable": len(usable),
            "unusable": unusable, "n_clamped_samples": result.n_clamped}


def stage_erp(epochs_path, config, out_path):
    epochs = containers.read_epochs(epochs_path)
    report = erp_stats.make_erp_report(
        epochs, config.erp.bands, config.erp.alpha, config.erp.window_s,
        config.erp.waveform_lowpass_hz, config.erp.bonferroni)
    write_report(out_path, report)
    n_sig = {name: sum(1 for ch in comp["channels"].values() if ch["significant"])
             for name, comp in report["comparisons"].items()}
    return {"significant_channels": n_sig}


def _split_table(table, split):
    train = np.isin(table.trial_ids, split.train_ids)
    test = np.isin(table.trial_ids, split.test_ids)
    return train, test


def _eeg_window_examples(epochs, config):
    """Per-window CNN examples from the channel subset: (examples, labels,
    provenance trial ids)."""
    plan = WindowPlan.from_config(config.window, epochs.sample_rate_hz)
    windows = plan_windows(epochs.epochs.shape[2], plan)
    ch_idx = [epochs.channel_index(ch) for ch in config.channel_subset]
    data = epochs.epochs[:, ch_idx]
    examples = np.concatenate([data[:, :, s:e] for s, e in windows], axis=0)
    labels = np.tile([lab.binary for lab in epochs.labels], len(windows))
    trials = np.tile(epochs.trial_ids, len(windows))
    return examples.astype(np.float64), labels, trials


def stage_train(kind, config, seed, model_out, features_path=None,
                traces_path=None, epochs_path=None, split=None):
    cl = config.classifier
    if kind in ("gbt-eeg", "gbt-gaze"):
        table = read_features_csv(features_path)
        labels = table.binary_labels
        mask = np.isin(table.trial_ids, split.train_ids) if split \
            else np.ones(len(labels), dtype=bool)
        learn.assert_no_leakage(split, np.array(table.trial_ids)[mask]) if split else None
        model = learn.train_gbt(table.values[mask], labels[mask],
                                n_estimators=cl.n_estimators,
                                max_depth=cl.max_depth,
                                learning_rate=cl.learning_rate, seed=seed,
                                feature_names=table.columns)
        learn.save_gbt(model_out, model)
        return {"kind": kind, "n_trees": len(model.trees),
                "final_train_loss": model.train_loss[-1]}
    if kind == "cnn-gaze":
        traces, trial_ids, labels = containers.read_traces(traces_path)
        y = np.array([lab.binary for lab in labels])
        mask = np.isin(trial_ids, split.train_ids) if split \
            else np.ones(len(y), dtype=bool)
        if split:
            learn.assert_no_leakage(split, np.array(trial_ids)[mask])
        model = learn.build_cnn(2, traces.shape[2], seed=seed)
        losses = learn.train_cnn(model, traces[mask], y[mask],
                                 epochs=cl.cnn_epochs, lr=cl.cnn_lr,
                                 batch=cl.cnn_batch, seed=seed)
        learn.save_cnn(model_out, model)
        return {"kind": kind, "epochs_run": len(losses),
                "final_train_loss": losses[-1]}
    if kind == "cnn-eeg":
        epochs = containers.read_epochs(epochs_path)
        examples, y, trials = _eeg_window_examples(epochs, config)
        mask = np.isin(trials, split.train_ids) if split \
            else np.ones(len(y), dtype=bool)
        if split:
            learn.assert_no_leakage(split, trials[mask])
        model = learn.build_cnn(examples.shape[1], examples.shape[2], seed=seed)
        losses = learn.train_cnn(model, examples[mask], y[mask],
                                 epochs=cl.cnn_epochs, lr=cl.cnn_lr,
                                 batch=cl.cnn_batch, seed=seed)
        learn.save_cnn(model_out, model)
        return {"kind": kind, "epochs_run": len(losses),
                "final_train_loss": losses[-1]}
    raise DataError(f"unknown model kind {kind!r}")


def _load_model(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == containers.MAGIC_CNN:
        return "cnn", learn.load_cnn(path)
    return "gbt", learn.load_gbt(path)


def _aggregate_windows(probs, trials, mode: str):
    """Per-trial probability from per-window probabilities."""
    out_ids = sorted(set(int(t) for t in trials))
    agg = []
    trials = np.asarray(trials)
    for tid in out_ids:
        p = probs[trials == tid]
        if mode == "majority":
            agg.append(float((p >= 0.5).mean()))
        else:
            agg.append(float(p.mean()))
    return np.array(out_ids), np.array(agg)


def predictions_for(model_kind, model, config, split=None, features_path=None,
                    traces_path=None, epochs_path=None):
    """Per-trial probabilities and binary labels: (ids, probs, labels)."""
    if model_kind == "gbt":
        table = read_features_csv(features_path)
        probs = learn.predict_gbt(model, table.values)
        return np.array(table.trial_ids), probs, table.binary_labels
    if traces_path is not None:
        traces, trial_ids, labels = containers.read_traces(traces_path)
        probs = learn.predict_cnn(model, traces)
        return (np.array(trial_ids), probs,
                np.array([lab.binary for lab in labels]))
    epochs = containers.read_epochs(epochs_path)
    examples, y, trials = _eeg_window_examples(epochs, config)
    probs = learn.predict_cnn(model, examples)
    ids, agg = _aggregate_windows(probs, trials,
                                  config.classifier.window_aggregation)
    label_by_trial = {tid: lab.binary for tid, lab in
                      zip(epochs.trial_ids, epochs.labels)}
    return ids, agg, np.array([label_by_trial[t] for t in ids])


def _eval_from_predictions(kind, seed, ids, probs, labels, split, extra=None):
    train = np.isin(ids, split.train_ids)
    test = np.isin(ids, split.test_ids)
    if not test.any() or not train.any():
        raise DataError("split does not cover the predicted trials")
    return learn.evaluate_predictions(kind, seed, labels[train], probs[train],
                                      labels[test], probs[test], extra=extra)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_synth(args):
    spec = synthgen.SynthSpec() if args.spec is None else \
        synthgen.SynthSpec.from_dict(json.loads(Path(args.spec).read_text()))
    if args.seed is not None:
        spec.seed = args.seed
    manifest = synthgen.synth_dataset(spec, args.out)
    print(f"wrote {manifest['n_trials']} trials to {args.out} "
          f"(counts: {manifest['class_counts']})")
    return EXIT_OK


def cmd_preprocess_eeg(args):
    config = _config(args.config)
    report = stage_preprocess_eeg(args.infile, args.events, args.stimuli,
                                  config, args.out)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_preprocess_gaze(args):
    config = _config(args.config)
    report = stage_preprocess_gaze(args.infile, args.stimuli, config,
                                   args.out, args.traces, args.align,
                                   threads=_threads(args.threads))
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_features(args):
    config = _config(args.config)
    report = stage_features(args.epochs, config, args.out)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_erp(args):
    config = _config(args.config)
    report = stage_erp(args.epochs, config, args.out)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def _require(parser_name, value, flag):
    if value is None:
        raise DataError(f"{parser_name} requires {flag}")
    return value


def _load_split(path):
    with open(path, "r", encoding="utf-8") as fh:
        return learn.SplitSpec.from_dict(json.load(fh))


def cmd_split(args):
    config = _config(args.config)
    if args.features:
        table = read_features_csv(args.features)
        ids, labels = table.trial_ids, table.binary_labels
    else:
        epochs = containers.read_epochs(_require("split", args.epochs, "--epochs"))
        ids = epochs.trial_ids
        labels = np.array([lab.binary for lab in epochs.labels])
    seed = config.seed if args.seed is None else args.seed
    split = learn.split_trials(ids, labels, config.train_fraction, seed)
    write_report(args.out, split.to_dict())
    print(f"split: {len(split.train_ids)} train / {len(split.test_ids)} test")
    return EXIT_OK


def cmd_train(args):
    config = _config(args.config)
    split = _load_split(args.split) if args.split else None
    seed = config.seed if args.seed is None else args.seed
    report = stage_train(args.kind, config, seed, args.model_out,
                         features_path=args.features, traces_path=args.traces,
                         epochs_path=args.epochs, split=split)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args):
    config = _config(args.config)
    split = _load_split(args.split)
    kind, model = _load_model(args.model)
    ids, probs, labels = predictions_for(kind, model, config,
                                         features_path=args.features,
                                         traces_path=args.traces,
                                         epochs_path=args.epochs)
    seed = getattr(model, "seed", config.seed)
    report = _eval_from_predictions(kind, seed, ids, probs, labels, split)
    write_report(args.out, report.to_dict())
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_ensemble(args):
    config = _config(args.config)
    split = _load_split(args.split)
    w_eeg = config.w_eeg if args.w_eeg is None else args.w_eeg
    w_eye = 1.0 - w_eeg
    ekind, emodel = _load_model(args.eeg_model)
    gkind, gmodel = _load_model(args.eye_model)
    eeg_ids, eeg_p, eeg_y = predictions_for(
        ekind, emodel, config, features_path=args.features,
        epochs_path=args.epochs)
    eye_ids, eye_p, _ = predictions_for(gkind, gmodel, config,
                                        features_path=args.eye_features,
                                        traces_path=args.traces)
    eye_by_id = dict(zip(eye_ids.tolist(), eye_p))
    aligned_eye = np.array([eye_by_id.get(int(t), np.nan) for t in eeg_ids])
    fused, n_fallback = learn.ensemble_predict(eeg_p, aligned_eye, w_eeg, w_eye)
    report = _eval_from_predictions(
        "ensemble", config.seed, eeg_ids, fused, eeg_y, split,
        extra={"w_eeg": w_eeg, "w_eye": w_eye, "n_eye_fallback": n_fallback})
    write_report(args.out, report.to_dict())
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_align(args):
    config = _config(args.config)
    result = read_gaze_csv(args.gaze)
    stimuli = {s.trial_id: s for s in read_stimuli(args.stimuli)}
    alignment = {}
    for stream in result.streams:
        if stream.trial_id not in stimuli:
            raise DataError(f"gaze trial {stream.trial_id} missing from stimuli")
        filtered = gaze.filter_confidence(stream, config.gaze.confidence_threshold)
        fixations = gaze.detect_fixations(filtered,
                                          config.gaze.fixation_dispersion,
                                          config.gaze.fixation_min_duration_s)
        stim = stimuli[stream.trial_id]
        per_word, unassigned = gaze.align_to_words(fixations, stim,
                                                   config.gaze.align_tolerance)
        alignment[str(stream.trial_id)] = {
            "words": [w.text for w in stim.words],
            "per_word": per_word, "unassigned": unassigned}
    write_report(args.out, alignment)
    print(f"aligned {len(alignment)} trials")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline + report
# ---------------------------------------------------------------------------

def run_pipeline(config: PipelineConfig, data_dir: Path, out_dir: Path,
                 threads: int = 1) -> dict:
    """Fixed stage order: preprocess-eeg, features, preprocess-gaze, train,
    evaluate, ensemble, erp. Writes every artifact plus the run manifest."""
    data_dir, out_dir = Path(data_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = {name: data_dir / name for name in
              ("eeg.csv", "eeg.events.jsonl", "gaze.csv", "stimuli.json")}
    for name, path in inputs.items():
        if not path.exists():
            raise DataError(f"missing input file {path}")

    paths = {
        "epochs": out_dir / "epochs.bin",
        "features": out_dir / "features.csv",
        "gaze_features": out_dir / "gaze_features.csv",
        "traces": out_dir / "traces.bin",
        "alignment": out_dir / "alignment.json",
        "split": out_dir / "split.json",
        "eeg_model": out_dir / "eeg_gbt.json",
        "gaze_model": out_dir / "gaze_cnn.cfqn",
        "eval": out_dir / "eval_report.json",
        "erp": out_dir / "erp_report.json",
        "manifest": out_dir / "manifest.json",
    }
    manifest = {"config_hash": _config_hash(config),
                "input_hashes": {k: _sha256(p) for k, p in inputs.items()},
                "seed": config.seed, "threads": threads,
                "stages": [], "outputs": {k: str(p) for k, p in paths.items()},
                "warnings": []}

    def finish(stage, started, detail):
        manifest["stages"].append({"name": stage, "status": "ok",
                                   "duration_s": round(time.time() - started, 3),
                                   "detail": detail})

    stage = "preprocess-eeg"
    try:
        t = time.time()
        detail = stage_preprocess_eeg(inputs["eeg.csv"], inputs["eeg.events.jsonl"],
                                      inputs["stimuli.json"], config,
                                      paths["epochs"])
        finish(stage, t, {"ica": detail["ica"],
                          "n_good_channels": detail["n_good_channels"]})

        stage = "features"
        t = time.time()
        detail = stage_features(paths["epochs"], config, paths["features"])
        finish(stage, t, detail)

        stage = "preprocess-gaze"
        t = time.time()
        detail = stage_preprocess_gaze(inputs["gaze.csv"], inputs["stimuli.json"],
                                       config, paths["gaze_features"],
                                       paths["traces"], paths["alignment"],
                                       threads=threads)
        if detail["unusable"]:
            manifest["warnings"].append(f"unusable gaze trials: "
                                        f"{sorted(detail['unusable'])}")
        if detail["n_clamped_samples"]:
            manifest["warnings"].append(
                f"{detail['n_clamped_samples']} gaze samples clamped into [0,1]")
        finish(stage, t, {k: detail[k] for k in
                          ("n_trials", "n_usable", "n_clamped_samples")})

        stage = "train"
        t = time.time()
        table = read_features_csv(paths["features"])
        split = learn.split_trials(table.trial_ids, table.binary_labels,
                                   config.train_fraction, config.seed)
        write_report(paths["split"], split.to_dict())
        d1 = stage_train("gbt-eeg", config, config.seed + 1, paths["eeg_model"],
                         features_path=paths["features"], split=split)
        d2 = stage_train("cnn-gaze", config, config.seed + 2, paths["gaze_model"],
                         traces_path=paths["traces"], split=split)
        finish(stage, t, {"eeg": d1, "gaze": d2,
                          "split": {"n_train": len(split.train_ids),
                                    "n_test": len(split.test_ids)}})

        stage = "evaluate"
        t = time.time()
        _, gbt_model = _load_model(paths["eeg_model"])
        _, cnn_model = _load_model(paths["gaze_model"])
        eeg_ids, eeg_p, eeg_y = predictions_for(
            "gbt", gbt_model, config, features_path=paths["features"])
        eye_ids, eye_p, eye_y = predictions_for(
            "cnn", cnn_model, config, traces_path=paths["traces"])
        eval_doc = {
            "split": split.to_dict(),
            "eeg": _eval_from_predictions("gbt-eeg", config.seed + 1, eeg_ids,
                                          eeg_p, eeg_y, split).to_dict(),
            "gaze": _eval_from_predictions("cnn-gaze", config.seed + 2, eye_ids,
                                           eye_p, eye_y, split).to_dict(),
        }
        finish(stage, t, {"eeg_test": eval_doc["eeg"]["test_balanced_accuracy"],
                          "gaze_test": eval_doc["gaze"]["test_balanced_accuracy"]})

        stage = "ensemble"
        t = time.time()
        eye_by_id = dict(zip(eye_ids.tolist(), eye_p))
        aligned = np.array([eye_by_id.get(int(t_), np.nan) for t_ in eeg_ids])
        fused, n_fallback = learn.ensemble_predict(eeg_p, aligned,
                                                   config.w_eeg, config.w_eye)
        if n_fallback:
            manifest["warnings"].append(
                f"{n_fallback} trials fell back to the EEG probability")
        eval_doc["ensemble"] = _eval_from_predictions(
            "ensemble", config.seed, eeg_ids, fused, eeg_y, split,
            extra={"w_eeg": config.w_eeg, "w_eye": config.w_eye,
                   "n_eye_fallback": n_fallback}).to_dict()
        write_report(paths["eval"], eval_doc)
        finish(stage, t,
               {"ensemble_test": eval_doc["ensemble"]["test_balanced_accuracy"]})

        stage = "erp"
        t = time.time()
        detail = stage_erp(paths["epochs"], config, paths["erp"])
        finish(stage, t, detail)
    except ConfuseqError as exc:
        manifest["failed_stage"] = stage
        manifest["error"] = str(exc)
        manifest["stages"].append({"name": stage, "status": "failed"})
        write_report(paths["manifest"], manifest)
        raise

    write_report(paths["manifest"], manifest)
    return manifest


def cmd_pipeline(args):
    config = _config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    manifest = run_pipeline(config, Path(args.data), Path(args.out),
                            threads=_threads(args.threads))
    for entry in manifest["stages"]:
        print(f"stage {entry['name']}: {entry['status']} "
              f"({entry.get('duration_s', 0)} s)")
    return EXIT_OK


def cmd_report(args):
    run_dir = Path(args.run)
    eval_doc = json.loads((run_dir / "eval_report.json").read_text())
    erp_doc = json.loads((run_dir / "erp_report.json").read_text())
    lines = ["# confuseq run summary", "",
             "## Classification (balanced accuracy)", "",
             "| Model | Train | Test |", "| --- | --- | --- |"]
    for key, label in (("eeg", "EEG (boosted trees)"),
                       ("gaze", "Eye tracking (CNN)"),
                       ("ensemble", "EEG + eye tracking (ensemble)")):
        if key in eval_doc:
            e = eval_doc[key]
            lines.append(f"| {label} | {e['train_balanced_accuracy']:.4f} "
                         f"| {e['test_balanced_accuracy']:.4f} |")
    lines += ["", "## Per-channel significance", ""]
    for name, comp in erp_doc.get("comparisons", {}).items():
        sig = [ch for ch, v in comp["channels"].items() if v["significant"]]
        lines += [f"### {name}", "",
                  f"alpha = {comp['alpha']}; significant channels "
                  f"({len(sig)}): {', '.join(sorted(sig)) or 'none'}", "",
                  "| Channel | p | significant |", "| --- | --- | --- |"]
        for ch, v in comp["channels"].items():
            p = "n/a" if v["p"] is None else f"{v['p']:.5f}"
            lines.append(f"| {ch} | {p} | {'yes' if v['significant'] else ''} |")
        lines.append("")
    out = Path(args.out) if args.out else run_dir / "summary.md"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="confuseq",
                     description="Multimodal reading-confusion detection "
                                 "pipeline (EEG + eye tracking)")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="SynthSpec JSON file (defaults built in)")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess-eeg", help="filter, ICA-clean, epoch, z-score")
    p.add_argument("--in", dest="infile", required=True, help="EEG CSV")
    p.add_argument("--events", required=True, help="events JSONL")
    p.add_argument("--stimuli", required=True, help="stimuli JSON (labels)")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True, help="epochs container (CFQE)")
    p.set_defaults(func=cmd_preprocess_eeg)

    p = sub.add_parser("preprocess-gaze",
                       help="filter, cluster, featurize gaze; write traces")
    p.add_argument("--in", dest="infile", required=True, help="gaze CSV")
    p.add_argument("--stimuli", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True, help="gaze feature CSV")
    p.add_argument("--traces", required=True, help="trace container (CFQG)")
    p.add_argument("--align", required=True, help="alignment JSON")
    p.add_argument("--threads", type=int, help="worker threads (env CONFUSEQ_THREADS)")
    p.set_defaults(func=cmd_preprocess_gaze)

    p = sub.add_parser("features", help="windowed 16-feature extraction")
    p.add_argument("--epochs", required=True, help="epochs container")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True, help="features CSV")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("erp", help="ERP waveforms and significance maps")
    p.add_argument("--epochs", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True, help="ERP report JSON")
    p.set_defaults(func=cmd_erp)

    p = sub.add_parser("split", help="stratified trial-wise train/test split")
    p.add_argument("--features", help="features CSV (labels source)")
    p.add_argument("--epochs", help="epochs container (labels source)")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="split JSON")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--kind", required=True,
                   choices=("gbt-eeg", "gbt-gaze", "cnn-gaze", "cnn-eeg"))
    p.add_argument("--features", help="features CSV (gbt-*)")
    p.add_argument("--traces", help="trace container (cnn-gaze)")
    p.add_argument("--epochs", help="epochs container (cnn-eeg)")
    p.add_argument("--split", help="split JSON; trains on its train trials")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--model-out", dest="model_out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="balanced-accuracy report for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", help="features CSV")
    p.add_argument("--traces", help="trace container")
    p.add_argument("--epochs", help="epochs container (cnn-eeg)")
    p.add_argument("--split", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True, help="evaluation JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="weighted EEG + eye fusion")
    p.add_argument("--eeg-model", dest="eeg_model", required=True)
    p.add_argument("--eye-model", dest="eye_model", required=True)
    p.add_argument("--features", help="EEG features CSV (gbt EEG model)")
    p.add_argument("--epochs", help="epochs container (cnn EEG model)")
    p.add_argument("--eye-features", dest="eye_features",
                   help="gaze features CSV (gbt eye model)")
    p.add_argument("--traces", help="trace container (cnn eye model)")
    p.add_argument("--split", required=True)
    p.add_argument("--w-eeg", dest="w_eeg", type=float,
                   help="EEG weight (eye weight is 1 - w_eeg)")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("align", help="fixation-to-word alignment")
    p.add_argument("--gaze", required=True, help="gaze CSV")
    p.add_argument("--stimuli", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True, help="alignment JSON")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--data", required=True,
                   help="directory with eeg.csv, eeg.events.jsonl, gaze.csv, "
                        "stimuli.json")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("report", help="markdown summary of a pipeline run")
    p.add_argument("--run", required=True, help="pipeline output directory")
    p.add_argument("--out", help="summary path (default <run>/summary.md)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"confuseq: parse error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"confuseq: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"confuseq: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"confuseq: i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
