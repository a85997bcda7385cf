"""Command-line orchestration of the full workflow.

Commands: synth, extract, train, evaluate, predict, correlate, annotate.
Every output file carries a provenance comment (command, config hash, seed)
and no timestamps, so identical inputs reproduce byte-identical outputs.
Errors exit nonzero with a machine-readable category on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from typing import Optional

import numpy as np

from . import __version__
from .config import config_hash, load_config
from .errors import FaceTouchError, MalformedLabels
from .extract import extract_dataset
from .ingest import (LoadStats, load_manifest, load_mullen,
                     read_feature_matrix, write_feature_matrix)
from .model import LABEL_COLUMNS, REGIONS
from .pipeline import (PipelineSpec, TrainedModel, fit, load_model,
                       make_grouped_folds, predict, save_model)
from .preprocess import NormalizationParams
from .stats import (CorrelationResult, EvalReport, build_config_report,
                    mullen_rate, pearson, touch_frequency)
from .synth import SynthConfig, generate

log = logging.getLogger(__name__)


def _provenance(command: str, cfg: dict, **extra) -> dict:
    doc = {"tool": f"facetouch {__version__}", "command": command,
           "config_hash": config_hash(cfg)}
    doc.update(extra)
    return doc


def _preprocess_params(cfg: dict) -> NormalizationParams:
    p = cfg["preprocess"]
    return NormalizationParams(
        low_confidence_threshold=p["low_confidence_threshold"],
        median_window=p["median_window"],
        mean_window=p["mean_window"],
        max_gap_frames=p["max_gap_frames"])


def _spec_from_args(args, cfg: dict) -> PipelineSpec:
    grid = cfg["grid"]
    return PipelineSpec(
        variant=args.variant, task=args.task, seed=args.seed,
        augment=not args.no_augment and cfg["augment"],
        class_weight=cfg["svm"]["class_weight"],
        c_grid=tuple(grid["C"]), gamma_grid=tuple(grid["gamma"]),
        pca_threshold_grid=tuple(grid["pca_threshold"]),
        latent_grid=tuple(grid["latent"]),
        epochs_grid=tuple(grid["epochs"]))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg: dict) -> int:
    s = dict(cfg["synth"])
    for key in ("n_videos", "frames_per_video", "fps", "image_size",
                "noise_std_px", "hand_dropout_prob", "face_dropout_prob",
                "touch_event_rate", "target_prevalence", "mullen_coupling"):
        flag = getattr(args, key, None)
        if flag is not None:
            s[key] = flag
    if args.no_render:
        s["render_frames"] = False
    config = SynthConfig(seed=args.seed, **s)
    truth = generate(config, args.out)
    print(json.dumps({"out": args.out, "videos": len(truth.video_ids),
                      "prevalence": truth.prevalence}))
    return 0


def cmd_extract(args, cfg: dict) -> int:
    manifest = load_manifest(args.manifest)
    stats = LoadStats()
    matrix = extract_dataset(manifest, with_hog=args.hog,
                             params=_preprocess_params(cfg),
                             strict_labels=cfg["labels"]["strict"],
                             stats=stats)
    write_feature_matrix(matrix, args.out,
                         provenance=_provenance("extract", cfg,
                                                manifest=args.manifest,
                                                hog=args.hog))
    print(json.dumps({"out": args.out, "rows": len(matrix),
                      "columns": len(matrix.manifest),
                      "frames_in": stats.frames_in,
                      "rejected": stats.rejected}))
    return 0


def cmd_train(args, cfg: dict) -> int:
    matrix = read_feature_matrix(args.features)
    spec = _spec_from_args(args, cfg)
    hyper = json.loads(args.hyper) if args.hyper else None
    folds = None
    if hyper is None:
        from .pipeline import task_rows
        folds = make_grouped_folds(task_rows(spec, matrix).group_ids,
                                   k=cfg["folds"], seed=args.seed)
    model = fit(spec, matrix, hyperparams=hyper, folds=folds)
    save_model(model, args.out,
               provenance=_provenance("train", cfg, features=args.features,
                                      seed=args.seed))
    print(json.dumps({"out": args.out, "variant": spec.variant,
                      "task": spec.task, "chosen": model.chosen,
                      "cv_candidates": len(model.cv_table)}))
    return 0


def _exclude_training_videos(model: TrainedModel, matrix, notices: list):
    train_set = set(model.train_video_ids)
    keep = np.array([g not in train_set for g in matrix.group_ids])
    if not keep.all():
        dropped = len(keep) - int(keep.sum())
        notices.append(f"excluded {dropped} rows from videos seen in "
                       f"training")
    return matrix.subset(keep)


def cmd_evaluate(args, cfg: dict) -> int:
    models = {}
    for path in args.model:
        model = load_model(path)
        name = args.name.pop(0) if args.name else model.spec.variant
        models[name] = model
    tasks = {m.spec.task for m in models.values()}
    if len(tasks) != 1:
        raise FaceTouchError("all models must share one task")
    task = tasks.pop()
    matrix = read_feature_matrix(args.features)
    if matrix.labels is None:
        raise MalformedLabels("test features carry no labels; "
                              "evaluation skipped")
    notices: list = []
    report = EvalReport()
    predictions = {}
    test = matrix.subset(matrix.labeled_mask)
    if task == "regions":
        test = test.subset(test.labels[:, 0] == 1)
    for name, model in models.items():
        mtest = _exclude_training_videos(model, test, notices)
        if len(mtest) == 0:
            raise FaceTouchError(
                f"{name}: every labeled test row comes from videos the "
                f"model was trained on; pick a disjoint test set")
        predictions[name] = (mtest, predict(model, mtest))
    # all models must see the same rows for paired comparisons
    rows_sets = {tuple(zip(m.group_ids, m.frame_indices.tolist()))
                 for m, _ in predictions.values()}
    if len(rows_sets) != 1:
        raise FaceTouchError("models exclude different test rows; "
                             "evaluate them separately")
    common = next(iter(predictions.values()))[0]
    if task == "binary":
        labels = common.labels[:, 0] == 1
    else:
        labels = common.labels[:, 1:6]
    if args.train_features:
        tr = read_feature_matrix(args.train_features)
        tr = tr.subset(tr.labeled_mask)
        if task == "regions":
            tr = tr.subset(tr.labels[:, 0] == 1)
            train_labels = tr.labels[:, 1:6]
        else:
            train_labels = tr.labels[:, 0] == 1
    else:
        train_labels = labels
        notices.append("ZeroR majority derived from the test labels "
                       "(no --train-features given)")
    cfg_report = build_config_report(
        args.configuration, task,
        {name: pred for name, (_, pred) in predictions.items()},
        labels, train_labels, seed=args.seed)
    cfg_report.notices.extend(notices)
    report.configs.append(cfg_report)
    doc = report.to_dict()
    doc["provenance"] = _provenance("evaluate", cfg, seed=args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if args.text:
        with open(args.text, "w", encoding="utf-8") as fh:
            fh.write(report.render_text())
    print(report.render_text())
    return 0


def cmd_predict(args, cfg: dict) -> int:
    model = load_model(args.model)
    matrix = read_feature_matrix(args.features)
    infant_of = {}
    if args.manifest:
        manifest = load_manifest(args.manifest)
        infant_of = {e.video_id: e.infant_id for e in manifest.videos}
    pred = predict(model, matrix)
    buf = io.StringIO()
    buf.write("# provenance: " + json.dumps(
        _provenance("predict", cfg, model=args.model), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    if model.spec.task == "binary":
        writer.writerow(["video_id", "infant_id", "frame_index", "on_head"])
        for i in range(len(matrix)):
            vid = matrix.group_ids[i]
            writer.writerow([vid, infant_of.get(vid, ""),
                             int(matrix.frame_indices[i]), int(pred[i])])
    else:
        writer.writerow(["video_id", "infant_id", "frame_index"]
                        + list(REGIONS))
        for i in range(len(matrix)):
            vid = matrix.group_ids[i]
            writer.writerow([vid, infant_of.get(vid, ""),
                             int(matrix.frame_indices[i]),
                             *[int(v) for v in pred[i]]])
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    print(json.dumps({"out": args.out, "rows": len(matrix)}))
    return 0


def _read_predictions(path: str) -> dict:
    """infant_id -> list of on_head booleans."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(l for l in fh
                                      if not l.startswith("#"))]
    if not rows or rows[0][:4] != ["video_id", "infant_id", "frame_index",
                                   "on_head"]:
        raise MalformedLabels(f"{path}: expected binary predictions CSV")
    per_infant: dict = {}
    for row in rows[1:]:
        infant = row[1]
        if not infant:
            raise MalformedLabels(
                f"{path}: missing infant_id (pass --manifest to predict)")
        per_infant.setdefault(infant, []).append(row[3] == "1")
    return per_infant


def cmd_correlate(args, cfg: dict) -> int:
    per_infant = _read_predictions(args.predictions)
    mullen = load_mullen(args.mullen)
    by_infant: dict = {}
    for rec in mullen:
        by_infant.setdefault(rec.infant_id, []).append(rec)
    cutoff = cfg["evaluation"]["mullen_age_cutoff"]

    ratios = []
    fm_rates = []
    gm_rates = []
    skipped = []
    for infant, preds in sorted(per_infant.items()):
        if infant not in by_infant:
            skipped.append(f"{infant}: no Mullen records")
            continue
        try:
            fm = mullen_rate(by_infant[infant], "fm", cutoff)
            gm = mullen_rate(by_infant[infant], "gm", cutoff)
        except FaceTouchError as exc:
            skipped.append(f"{infant}: {exc}")
            continue
        ratios.append(touch_frequency(preds))
        fm_rates.append(fm)
        gm_rates.append(gm)

    def corr_doc(rates) -> Optional[dict]:
        try:
            res = pearson(ratios, rates)
        except FaceTouchError as exc:
            return {"error": type(exc).__name__, "message": str(exc)}
        return {"r": res.r, "n": res.n, "t": res.t_statistic,
                "p_value": res.p_value}

    doc = {
        "provenance": _provenance("correlate", cfg),
        "n_infants": len(ratios),
        "mean_touch_ratio": float(np.mean(ratios)) if ratios else None,
        "fm": corr_doc(fm_rates),
        "gm": corr_doc(gm_rates),
        "skipped": skipped,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(json.dumps({"fm": doc["fm"], "gm": doc["gm"],
                      "n_infants": doc["n_infants"]}))
    return 0


def cmd_annotate(args, cfg: dict) -> int:
    from .server import serve_forever
    manifest = load_manifest(args.manifest)
    serve_forever(manifest, args.port, ui_dir=args.ui_dir)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facetouch",
        description="Infant face-touch detection toolkit")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", dest="n_videos", type=int)
    p.add_argument("--frames", dest="frames_per_video", type=int)
    p.add_argument("--fps", type=float)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--noise-px", dest="noise_std_px", type=float)
    p.add_argument("--hand-dropout", dest="hand_dropout_prob", type=float)
    p.add_argument("--face-dropout", dest="face_dropout_prob", type=float)
    p.add_argument("--event-rate", dest="touch_event_rate", type=float)
    p.add_argument("--prevalence", dest="target_prevalence", type=float)
    p.add_argument("--coupling", dest="mullen_coupling", type=float)
    p.add_argument("--no-render", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="landmarks to feature matrix CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hog", action="store_true",
                   help="include HOG appearance columns (needs frames)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="grid-search and fit a model")
    p.add_argument("--features", required=True)
    p.add_argument("--variant", required=True,
                   choices=["rf-pca-svm", "autoenc-svm-1", "autoenc-svm-2"])
    p.add_argument("--task", required=True, choices=["binary", "regions"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--hyper", help="JSON hyperparameters to skip the search")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate",
                       help="score models against baselines on test features")
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--name", action="append", default=[])
    p.add_argument("--features", required=True)
    p.add_argument("--train-features", dest="train_features",
                   help="training features CSV for the ZeroR majority")
    p.add_argument("--out", required=True)
    p.add_argument("--text")
    p.add_argument("--configuration", default="evaluation")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-frame predictions CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="maps video ids to infant ids")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("correlate",
                       help="touch-frequency vs Mullen rate correlation")
    p.add_argument("--predictions", required=True)
    p.add_argument("--mullen", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("annotate", help="serve the annotation API/UI")
    p.add_argument("--manifest", required=True)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--ui-dir", help="built frontend directory to serve")
    p.set_defaults(func=cmd_annotate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except FaceTouchError as exc:
        sys.stderr.write(json.dumps({
            "error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
