"""Command-line entry point: ``lesionkit <subcommand> ...``.

Exit status is 0 on success, 1 when a pipeline stage fails on the given data
(for example no lesion found) and 2 for usage errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .features import CATALOG, FeatureError, extract_all
from .featsel import SelectionError, select
from .imgproc import read_image, read_mask, write_image, write_mask
from .segment import SegmentationError, segment_lesion, tdr
from .skin import SkinModelError, detect_skin, save_skin_model, train_skin_model

log = logging.getLogger("lesionkit")


class StageError(Exception):
    """A failure attributed to one pipeline stage; reported with exit status 1."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


DOMAIN_ERRORS = (SegmentationError, FeatureError, SelectionError, SkinModelError, ConfigError, ValueError, OSError)


def _stage(name: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except DOMAIN_ERRORS as exc:
        raise StageError(name, str(exc) or type(exc).__name__) from exc


def _config(args) -> RunConfig:
    cfg = _stage("config", load_config, args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "skin_model", None):
        cfg.skin.model = str(args.skin_model)
    return cfg


def _write_text(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _jobs(args) -> int:
    return args.jobs if args.jobs and args.jobs > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------- subcommands


def cmd_synth(args) -> int:
    from .synth import gen_corpus

    path = _stage("synth", gen_corpus, args.benign, args.melanoma, args.preset, args.seed, args.out, _jobs(args))
    print(path)
    return 0


def _read_pixels(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and not rows[0][0].strip().lstrip("-").replace(".", "").isdigit():
        rows = rows[1:]  # header
    px = np.array([[float(v) for v in r[:3]] for r in rows], dtype=np.float64)
    if px.ndim != 2 or px.shape[1] != 3:
        raise ValueError(f"{path}: expected rows of r,g,b")
    return px


def cmd_train_skin(args) -> int:
    if (args.skin is None) != (args.nonskin is None):
        raise StageError("train-skin", "--skin and --nonskin must be given together")
    if args.skin is None:
        from .synth import skin_training_pixels

        skin, nonskin = skin_training_pixels(args.images, seed=args.seed)
    else:
        skin = _stage("train-skin", _read_pixels, args.skin)
        nonskin = _stage("train-skin", _read_pixels, args.nonskin)
    model = _stage("train-skin", train_skin_model, skin, nonskin, args.k, args.seed, args.theta)
    save_skin_model(model, args.out)
    print(args.out)
    return 0


def _overlay(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    edge = mask & ~ndimage.binary_erosion(mask, iterations=2, border_value=0)
    out = image.copy()
    out[edge] = (0, 255, 0)
    return out


def cmd_segment(args) -> int:
    from .pipeline import report_json, skin_model_for

    cfg = _config(args)
    image = _stage("read", read_image, args.image)
    skin = detect_skin(image, _stage("skin", skin_model_for, cfg))
    seg = _stage("segment", segment_lesion, image, skin, cfg.seg_config())
    report = {"image": str(args.image), "segmentation": seg.summary()}
    if args.gt is not None:
        gt = _stage("read", read_mask, args.gt)
        report["tdr"] = _stage("segment", tdr, gt, seg.mask)
    if args.mask_out:
        write_mask(args.mask_out, seg.mask)
    if args.overlay:
        write_image(args.overlay, _overlay(image, seg.mask))
    _write_text(args.report, report_json(report, cfg))
    return 0


def cmd_features(args) -> int:
    from .pipeline import corpus_features, skin_model_for, write_feature_table

    cfg = _config(args)
    if args.manifest is not None:
        from .synth import load_manifest

        _, entries = _stage("manifest", load_manifest, args.manifest)
        results = corpus_features(entries, cfg, _jobs(args))
        bad = [r for r in results if r.error]
        for r in bad:
            log.warning("%s: %s", r.image_id, r.error)
        ok = [(r, e) for r, e in zip(results, entries) if not r.error]
        if not ok:
            raise StageError("features", "no image produced features")
        if args.out in (None, "-"):
            _table_stdout(ok)
        else:
            write_feature_table(args.out, [r.image_id for r, _ in ok], [e.label for _, e in ok], [r.features for r, _ in ok])
        return 0
    if args.image is None:
        raise StageError("features", "give an image (and optionally --mask) or --manifest")
    image = _stage("read", read_image, args.image)
    if args.mask is not None:
        mask = _stage("read", read_mask, args.mask)
    else:
        skin = detect_skin(image, _stage("skin", skin_model_for, cfg))
        mask = _stage("segment", segment_lesion, image, skin, cfg.seg_config()).mask
    fv = _stage("features", extract_all, image, mask, image_id=Path(args.image).stem)
    rows = [CATALOG.names, [repr(float(v)) for v in fv.values]]
    if args.out in (None, "-"):
        csv.writer(sys.stdout).writerows(rows)
    else:
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    return 0


def _table_stdout(ok) -> None:
    w = csv.writer(sys.stdout)
    w.writerow(["id", "label", *CATALOG.names])
    for r, e in ok:
        w.writerow([r.image_id, e.label, *(repr(float(v)) for v in r.features)])


def cmd_catalog(args) -> int:
    w = csv.writer(sys.stdout)
    w.writerow(["index", "name", "category", "group"])
    for rec in CATALOG.records():
        w.writerow([rec["index"], rec["name"], rec["category"], rec["group"]])
    return 0


def _labels_from(args, labels):
    if args.labels is not None:
        with open(args.labels) as fh:
            labels = np.array([int(line.strip()) for line in fh if line.strip()])
    if labels is None:
        raise StageError("select", "labels missing: fill the table's label column or pass --labels")
    return labels


def cmd_select(args) -> int:
    from .pipeline import SLOTS, read_feature_table, report_json, slot_pool

    cfg = _config(args)
    ids, labels, X = _stage("read", read_feature_table, args.table)
    y = _labels_from(args, labels)
    if len(y) != len(X):
        raise StageError("select", f"{len(y)} labels for {len(X)} rows")
    sel = cfg.selection
    mode = args.mode or sel.mode
    slots = [args.category] if args.category else [s for s in SLOTS if s != "asymmetry"]
    out = {}
    for slot in slots:
        m = args.m if args.m is not None else sel.lengths[slot]
        res = _stage(
            "select", select, X, y, m, slot_pool(slot), mode, sel.alpha, sel.n_bins, sel.n_frac, sel.standardize_q
        )
        out[slot] = res.to_dict(CATALOG.names)
    _write_text(args.out, report_json({"selection": out, "n_samples": len(y)}, cfg))
    return 0


def _training_data(args, cfg, stage: str):
    from .pipeline import corpus_features, read_feature_table

    if args.table is not None:
        ids, labels, X = _stage("read", read_feature_table, args.table)
        return ids, _labels_from(args, labels), X, {}
    if args.manifest is None:
        raise StageError(stage, "give --manifest or --table")
    from .synth import load_manifest

    _, entries = _stage("manifest", load_manifest, args.manifest)
    results = corpus_features(entries, cfg, _jobs(args))
    failures = {r.image_id: r.error for r in results if r.error}
    for k, v in failures.items():
        log.warning("%s: %s", k, v)
    keep = [i for i, r in enumerate(results) if not r.error]
    if not keep:
        raise StageError(stage, "no image produced features")
    X = np.array([results[i].features for i in keep])
    y = np.array([entries[i].label for i in keep])
    extra = {"failures": failures}
    tdrs = [results[i].tdr for i in keep if results[i].tdr is not None]
    if tdrs:
        extra["tdr_mean"] = float(np.mean(tdrs))
    return [results[i].image_id for i in keep], y, X, extra


def cmd_train(args) -> int:
    from .pipeline import train_bundle

    cfg = _config(args)
    _, y, X, _ = _training_data(args, cfg, "train")
    bundle = _stage("train", train_bundle, X, y, cfg)
    bundle.skin_model = cfg.skin.model or "default"
    bundle.save(args.out)
    print(args.out)
    return 0


def cmd_predict(args) -> int:
    from .pipeline import Bundle, BundleError, analyze_image, skin_model_for

    cfg = _config(args)
    try:
        bundle = Bundle.load(args.bundle)
    except (BundleError, OSError, KeyError) as exc:
        raise StageError("bundle", str(exc)) from exc
    if args.skin_model is None and bundle.skin_model != "default":
        cfg.skin.model = bundle.skin_model
    model = _stage("skin", skin_model_for, cfg)
    lines = []
    for path in args.images:
        image = _stage("read", read_image, path)
        res, _ = _stage("segment", analyze_image, image, cfg, model, None, Path(path).stem)
        out = _stage("classify", bundle.classify, res.features[None, :])
        scores = {k: float(v[0]) for k, v in out["scores"].items()}
        rec = {
            "image": str(path),
            "scores": scores,
            "fusion_inputs": dict(zip(("color", "border", "asymmetry", "lbp" if bundle.texture == "lbp" else "texture"), out["soft"][0].tolist())),
            "fusion": bundle.fusion.mode,
            "fused_soft": float(out["fused_soft"][0]),
            "verdict": "melanoma" if out["hard"][0] else "benign",
            "tool_version": __version__,
        }
        lines.append(json.dumps(rec, sort_keys=True))
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import roc_points
    from .pipeline import evaluate_features, report_json

    cfg = _config(args)
    ids, y, X, extra = _training_data(args, cfg, "evaluate")
    rep = _stage("evaluate", evaluate_features, X, y, cfg)
    payload = rep.to_dict()
    payload.update(extra)
    payload["n_samples"] = int(len(y))
    _write_text(args.out, report_json(payload, cfg))
    if args.roc and rep.roc is not None:
        with open(args.roc, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr"])
            for fpr, tpr in rep.roc:
                w.writerow([repr(fpr), repr(tpr)])
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lesionkit", description="Skin-lesion screening pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, jobs=False):
        if config:
            sp.add_argument("--config", type=Path, help="JSON run configuration (defaults when omitted)")
            sp.add_argument("--skin-model", type=Path, help="skin model file (overrides the config)")
            sp.add_argument("--seed", type=int, help="override the config seed")
        if jobs:
            sp.add_argument("--jobs", type=int, default=0, help="worker processes (default: all cores)")

    sp = sub.add_parser("synth", help="generate a synthetic lesion corpus")
    sp.add_argument("--benign", type=int, default=100)
    sp.add_argument("--melanoma", type=int, default=100)
    sp.add_argument("--preset", default="default", help="default, paper-shape or small")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=Path, required=True, help="output directory")
    common(sp, config=False, jobs=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train-skin", help="fit the skin / non-skin color model")
    sp.add_argument("--skin", type=Path, help="CSV of skin r,g,b rows")
    sp.add_argument("--nonskin", type=Path, help="CSV of non-skin r,g,b rows")
    sp.add_argument("--images", type=int, default=64, help="synthetic images to sample when no CSVs are given")
    sp.add_argument("--k", type=int, default=8, help="mixture components per class")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--theta", type=float, default=1.0, help="likelihood-ratio threshold")
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_train_skin)

    sp = sub.add_parser("segment", help="segment the lesion in one image")
    sp.add_argument("image", type=Path)
    sp.add_argument("--gt", type=Path, help="ground-truth mask; adds the TDR to the report")
    sp.add_argument("--mask-out", type=Path, help="write the lesion mask PNG")
    sp.add_argument("--overlay", type=Path, help="write the image with the border drawn")
    sp.add_argument("--report", default="-", help="JSON report path (default stdout)")
    common(sp)
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("features", help="feature vector of an image, or a table for a corpus")
    sp.add_argument("image", type=Path, nargs="?")
    sp.add_argument("--mask", type=Path, help="lesion mask; segmented automatically when omitted")
    sp.add_argument("--manifest", type=Path, help="corpus manifest or directory: write an id,label,... table")
    sp.add_argument("--out", default=None, help="CSV path (default stdout)")
    common(sp, jobs=True)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("catalog", help="list the feature catalog")
    sp.set_defaults(func=cmd_catalog)

    sp = sub.add_parser("select", help="feature selection report from a feature table")
    sp.add_argument("table", type=Path)
    sp.add_argument("--labels", type=Path, help="one 0/1 label per line (overrides the table)")
    sp.add_argument("--category", choices=("color", "border", "texture"))
    sp.add_argument("--m", type=int, help="number of features (default from config)")
    sp.add_argument("--mode", choices=("mi", "hybrid"))
    sp.add_argument("--out", default="-")
    common(sp)
    sp.set_defaults(func=cmd_select)

    for name, func, helptext in (
        ("train", cmd_train, "train a model bundle"),
        ("evaluate", cmd_evaluate, "cross-validated evaluation"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--manifest", type=Path, help="corpus manifest or directory")
        sp.add_argument("--table", type=Path, help="precomputed feature table")
        sp.add_argument("--labels", type=Path)
        if name == "train":
            sp.add_argument("--out", type=Path, required=True, help="bundle path")
        else:
            sp.add_argument("--out", default="-", help="JSON report path (default stdout)")
            sp.add_argument("--roc", type=Path, help="write pooled ROC points as CSV")
        common(sp, jobs=True)
        sp.set_defaults(func=func)

    sp = sub.add_parser("predict", help="classify images with a trained bundle")
    sp.add_argument("bundle", type=Path)
    sp.add_argument("images", type=Path, nargs="+")
    sp.add_argument("--out", default="-", help="JSON-lines output (default stdout)")
    common(sp)
    sp.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"lesionkit {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
