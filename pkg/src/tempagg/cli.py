"""Command-line entry point: synth, train, predict, eval, fuse, gradcheck.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .config import PRESETS, RunConfig, build_run_config
from .errors import (AnnotationError, CheckpointError, ConfigError, DataCoverageError,
                     FeatureFileError, NumericError)
from .evaluate import (PredictionMatrix, evaluate_split, late_fuse, read_predictions,
                       write_predictions)
from .gradcheck import run_suite
from .model import ModelConfig, ModelParams, predict_proba
from .sampler import FrameFeatureSequence
from .trainer import EpochLog, fit

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


# --- pipeline pieces (also used by tests) ---------------------------------

def predict_segments(ckpt: dataio.Checkpoint, table: dataio.AnnotationTable,
                     sequences: dict[str, FrameFeatureSequence]) -> PredictionMatrix:
    batch, _ = dataio.assemble(table, sequences, ckpt.sampling)
    probs = predict_proba(ckpt.params, batch).astype(np.float64)
    # model runs in float32; renormalise rows in float64
    probs /= probs.sum(axis=1, keepdims=True)
    return PredictionMatrix(table.segment_ids, probs)


def train_run(cfg: RunConfig, stream=sys.stdout) -> dataio.Checkpoint:
    cfg.require("features", "annotations", "checkpoint")
    table = dataio.load_annotations(cfg.annotations)
    sequences = dataio.load_sequences(cfg.features, cfg.modality, table.video_ids)
    dims = {s.dim for s in sequences.values()}
    if len(dims) != 1:
        raise DataCoverageError(f"feature widths differ across videos: {sorted(dims)}")
    batch, labels = dataio.assemble(table, sequences, cfg.sampling)
    num_classes = cfg.num_classes or int(labels.max()) + 1
    if labels.max() >= num_classes:
        raise ConfigError(f"num_classes: {num_classes} but annotations contain class {labels.max()}")
    model_cfg = ModelConfig(input_dim=dims.pop(), num_classes=num_classes,
                            n_recent=cfg.sampling.n_recent,
                            spanning_scales=cfg.sampling.spanning_scales,
                            hidden=cfg.hidden, proj=cfg.proj, dropout=cfg.train.dropout)
    rng = np.random.default_rng(cfg.train.seed)
    params = ModelParams.init(model_cfg, rng)
    out_dir = Path(cfg.out) if cfg.out is not None else Path(cfg.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = dataio.Checkpoint(params, cfg.train, cfg.sampling, extra={"modality": cfg.modality})

    def save(epoch, params, state, rng):
        ckpt.epoch = epoch
        ckpt.rng_state = rng.bit_generator.state
        dataio.save_checkpoint(ckpt, cfg.checkpoint)

    fit(params, batch, labels, cfg.train, log=EpochLog(out_dir / "train_log.jsonl", stream),
        on_epoch_end=save, rng=rng)
    return ckpt


# --- commands -------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    try:
        data = dataio.generate_synthetic(args.classes, args.videos, fps=args.fps, dim=args.dim,
                                         seed=args.seed, segments_per_video=args.segments_per_video,
                                         modality=args.modality, val_videos=args.val_videos)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        return _fail(EXIT_CONFIG, f"out: cannot write to {out} ({exc})")
    manifest = data.write(out)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"videos": len(data.sequences), "segments": len(data.annotations),
                      "files": manifest}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_run_config(task=args.task, preset=args.preset, config_path=args.config, overrides={
        "features": args.features, "annotations": args.annotations, "subsets": args.subsets,
        "checkpoint": args.checkpoint, "out": args.out, "modality": args.modality,
        "num_classes": args.num_classes, "hidden": args.hidden, "proj": args.proj,
        "epochs": args.epochs, "seed": args.seed})
    train_run(cfg)
    return EXIT_OK


def cmd_predict(args) -> int:
    if not Path(args.checkpoint).exists():
        return _fail(EXIT_CONFIG, f"checkpoint: {args.checkpoint} does not exist")
    if not Path(args.annotations).exists():
        return _fail(EXIT_CONFIG, f"annotations: {args.annotations} does not exist")
    ckpt = dataio.load_checkpoint(args.checkpoint)
    modality = args.modality or ckpt.extra.get("modality", "rgb")
    table = dataio.load_annotations(args.annotations)
    sequences = dataio.load_sequences(args.features, modality, table.video_ids)
    preds = predict_segments(ckpt, table, sequences)
    write_predictions(preds, args.out)
    print(f"wrote {len(preds.segment_ids)} x {preds.num_classes} predictions to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    for name in ("predictions", "annotations", "subsets", "action_map"):
        value = getattr(args, name)
        if value is not None and not Path(value).exists():
            return _fail(EXIT_CONFIG, f"{name}: {value} does not exist")
    preds = read_predictions(args.predictions)
    table = dataio.load_annotations(args.annotations)
    amap = dataio.load_action_map(args.action_map) if args.action_map else table.action_map()
    subsets = dataio.load_subsets(args.subsets) if args.subsets else None
    if subsets is not None:
        subsets.validate(table)
    try:
        report = evaluate_split(preds, table, subsets, amap)
    except KeyError as exc:
        return _fail(EXIT_DATA, f"action map incomplete: {exc}")
    print(report.to_text(), end="")
    if args.out:
        report.write(args.out)
    return EXIT_OK


def cmd_fuse(args) -> int:
    for p in args.predictions:
        if not Path(p).exists():
            return _fail(EXIT_CONFIG, f"predictions: {p} does not exist")
    fused = late_fuse([read_predictions(p) for p in args.predictions])
    write_predictions(fused, args.out)
    print(f"fused {len(args.predictions)} prediction files into {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(args.seed)
    worst = max(r.max_rel_err for r in results)
    for r in results:
        status = "ok" if r.passed(args.tol) else "FAIL"
        print(f"{status:4s} {r.name:40s} max_rel_err={r.max_rel_err:.3e} coords={r.coords_checked}")
    ok = worst < args.tol
    print(f"{'PASS' if ok else 'FAIL'} max relative error {worst:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tempagg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--videos", type=int, required=True)
    p.add_argument("--segments-per-video", type=int, default=1)
    p.add_argument("--val-videos", type=int, default=0)
    p.add_argument("--fps", type=float, default=10.0)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--modality", default="rgb")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train one modality model")
    p.add_argument("--task", choices=["anticipation", "recognition", "activity"])
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config")
    p.add_argument("--features")
    p.add_argument("--annotations")
    p.add_argument("--subsets")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--modality")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--proj", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="write ensemble probabilities for annotated segments")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--modality")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("eval", help="overall / unseen / tail metrics for a prediction file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--subsets")
    p.add_argument("--action-map")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("fuse", help="late fusion of per-modality predictions by average voting")
    p.add_argument("predictions", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and a tiny model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except (DataCoverageError, FeatureFileError, AnnotationError, CheckpointError) as exc:
        return _fail(EXIT_DATA, str(exc))
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except ValueError as exc:
        return _fail(EXIT_DATA, str(exc))


if __name__ == "__main__":
    sys.exit(main())
