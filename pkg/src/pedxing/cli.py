"""Command-line entry point: ``pedxing synth|train|eval|sweep|predict``.

Exit codes: 0 success, 2 validation error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T
from .checkpoint import load_checkpoint, restore
from .config import RunConfig
from .data.annotations import AnnotationWarning
from .data.dataset import load_splits
from .data.imaging import crop_and_resize
from .data.synthetic import DIFFICULTIES, generate_synthetic
from .data.tracks import CLIP_LENGTH
from .exceptions import (CheckpointError, ConfigError, ContractError, DataError,
                         FingerprintMismatchError, NumericError, ParameterError)
from .heads import SPEED_CLASS_NAMES, ModelPhi
from .losses import EmptyMaskWarning
from .training import Trainer, evaluate

log = logging.getLogger("pedxing")

EXIT_OK, EXIT_VALIDATION, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# flag name -> config field, for flags that override the config file
_OVERRIDES = {"lam": "lam", "epochs": "epochs", "seed": "seed", "backbone": "backbone",
              "width": "width", "batch_size": "batch_size", "lr": "lr", "stride": "stride",
              "train_fraction": "train_fraction"}


class ValidationFailure(Exception):
    """Bad flags or inputs detected before any side effect."""


# ------------------------------------------------------------------ helpers

def _empty_or_missing(path: Path):
    return not path.exists() or (path.is_dir() and not any(path.iterdir()))


def _build_config(args, **extra):
    profile = RunConfig.desk() if args.profile == "desk" else RunConfig()
    values = profile.to_dict()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ValidationFailure(f"config file {path} not found")
        values.update(_read_config(path))
    for flag, field in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[field] = value
    values.update(extra)
    return RunConfig.from_dict(values)


def _read_config(path):
    try:
        values = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: config must be a flat key/value object")
    return values


def _load_data(cfg, data_dir):
    root = Path(data_dir)
    if not root.is_dir():
        raise ValidationFailure(f"data directory {root} not found")
    with warnings.catch_warnings():
        warnings.simplefilter("error", AnnotationWarning)
        try:
            return load_splits(root, stride=cfg.stride, out_size=tuple(cfg.input_size),
                               context=cfg.context, n_speed_classes=cfg.speed_classes,
                               train_fraction=cfg.train_fraction, seed=cfg.seed)
        except AnnotationWarning as exc:
            raise DataError(str(exc)) from None
        except FileNotFoundError as exc:
            raise DataError(f"missing file: {exc.filename}") from None


def _write_roc(path, result):
    fpr, tpr, thr = result.roc()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fpr", "tpr", "threshold"])
        for row in zip(fpr, tpr, thr):
            writer.writerow([repr(float(v)) for v in row])


def _fmt(v):
    return "nan" if isinstance(v, float) and math.isnan(v) else f"{v:.4f}"


def _model_from_checkpoint(ckpt_path, expected=None, force=False):
    ckpt = load_checkpoint(ckpt_path, expected, force=force)
    cfg = RunConfig.from_dict(ckpt.meta["config"])
    model = ModelPhi(cfg.backbone_config(), cfg.speed_classes, seed=cfg.seed,
                     aux_heads=cfg.aux_heads)
    restore(ckpt, model)
    model.eval()
    return cfg, model


# ----------------------------------------------------------------- commands

def cmd_synth(args):
    out = Path(args.out)
    if args.tracks < 1:
        raise ValidationFailure("--tracks must be >= 1")
    if not _empty_or_missing(out) and not args.force:
        raise ValidationFailure(f"{out} exists and is not empty (use --force to overwrite)")
    generate_synthetic(out, args.tracks, seed=args.seed, image_size=tuple(args.image_size),
                       difficulty=args.difficulty, n_speed_classes=args.speed_classes,
                       force=args.force)
    print(f"wrote {args.tracks} tracks to {out}")
    return EXIT_OK


def _train_one(cfg, train, test, out, resume=None, force=False):
    trainer = Trainer(cfg, train, test)
    if resume:
        trainer.resume(resume, force=force)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(cfg.dumps(), encoding="utf-8")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyMaskWarning)
        trainer.fit(out_dir=out, on_epoch=lambda rows: log.info(
            "epoch %d  %s", rows[-1]["epoch"],
            "  ".join(f"{r['split']} acc {_fmt(r['accuracy'])}" for r in rows)))
        final = evaluate(trainer.model, test if test is not None and len(test) else train,
                         trainer.class_weights, cfg.lam, cfg.batch_size)
    if not math.isnan(final.auc):
        _write_roc(out / "roc.csv", final)
    return final


def cmd_train(args):
    out = Path(args.out)
    cfg = _build_config(args, data=str(args.data), out=str(out))
    if args.resume:
        if not Path(args.resume).is_file():
            raise ValidationFailure(f"checkpoint {args.resume} not found")
        load_checkpoint(args.resume, cfg.fingerprint(), force=args.force)
    elif not _empty_or_missing(out):
        raise ValidationFailure(f"run directory {out} is not empty (use --resume to continue)")
    train, test = _load_data(cfg, args.data)
    if len(train) == 0:
        raise DataError("the training split has no clips")
    final = _train_one(cfg, train, test, out, args.resume, args.force)
    print(f"accuracy {_fmt(final.accuracy)}  precision {_fmt(final.precision)}  "
          f"auc {_fmt(final.auc)}")
    return EXIT_OK


def cmd_eval(args):
    expected = _build_config(args).fingerprint() if args.config else None
    cfg, model = _model_from_checkpoint(args.ckpt, expected, args.force)
    train, test = _load_data(cfg, args.data)
    dataset = {"train": train, "test": test}[args.split]
    if len(dataset) == 0:
        raise DataError(f"the {args.split} split has no clips")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyMaskWarning)
        res = evaluate(model, dataset, cfg.resolve_class_weights(train.class_counts()), cfg.lam,
                       cfg.batch_size)
    print(f"split {args.split}  clips {len(dataset)}  accuracy {res.accuracy!r}  "
          f"precision {res.precision!r}  auc {res.auc!r}")
    if args.roc and not math.isnan(res.auc):
        _write_roc(args.roc, res)
    return EXIT_OK


def _parse_floats(text, name):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationFailure(f"--{name} must be a comma-separated list of numbers") from None
    if not values:
        raise ValidationFailure(f"--{name} is empty")
    return values


def cmd_sweep(args):
    lambdas = _parse_floats(args.lambdas, "lambdas")
    backbones = [b.strip() for b in args.backbones.split(",") if b.strip()]
    out = Path(args.out)
    if not _empty_or_missing(out):
        raise ValidationFailure(f"sweep directory {out} is not empty")
    configs = {}
    for data in args.data:
        for backbone in backbones:
            for lam in lambdas:
                configs[(data, backbone, lam)] = _build_config(
                    args, backbone=backbone, lam=lam, data=str(data),
                    out=str(out / Path(data).name / backbone / f"lambda_{lam:g}"))
    splits = {}
    for data in args.data:
        splits[data] = _load_data(next(c for k, c in configs.items() if k[0] == data), data)
    grid = {}
    for (data, backbone, lam), cfg in configs.items():
        train, test = splits[data]
        log.info("sweep: %s %s lambda=%g", Path(data).name, backbone, lam)
        grid[(data, backbone, lam)] = _train_one(cfg, train, test, Path(cfg.out))
    header = ["backbone", "dataset"] + [f"lambda={lam:g}" for lam in lambdas]
    rows = []
    for data in args.data:
        for backbone in backbones:
            cells = [f"{_fmt(grid[(data, backbone, lam)].accuracy)} / "
                     f"{_fmt(grid[(data, backbone, lam)].auc)}" for lam in lambdas]
            rows.append([backbone, Path(data).name] + cells)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    print("accuracy / AUC on the test split")
    for r in [header] + rows:
        print("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    return EXIT_OK


def _read_clip(clip_dir, cfg):
    clip_dir = Path(clip_dir)
    if not clip_dir.is_dir():
        raise ValidationFailure(f"clip directory {clip_dir} not found")
    frames = sorted(p for p in clip_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if len(frames) != CLIP_LENGTH:
        raise ContractError(f"a clip needs exactly {CLIP_LENGTH} frames, found {len(frames)}")
    sidecar = clip_dir / "bbox.json"
    if not sidecar.is_file():
        raise DataError(f"{sidecar} not found")
    try:
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{sidecar}: not valid JSON ({exc})") from None
    boxes = meta.get("bboxes") or ([meta["bbox"]] * CLIP_LENGTH if "bbox" in meta else None)
    if boxes is None or len(boxes) != CLIP_LENGTH:
        raise DataError(f"{sidecar} must hold 'bbox' or {CLIP_LENGTH} 'bboxes'")
    crops = []
    for path, box in zip(frames, boxes):
        with Image.open(path) as im:
            image = np.asarray(im.convert("RGB"))
        crop = crop_and_resize(image, tuple(float(v) for v in box), tuple(cfg.input_size),
                               cfg.context)
        if crop is None:
            raise DataError(f"degenerate box {box} for {path.name}")
        crops.append(crop)
    return np.stack(crops)[None].astype(np.float32)


def cmd_predict(args):
    cfg, model = _model_from_checkpoint(args.ckpt)
    x = _read_clip(args.clip, cfg)
    with T.no_grad():
        out = model(T.Tensor(x))
    logits = out.crossing.data[0].astype(np.float64)
    e = np.exp(logits - logits.max())
    p = e / e.sum()
    verdict = {"crossing_probability": float(p[1]), "not_crossing_probability": float(p[0]),
               "predicted_class": "crossing" if p[1] > p[0] else "not_crossing"}
    if out.pose is not None:
        verdict["pose_ratios"] = np.round(out.pose.data.astype(np.float64), 6).tolist()
        names = SPEED_CLASS_NAMES if cfg.speed_classes == len(SPEED_CLASS_NAMES) else None
        speed = out.speed.data.argmax(axis=1).tolist()
        verdict["speed_class"] = [names[s] for s in speed] if names else speed
    print(json.dumps(verdict, indent=2 if args.pretty else None))
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _common_config_flags(p):
    p.add_argument("--config", help="JSON config file (flat key/value object)")
    p.add_argument("--profile", choices=("desk", "paper"), default="desk",
                   help="defaults used for fields absent from the config (default: desk)")
    p.add_argument("--lambda", dest="lam", type=float, help="side-task loss weight")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--backbone", choices=("squeeze", "mobile"))
    p.add_argument("--width", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="pedxing",
                                     description="Pedestrian crossing-intention training toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--tracks", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--difficulty", choices=DIFFICULTIES, default="easy")
    p.add_argument("--image-size", dest="image_size", type=int, nargs=2, default=(128, 96),
                   metavar=("W", "H"))
    p.add_argument("--speed-classes", dest="speed_classes", type=int, default=5)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model")
    _common_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--force", action="store_true", help="ignore a config fingerprint mismatch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--roc", help="write (fpr, tpr, threshold) rows to this CSV")
    p.add_argument("--config", help="refuse the checkpoint unless it matches this config")
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--force", action="store_true", help="ignore a config fingerprint mismatch")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train one model per lambda and tabulate")
    _common_config_flags(p)
    p.add_argument("--lambdas", default="0,0.01,0.1")
    p.add_argument("--backbones", default="squeeze")
    p.add_argument("--data", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("predict", help="score one 16-frame clip")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clip", required=True, help="directory of 16 frames plus bbox.json")
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValidationFailure, ConfigError, ParameterError, FingerprintMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataError, ContractError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
