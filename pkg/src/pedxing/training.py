"""Epoch loop, evaluation and resumable training runs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, restore, save_checkpoint
from .exceptions import ContractError, UndefinedMetricError
from .heads import ModelPhi
from .losses import binary_cross_entropy, combined_loss, weighted_cross_entropy
from .metrics import accuracy, precision, roc_auc, roc_curve
from .optim import Adam, MultiStepLR
from .tensor import Rng, Tensor

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["epoch", "split", "accuracy", "precision", "auc", "loss_total", "loss_cross",
                  "loss_pose", "loss_speed", "lr", "lambda", "stride"]


def batch_losses(model, batch, lam, class_weights):
    """Forward one stacked batch and build the λ-weighted loss bundle."""
    x = Tensor(batch["frames"])
    out = model(x)
    loss_cross = weighted_cross_entropy(out.crossing, batch["labels"], class_weights)
    loss_pose = loss_speed = None
    if out.pose is not None:
        m = out.pose.shape[0]
        loss_pose = binary_cross_entropy(out.pose, batch["pose"].reshape(m, -1),
                                         batch["pose_mask"].reshape(m, -1))
        loss_speed = binary_cross_entropy(out.speed, batch["speed"].reshape(m, -1))
    return out, combined_loss(loss_cross, loss_pose, loss_speed, lam)


def _safe(metric, *args):
    try:
        return metric(*args)
    except UndefinedMetricError:
        return float("nan")


def summarize(logits, labels):
    """accuracy / precision / AUC with NaN for undefined metrics."""
    scores = _softmax_pos(logits)
    return {"accuracy": _safe(accuracy, logits, labels),
            "precision": _safe(precision, logits, labels),
            "auc": _safe(roc_auc, scores, labels)}


def _softmax_pos(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e[:, 1] / e.sum(axis=1)


def trainable_parameters(model: ModelPhi, lam):
    """Extractor and crossing head always; side-task heads only when λ > 0."""
    parts = ["extractor", "crossing"] + (["pose", "speed"] if lam > 0 and model.aux_heads else [])
    named = []
    for part in parts:
        module = getattr(model, part)
        named += list(module.named_parameters(part + "."))
    return named


def train_epoch(model, dataset, optimizer, lam, class_weights, rng, batch_size=16):
    """One pass over shuffled batches. Returns mean losses and train metrics."""
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    model.train()
    order = rng.permutation(len(dataset))
    sums = {"loss_total": 0.0, "loss_cross": 0.0, "loss_pose": 0.0, "loss_speed": 0.0}
    logits, labels = [], []
    for batch in dataset.batches(batch_size, order):
        model.zero_grad()
        out, bundle = batch_losses(model, batch, lam, class_weights)
        bundle.total.backward()
        optimizer.step()
        n = len(batch["labels"])
        for k, v in bundle.values().items():
            sums[k] += v * n
        logits.append(out.crossing.data)
        labels.append(batch["labels"])
    result = {k: v / len(dataset) for k, v in sums.items()}
    result.update(summarize(np.concatenate(logits), np.concatenate(labels)))
    return result


@dataclass
class EvalResult:
    accuracy: float
    precision: float
    auc: float
    losses: dict
    scores: np.ndarray
    labels: np.ndarray
    logits: np.ndarray

    def roc(self):
        return roc_curve(self.scores, self.labels)

    def as_row(self):
        row = {"accuracy": self.accuracy, "precision": self.precision, "auc": self.auc}
        row.update(self.losses)
        return row


def evaluate(model, dataset, class_weights=None, lam=0.0, batch_size=16):
    """Eval-mode metrics over every clip; model state is not modified."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate an empty dataset")
    model.eval()
    logits, sums = [], {}
    pose_n = 0
    with T.no_grad():
        for batch in dataset.batches(batch_size):
            out, bundle = batch_losses(model, batch, lam, class_weights)
            logits.append(out.crossing.data)
            n = len(batch["labels"])
            pose_n += n
            for k, v in bundle.values().items():
                sums[k] = sums.get(k, 0.0) + v * n
        all_logits = np.concatenate(logits)
        labels = dataset.labels
        losses = {k: v / pose_n for k, v in sums.items()}
        # the crossing loss is weight-normalised over the whole set, not per batch
        losses["loss_cross"] = float(weighted_cross_entropy(
            Tensor(all_logits), labels, class_weights).item())
        losses["loss_total"] = (losses["loss_cross"] + lam * losses["loss_pose"]
                                + lam * losses["loss_speed"])
    metrics = summarize(all_logits, labels)
    return EvalResult(metrics["accuracy"], metrics["precision"], metrics["auc"], losses,
                      _softmax_pos(all_logits), labels, all_logits)


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


class MetricsLog:
    """Append-only per-epoch CSV."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(METRIC_COLUMNS)

    def append(self, row):
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow([_fmt(row.get(c, "")) for c in METRIC_COLUMNS])

    def truncate_after(self, epoch):
        """Drop rows for epochs > ``epoch`` (used when resuming into a run dir)."""
        with open(self.path, newline="") as fh:
            rows = list(csv.reader(fh))
        keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= epoch]
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(keep)


class Trainer:
    """Owns model, optimiser, schedule and RNG streams for one training run."""

    def __init__(self, config, train_set, test_set=None, dtype=np.float32):
        self.config = config
        self.train_set = train_set
        self.test_set = test_set if test_set is not None and len(test_set) else None
        self.model = ModelPhi(config.backbone_config(), config.speed_classes, seed=config.seed,
                              aux_heads=config.aux_heads, dtype=dtype)
        self.class_weights = config.resolve_class_weights(train_set.class_counts())
        self.optimizer = Adam(trainable_parameters(self.model, config.lam), lr=config.lr,
                              weight_decay=config.weight_decay)
        self.scheduler = MultiStepLR(config.lr, config.milestones, config.gamma)
        self.shuffle_rng = Rng(config.seed).spawn(6)[5]
        self.epoch = 0  # number of completed epochs

    # -------------------------------------------------------------- state
    def rng_states(self):
        return {"shuffle": self.shuffle_rng.get_state(), "dropout": self.model.dropout_rng.get_state()}

    def save(self, path):
        save_checkpoint(path, self.model, self.optimizer, self.scheduler, self.epoch,
                        self.config, self.rng_states())

    def resume(self, path, force=False):
        ckpt = load_checkpoint(path, self.config.fingerprint(), force=force)
        restore(ckpt, self.model, self.optimizer, self.scheduler)
        self.shuffle_rng.set_state(ckpt.meta["rng"]["shuffle"])
        self.model.dropout_rng.set_state(ckpt.meta["rng"]["dropout"])
        self.epoch = ckpt.epoch
        return ckpt

    # --------------------------------------------------------------- loop
    def run_epoch(self):
        cfg = self.config
        self.optimizer.lr = self.scheduler.lr_at(self.epoch)
        train = train_epoch(self.model, self.train_set, self.optimizer, cfg.lam,
                            self.class_weights, self.shuffle_rng, cfg.batch_size)
        lr = self.optimizer.lr
        self.epoch += 1
        self.scheduler.epoch = self.epoch
        common = {"epoch": self.epoch, "lr": lr, "lambda": float(cfg.lam), "stride": cfg.stride}
        rows = [dict(common, split="train", **train)]
        if self.test_set is not None:
            res = evaluate(self.model, self.test_set, self.class_weights, cfg.lam, cfg.batch_size)
            rows.append(dict(common, split="test", **res.as_row()))
        return rows

    def fit(self, epochs=None, out_dir=None, on_epoch=None):
        """Train up to ``epochs`` completed epochs (default ``config.epochs``).

        With ``out_dir``, appends to ``metrics.csv`` and writes checkpoints
        every ``checkpoint_every`` epochs plus ``checkpoints/final.xint``.
        """
        epochs = self.config.epochs if epochs is None else epochs
        metrics = ckpt_dir = None
        if out_dir is not None:
            out_dir = Path(out_dir)
            ckpt_dir = out_dir / "checkpoints"
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            metrics = MetricsLog(out_dir / "metrics.csv")
            metrics.truncate_after(self.epoch)
        history = []
        while self.epoch < epochs:
            rows = self.run_epoch()
            history.extend(rows)
            if metrics is not None:
                for row in rows:
                    metrics.append(row)
                if self.epoch % self.config.checkpoint_every == 0:
                    self.save(ckpt_dir / f"epoch{self.epoch:04d}.xint")
            if on_epoch is not None:
                on_epoch(rows)
            log.info("epoch %d: %s", self.epoch, rows[-1])
        if ckpt_dir is not None:
            self.save(ckpt_dir / "final.xint")
        return history
