"""AdamW with per-group learning rates, plateau scheduling, and the fit loop.

Two parameter groups exist: the convolutional backbone, and everything
trained at the faster rate (projection, circuit angles, fusion head). The
scheduler multiplies both group rates by `plateau_factor` whenever the
monitored validation quantity fails to improve by more than
`plateau_threshold` for `plateau_patience` consecutive epochs, at most one
reduction per window.

Reproducibility contract: with a fixed seed and threads=1 the parameter
trajectory, the history and the checkpoints are bitwise identical across
reruns. History CSVs therefore exclude wall-clock timing; per-epoch seconds
live in MetricsReport and the JSON summary only.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import AugmentPolicy, Sample, augment, to_batch
from .errors import ConfigError, DataError, NumericalAbort, UsageError
from .metrics import MetricsReport, report_from_scores
from .model import HybridModel
from .rng import stream

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "accuracy", "auc", "f1",
                   "sensitivity", "specificity", "precision", "recall",
                   "tp", "fp", "tn", "fn")


@dataclass(frozen=True)
class OptimConfig:
    lr_backbone: float = 1e-3
    lr_quantum_and_head: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    plateau_threshold: float = 1e-4
    monitor: str = "val_loss"

    def __post_init__(self) -> None:
        if self.lr_backbone <= 0 or self.lr_quantum_and_head <= 0:
            raise ConfigError("learning rates must be positive")
        if self.lr_quantum_and_head < self.lr_backbone:
            raise ConfigError("lr_quantum_and_head must be >= lr_backbone")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("betas must lie in [0,1)")
        if self.monitor not in ("val_loss", "val_accuracy"):
            raise ConfigError(f"monitor must be val_loss or val_accuracy, got {self.monitor!r}")

    def group_lr(self, group: str) -> float:
        return self.lr_backbone if group == "backbone" else self.lr_quantum_and_head


class AdamW:
    """Decoupled weight decay; bias-corrected moments; one lr per group."""

    def __init__(self, groups: dict[str, dict[str, Tensor]], cfg: OptimConfig):
        self.groups = groups
        self.cfg = cfg
        self.t = 0
        self.moments = {
            name: (np.zeros_like(p.data), np.zeros_like(p.data))
            for params in groups.values() for name, p in params.items()
        }

    def step(self, lr_scale: float = 1.0) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for group, params in self.groups.items():
            lr = cfg.group_lr(group) * lr_scale
            for name, p in params.items():
                if p.grad is None:
                    raise UsageError(f"parameter {name} has no gradient; run backward first")
                m, v = self.moments[name]
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * p.grad
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * p.grad * p.grad
                update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps) + cfg.weight_decay * p.data
                p.data = p.data - lr * update

    def zero_grad(self) -> None:
        for params in self.groups.values():
            for p in params.values():
                p.zero_grad()


class PlateauScheduler:
    """Multiply learning rates by `factor` after `patience` consecutive epochs
    without improvement beyond `threshold`; the bad-epoch counter resets on a
    reduction, so each patience window triggers at most once."""

    def __init__(self, factor: float = 0.1, patience: int = 3, threshold: float = 1e-4,
                 mode: str = "min"):
        if mode not in ("min", "max"):
            raise ConfigError(f"mode must be min or max, got {mode!r}")
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.mode = mode
        self.best: float | None = None
        self.bad_epochs = 0
        self.multiplier = 1.0

    def step(self, value: float) -> float:
        improved = self.best is None or (
            value < self.best - self.threshold if self.mode == "min"
            else value > self.best + self.threshold
        )
        if improved:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.multiplier *= self.factor
                self.bad_epochs = 0
        return self.multiplier


def bce_loss_value(logits: np.ndarray, labels: np.ndarray) -> float:
    u = -(2.0 * labels - 1.0) * logits
    return float(np.mean(np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def train_epoch(model: HybridModel, train_set: list[Sample], policy: AugmentPolicy,
                optimizer: AdamW, seed: int, epoch: int, batch_size: int = 16,
                quantum: bool = True, lr_scale: float = 1.0) -> tuple[float, float]:
    """One pass of shuffled mini-batches; returns (mean train loss, seconds).

    Augmentation draws come from per-(epoch, sample) streams, so they are
    independent of batch composition and processing order.
    """
    if not train_set:
        raise DataError("train set is empty")
    start = time.perf_counter()
    order = stream(seed, "shuffle", epoch).permutation(len(train_set))
    total_loss = 0.0
    for batch_no, lo in enumerate(range(0, len(order), batch_size)):
        idx = order[lo:lo + batch_size]
        batch = [augment(train_set[i], policy, stream(seed, "augment", epoch, int(i)))
                 for i in idx]
        x, y = to_batch(batch, model.backbone_cfg.input_size)
        loss = ad.bce_with_logits(model.forward(Tensor(x), quantum=quantum), Tensor(y))
        if not np.isfinite(loss.data):
            raise NumericalAbort(
                f"non-finite loss at epoch {epoch}, batch {batch_no} (samples {idx.tolist()})"
            )
        loss.backward()
        optimizer.step(lr_scale=lr_scale)
        optimizer.zero_grad()
        model.zero_grad()
        total_loss += float(loss.data) * len(idx)
    return total_loss / len(order), time.perf_counter() - start


def evaluate(model: HybridModel, dataset: list[Sample], threshold: float = 0.5,
             batch_size: int = 64, quantum: bool = True) -> MetricsReport:
    """Deterministic scoring pass: no augmentation, no gradients."""
    if not dataset:
        raise DataError("cannot evaluate an empty dataset")
    scores = np.empty(len(dataset))
    labels = np.array([s.label for s in dataset], dtype=np.float64)
    loss_sum = 0.0
    for lo in range(0, len(dataset), batch_size):
        chunk = dataset[lo:lo + batch_size]
        x, y = to_batch(chunk, model.backbone_cfg.input_size)
        logits = model.forward(Tensor(x), quantum=quantum).data
        loss_sum += bce_loss_value(logits, y) * len(chunk)
        scores[lo:lo + len(chunk)] = _sigmoid(logits)
    report = report_from_scores(scores, labels, threshold, val_loss=loss_sum / len(dataset))
    if report.auc is None:
        log.warning("evaluation set contains a single class; AUC undefined")
    return report


@dataclass
class FitResult:
    history: list[MetricsReport]
    best_epoch: int
    best_accuracy: float
    best_state: dict[str, np.ndarray]
    last_state: dict[str, np.ndarray]
    total_seconds: float


def fit(model: HybridModel, train_set: list[Sample], val_set: list[Sample],
        optim_cfg: OptimConfig, epochs: int, policy: AugmentPolicy, seed: int,
        batch_size: int = 16, threshold: float = 0.5, quantum: bool = True) -> FitResult:
    """Train, evaluate each epoch, schedule, and retain the best-accuracy
    checkpoint (ties keep the earlier epoch)."""
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    mode = "hybrid" if quantum else "classical"
    optimizer = AdamW(model.param_groups(mode), optim_cfg)
    scheduler = PlateauScheduler(optim_cfg.plateau_factor, optim_cfg.plateau_patience,
                                 optim_cfg.plateau_threshold,
                                 mode="min" if optim_cfg.monitor == "val_loss" else "max")
    history: list[MetricsReport] = []
    best_state = model.state_arrays()
    best_accuracy = -np.inf
    best_epoch = 0
    lr_scale = 1.0
    start = time.perf_counter()
    for epoch in range(1, epochs + 1):
        train_loss, seconds = train_epoch(model, train_set, policy, optimizer, seed, epoch,
                                          batch_size=batch_size, quantum=quantum,
                                          lr_scale=lr_scale)
        report = evaluate(model, val_set, threshold=threshold, quantum=quantum)
        report.epoch = epoch
        report.train_loss = train_loss
        report.epoch_seconds = seconds
        monitored = report.val_loss if optim_cfg.monitor == "val_loss" else report.accuracy
        lr_scale = scheduler.step(monitored)
        if report.accuracy > best_accuracy:
            best_accuracy = report.accuracy
            best_epoch = epoch
            best_state = model.state_arrays()
        history.append(report)
        log.info("epoch %d: train_loss %.4f val_loss %.4f acc %.4f auc %s (%.1fs)",
                 epoch, train_loss, report.val_loss, report.accuracy,
                 "n/a" if report.auc is None else f"{report.auc:.4f}", seconds)
    return FitResult(history, best_epoch, max(best_accuracy, 0.0) if epochs else 0.0,
                     best_state, model.state_arrays(), time.perf_counter() - start)


# ---------------------------------------------------------------------------
# report serialization


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def history_to_csv(history: list[MetricsReport], path) -> None:
    """Fixed column order, full float precision, no wall-clock fields."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for rep in history:
            writer.writerow([_fmt(getattr(rep, col)) for col in HISTORY_COLUMNS])


def report_to_dict(report: MetricsReport) -> dict:
    out = {}
    for f in fields(MetricsReport):
        value = getattr(report, f.name)
        out[f.name] = value if value is None or isinstance(value, (int, str)) else float(value)
    return out


def write_summary(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def comparison_table(hybrid: dict, classical: dict) -> str:
    """Side-by-side metric table for the hybrid model and its classical
    ablation, mirroring the usual baseline-comparison figure layout."""
    keys = ("accuracy", "auc", "f1", "sensitivity", "specificity", "precision", "recall")
    lines = [f"{'metric':<13}{'hybrid':>10}{'classical':>12}"]
    for key in keys:
        h, c = hybrid.get(key), classical.get(key)
        fmt = lambda v: "   n/a" if v is None else f"{v:.4f}"
        lines.append(f"{key:<13}{fmt(h):>10}{fmt(c):>12}")
    return "\n".join(lines)
