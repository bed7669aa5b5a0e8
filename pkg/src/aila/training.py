"""Losses, Adam, early stopping and the single-run training loop."""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor
from .config import ConfigError, TrainConfig, loss_for_head
from .data import Dataset, DataError, Split, batch_indices
from .models import Model, forward

REPORT_SCHEMA = "aila.runreport/1"


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise DimensionError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = ad.sub(pred, target)
    return ad.mean(ad.mul(diff, diff))


def binary_ce(logits: Tensor, labels: Tensor) -> Tensor:
    """Mean of ``max(z, 0) - z*y + log(1 + exp(-|z|))``."""
    if logits.shape != labels.shape:
        raise DimensionError(f"binary_ce: logits {logits.shape} vs labels {labels.shape}")
    y = labels.data
    if np.any((y != 0) & (y != 1)):
        raise DataError("binary labels must be 0 or 1")
    z = logits.data
    n = z.size
    val = np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))))
    p = ad._sigmoid(z)
    return ad._make("binary_ce", np.array(val), (logits,), lambda g: (g * (p - y) / n,))


def multiclass_ce(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy; ``labels`` holds integer class ids."""
    lab = np.asarray(labels.data if isinstance(labels, Tensor) else labels).reshape(-1)
    z = logits.data
    if z.ndim != 2 or z.shape[0] != lab.size:
        raise DimensionError(f"multiclass_ce: logits {z.shape} vs {lab.size} labels")
    k = z.shape[1]
    if np.any(lab < 0) or np.any(lab >= k) or np.any(lab != np.round(lab)):
        raise DataError(f"class labels must be integers in [0, {k})")
    lab = lab.astype(np.int64)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    n = z.shape[0]
    val = np.mean(lse - z[np.arange(n), lab])
    soft = np.exp(z - lse[:, None])
    onehot = np.zeros_like(z)
    onehot[np.arange(n), lab] = 1.0
    return ad._make("multiclass_ce", np.array(val), (logits,), lambda g: (g * (soft - onehot) / n,))


LOSSES: dict[str, Callable[[Tensor, Tensor], Tensor]] = {
    "mse": mse_loss, "binary_ce": binary_ce, "multiclass_ce": multiclass_ce,
}


def metric(loss_kind: str, pred: np.ndarray, target: np.ndarray) -> float:
    """MSE for regression, accuracy for classification."""
    if loss_kind == "mse":
        return float(np.mean((pred - target) ** 2))
    if loss_kind == "binary_ce":
        return float(np.mean((pred > 0).astype(np.float64) == target))
    return float(np.mean(np.argmax(pred, axis=1) == target.reshape(-1)))


# ---------------------------------------------------------------------------
# Adam


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place bias-corrected Adam update of ``param``, ``m`` and ``v``."""
    if t < 1:
        raise ContractError("Adam step counter starts at 1")
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 grad_clip: float | None = None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        grads = {}
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {k}")
            grads[k] = g
        if self.grad_clip is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > self.grad_clip:
                grads = {k: g * (self.grad_clip / norm) for k, g in grads.items()}
        self.t += 1
        for k, p in self.params.items():
            adam_step(p.data, grads[k], self.m[k], self.v[k], self.t,
                      self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# training loop


class EarlyStopper:
    """Tracks the best validation loss; ``step`` returns True when patience runs out."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad = 0

    def step(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best, self.best_epoch, self.bad = val_loss, epoch, 0
            return False
        self.bad += 1
        return self.bad >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class RunReport:
    seed: int
    config: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    initial_train_loss: float = math.nan
    best_epoch: int = 0
    best_val_loss: float = math.nan
    test_metric: float = math.nan
    metric_name: str = "mse"
    train_seconds: float = 0.0
    inference_seconds: float = 0.0
    diverged: bool = False
    message: str = ""

    @property
    def final_train_loss(self) -> float:
        return self.epochs[-1].train_loss if self.epochs else math.nan

    def records(self) -> list[dict]:
        """Deterministic JSONL records; wall-clock timings are kept out (see ``timing``)."""
        out = [{"schema": REPORT_SCHEMA, "kind": "epoch", **dataclasses.asdict(e)} for e in self.epochs]
        out.append({
            "schema": REPORT_SCHEMA, "kind": "summary", "seed": self.seed,
            "epochs_run": len(self.epochs), "initial_train_loss": self.initial_train_loss,
            "final_train_loss": self.final_train_loss, "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss, "metric": self.metric_name,
            "test_metric": self.test_metric, "diverged": self.diverged, "message": self.message,
            "config": self.config,
        })
        return out

    def timing(self) -> dict:
        return {"seed": self.seed, "train_seconds": self.train_seconds,
                "inference_seconds": self.inference_seconds}

    def write(self, run_dir: str | Path) -> None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / "report.jsonl", "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        (run_dir / "timing.json").write_text(json.dumps(self.timing(), sort_keys=True) + "\n")


def read_report(run_dir: str | Path) -> list[dict]:
    with open(Path(run_dir) / "report.jsonl") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def predict(model: Model, split: Split, batch_size: int = 256) -> np.ndarray:
    outs = []
    with ad.no_grad():
        for lo in range(0, len(split), batch_size):
            outs.append(forward(model, split.x[lo:lo + batch_size]).data)
    return np.concatenate(outs, axis=0)


def _target_for(loss_kind: str, y: np.ndarray):
    return y if loss_kind != "multiclass_ce" else y.reshape(-1)


def evaluate_loss(model: Model, split: Split, loss_kind: str, knockout=None,
                  batch_size: int = 256) -> float:
    total = 0.0
    with ad.no_grad():
        for lo in range(0, len(split), batch_size):
            xb, yb = split.x[lo:lo + batch_size], split.y[lo:lo + batch_size]
            pred = forward(model, xb, knockout)
            total += LOSSES[loss_kind](pred, Tensor(_target_for(loss_kind, yb))).item() * len(xb)
    return total / len(split)


def evaluate_metric(model: Model, split: Split, loss_kind: str, knockout=None,
                    batch_size: int = 256) -> float:
    outs = []
    with ad.no_grad():
        for lo in range(0, len(split), batch_size):
            outs.append(forward(model, split.x[lo:lo + batch_size], knockout).data)
    return metric(loss_kind, np.concatenate(outs, axis=0), split.y)


def train(model: Model, data: Dataset, config: TrainConfig, seed: int = 0,
          callback: Callable[[int, Adam], None] | None = None,
          config_echo: dict | None = None, knockout=None,
          stop_when: Callable[[RunReport], bool] | None = None) -> RunReport:
    """Mini-batch Adam with per-epoch validation, early stopping and best-model restore.

    ``stop_when`` is an optional first-passage test evaluated after each epoch; when it
    returns True the loop ends early (used to bound acceptance runtimes).
    """
    for name in ("train", "val", "test"):
        if len(data.split(name)) == 0:
            raise DataError(f"{name} split is empty")
    if config.loss_kind != loss_for_head(model.config.head_kind):
        raise ConfigError(f"loss {config.loss_kind!r} does not match head {model.config.head_kind!r}")
    loss_fn = LOSSES[config.loss_kind]
    report = RunReport(seed=seed, config=config_echo if config_echo is not None else {},
                       metric_name="mse" if config.loss_kind == "mse" else "accuracy")
    opt = Adam(model.params, config.lr, (config.beta1, config.beta2), config.adam_eps, config.grad_clip)
    stopper = EarlyStopper(config.early_stop_patience)
    report.initial_train_loss = evaluate_loss(model, data.train, config.loss_kind, knockout)
    best = model.state_arrays()
    t0 = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        total, count = 0.0, 0
        try:
            for idx in batch_indices(len(data.train), config.batch_size, shuffle_seed=seed * 100_003 + epoch):
                xb = data.train.x[idx]
                yb = Tensor(_target_for(config.loss_kind, data.train.y[idx]))
                with ad.recording():
                    loss = loss_fn(forward(model, xb, knockout), yb)
                    if not math.isfinite(loss.item()):
                        raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
                    opt.zero_grad()
                    ad.backward(loss)
                opt.step()
                total += loss.item() * len(idx)
                count += len(idx)
        except FloatingPointError as exc:
            report.diverged = True
            report.message = str(exc)
            break
        val = evaluate_loss(model, data.val, config.loss_kind, knockout)
        report.epochs.append(EpochRecord(epoch, total / count, val))
        if not math.isfinite(val):
            report.diverged = True
            report.message = f"non-finite validation loss at epoch {epoch}"
            break
        stop = stopper.step(epoch, val)
        if stopper.best_epoch == epoch:
            best = model.state_arrays()
        if callback is not None:
            callback(epoch, opt)
        if stop or (stop_when is not None and stop_when(report)):
            break
    report.train_seconds = time.perf_counter() - t0
    model.load_arrays(best)
    report.best_epoch = stopper.best_epoch
    report.best_val_loss = stopper.best
    t1 = time.perf_counter()
    report.test_metric = evaluate_metric(model, data.test, config.loss_kind, knockout)
    report.inference_seconds = time.perf_counter() - t1
    return report


@dataclass
class Aggregate:
    mean: float
    std: float
    values: list[float]


def aggregate(values) -> Aggregate:
    vals = [float(v) for v in values]
    arr = np.array(vals)
    return Aggregate(float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0, vals)
