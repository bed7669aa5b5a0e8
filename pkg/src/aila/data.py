"""Datasets: CSV price series with log/normalise preprocessing, and the
synthetic long-memory and token-order tasks used for desk-scale runs."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterator

import numpy as np

from .autodiff import Tensor
from .config import ConfigError, DataSpec

SIGMA_FLOOR = 1e-8
DEFAULT_SPLIT = (0.7, 0.15, 0.15)
PAD, TOKEN_A, TOKEN_B = 0, 1, 2
RESERVED_TOKENS = 3


class DataError(ValueError):
    """Malformed or insufficient input data."""


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.x)


@dataclass
class Dataset:
    """Three chronological (or, for synthetic data, i.i.d.) splits plus metadata.

    ``stats`` holds the normalisation record for series data (log-domain
    ``mean``/``std`` computed on the training range only).
    """

    kind: str
    train: Split
    val: Split
    test: Split
    stats: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> Split:
        return {"train": self.train, "val": self.val, "test": self.test}[name]

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.kind.encode())
        for s in (self.train, self.val, self.test):
            h.update(np.ascontiguousarray(s.x, dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(s.y, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


SeriesDataset = Dataset
TokenDataset = Dataset


def split_counts(n: int, fractions=DEFAULT_SPLIT) -> tuple[int, int, int]:
    if n < 1:
        raise DataError("no examples to split")
    n_train = max(1, int(math.floor(fractions[0] * n)))
    n_val = min(n - n_train, int(math.floor(fractions[1] * n)))
    return n_train, n_val, n - n_train - n_val


def _cut(x: np.ndarray, y: np.ndarray, counts) -> tuple[Split, Split, Split]:
    a, b, _ = counts
    return Split(x[:a], y[:a]), Split(x[a:a + b], y[a:a + b]), Split(x[a + b:], y[a + b:])


# ---------------------------------------------------------------------------
# CSV series


def normalize(log_values: np.ndarray, mean: float, std: float) -> np.ndarray:
    return (log_values - mean) / std


def denormalize(z: np.ndarray, mean: float, std: float) -> np.ndarray:
    return z * std + mean


def make_windows(series: np.ndarray, window: int, horizon: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inputs ``series[s:s+window]`` predicting ``series[s+window-1+horizon]``.

    Returns (inputs, targets, target_index).
    """
    if window < 1 or horizon < 1:
        raise ConfigError("window and horizon must be positive")
    n = len(series) - window - horizon + 1
    if n < 1:
        raise DataError(f"{len(series)} rows are too few for one window of {window} + horizon {horizon}")
    starts = np.arange(n)
    idx = starts[:, None] + np.arange(window)[None, :]
    tgt = starts + window - 1 + horizon
    return series[idx], series[tgt], tgt


def read_csv_values(path: str | Path, value_column: str, date_column: str = "date",
                    monthly: bool = False) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or value_column not in reader.fieldnames:
            raise DataError(f"{path}: column {value_column!r} not found in header {reader.fieldnames}")
        has_date = date_column in reader.fieldnames
        for lineno, row in enumerate(reader, start=2):
            try:
                v = float(row[value_column])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: unparsable value {row[value_column]!r}") from exc
            if not v > 0:
                raise DataError(f"{path}:{lineno}: non-positive value {v} cannot be log-transformed")
            d = date.fromisoformat(row[date_column]) if has_date else None
            rows.append((d, v))
    if monthly:
        if not rows or rows[0][0] is None:
            raise DataError(f"{path}: monthly aggregation needs a {date_column!r} column")
        rows.sort(key=lambda r: r[0])
        last: dict[tuple[int, int], float] = {}
        for d, v in rows:
            last[(d.year, d.month)] = v  # month-end value
        return np.array([last[k] for k in sorted(last)], dtype=np.float64)
    if rows and rows[0][0] is not None:
        rows.sort(key=lambda r: r[0])
    return np.array([v for _, v in rows], dtype=np.float64)


def series_dataset(values: np.ndarray, window: int, horizon: int = 1,
                   fractions=DEFAULT_SPLIT, name: str = "series") -> Dataset:
    """Log-transform, normalise on the training range, window, split chronologically."""
    values = np.asarray(values, dtype=np.float64)
    if np.any(values <= 0):
        raise DataError(f"non-positive value at row {int(np.argmax(values <= 0))}")
    logv = np.log(values)
    raw_x, _, tgt = make_windows(logv, window, horizon)
    counts = split_counts(len(raw_x), fractions)
    train_end = int(tgt[counts[0] - 1]) + 1
    head = logv[:train_end]
    # shifting by the first value keeps the mean exact for constant segments
    mean = float(head[0] + (head - head[0]).mean())
    std = max(float(head.std()), SIGMA_FLOOR)
    z = normalize(logv, mean, std)
    x, y, tgt = make_windows(z, window, horizon)
    tr, va, te = _cut(x[:, :, None], y[:, None], counts)
    return Dataset("csv", tr, va, te,
                   stats={"mean": mean, "std": std, "train_end": train_end},
                   meta={"name": name, "window": window, "horizon": horizon,
                         "target_index": tgt.tolist()})


def load_csv_series(path: str | Path, value_column: str, window: int, horizon: int = 1,
                    date_column: str = "date", monthly: bool = False,
                    fractions=DEFAULT_SPLIT) -> Dataset:
    values = read_csv_values(path, value_column, date_column, monthly)
    return series_dataset(values, window, horizon, fractions, name=str(path))


# ---------------------------------------------------------------------------
# synthetic tasks


def long_memory_target(x: np.ndarray) -> np.ndarray:
    return np.tanh(2.0 * x)


def synth_long_memory(num_examples: int, T: int, lag: int, seed: int,
                      noise: float = 0.05, fractions=DEFAULT_SPLIT) -> Dataset:
    """White-noise inputs; the target is ``tanh(2 x)`` of the input at step T - lag (1-based)."""
    if not 0 <= lag < T:
        raise ConfigError(f"lag={lag} must satisfy 0 <= lag < T={T}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((num_examples, T, 1))
    y = long_memory_target(x[:, T - lag - 1, 0]) + noise * rng.standard_normal(num_examples)
    tr, va, te = _cut(x, y[:, None], split_counts(num_examples, fractions))
    return Dataset("long_memory", tr, va, te,
                   meta={"num_examples": num_examples, "T": T, "lag": lag, "seed": seed, "noise": noise})


def last_step_oracle_mse(ds: Dataset, split: str = "val") -> float:
    """Least squares of y on (x_T, 1) fitted on train, scored on ``split``."""
    def design(s: Split):
        return np.column_stack([s.x[:, -1, :], np.ones(len(s))])

    coef, *_ = np.linalg.lstsq(design(ds.train), ds.train.y[:, 0], rcond=None)
    target = ds.split(split)
    resid = design(target) @ coef - target.y[:, 0]
    return float(np.mean(resid ** 2))


def synth_token_task(num_examples: int, L: int, vocab: int, seed: int,
                     fractions=DEFAULT_SPLIT) -> Dataset:
    """Token-order classification: label 1 iff token A appears before token B.

    Every sequence contains A and B exactly once among filler tokens and is
    left-padded with ``PAD`` so the last position is always a real token.
    """
    if vocab <= RESERVED_TOKENS:
        raise ConfigError(f"vocab={vocab} leaves no filler tokens (needs > {RESERVED_TOKENS})")
    if L < 2:
        raise ConfigError("sequence length must be at least 2")
    rng = np.random.default_rng(seed)
    labels = np.zeros(num_examples)
    labels[: num_examples // 2] = 1.0
    if num_examples % 2:
        labels[-1] = float(rng.integers(0, 2))
    rng.shuffle(labels)
    x = np.full((num_examples, L), PAD, dtype=np.int64)
    for n in range(num_examples):
        length = int(rng.integers(max(2, L // 2), L + 1))
        seq = rng.integers(RESERVED_TOKENS, vocab, size=length)
        pa, pb = sorted(rng.choice(length, size=2, replace=False))
        if labels[n] == 0:
            pa, pb = pb, pa
        seq[pa], seq[pb] = TOKEN_A, TOKEN_B
        x[n, L - length:] = seq
    tr, va, te = _cut(x, labels[:, None], split_counts(num_examples, fractions))
    return Dataset("token", tr, va, te,
                   meta={"num_examples": num_examples, "L": L, "vocab": vocab, "seed": seed})


def token_order_oracle(x: np.ndarray) -> np.ndarray:
    pos_a = np.argmax(x == TOKEN_A, axis=1)
    pos_b = np.argmax(x == TOKEN_B, axis=1)
    return (pos_a < pos_b).astype(np.float64)


def make_dataset(spec: DataSpec) -> Dataset:
    p = dict(spec.params)
    try:
        if spec.kind == "long_memory":
            return synth_long_memory(p.pop("num_examples", 2000), p.pop("T", 24), p.pop("lag", 12),
                                     p.pop("seed", 0), **p)
        if spec.kind == "token":
            return synth_token_task(p.pop("num_examples", 1000), p.pop("L", 20), p.pop("vocab", 12),
                                    p.pop("seed", 0), **p)
        for required in ("path", "value_column", "window", "horizon"):
            if required not in p:
                raise ConfigError(f"csv data requires {required!r}")
        return load_csv_series(**p)
    except TypeError as exc:
        raise ConfigError(f"bad data params for {spec.kind!r}: {exc}") from exc


def batches(split: Split, batch_size: int, shuffle_seed: int | None = None
            ) -> Iterator[tuple[Tensor, Tensor]]:
    """Mini-batches in a seeded permutation; the final partial batch is kept."""
    n = len(split)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    for lo in range(0, n, batch_size):
        idx = order[lo:lo + batch_size]
        yield Tensor(split.x[idx]), Tensor(split.y[idx])


def batch_indices(n: int, batch_size: int, shuffle_seed: int | None = None) -> list[np.ndarray]:
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    return [order[lo:lo + batch_size] for lo in range(0, n, batch_size)]
