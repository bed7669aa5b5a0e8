"""Ablation grids over variant, head count, depth and layer knockout."""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import VARIANTS, ConfigError, DataSpec, ModelConfig, TrainConfig, loss_for_head
from .data import Dataset, make_dataset
from .models import Model, build_model, checksum, param_count, save_checkpoint
from .training import RunReport, aggregate, evaluate_metric, train

AXES = ("variant", "heads", "depth", "knockout")
_FIELD = {"variant": "variant", "heads": "heads", "depth": "num_layers"}


@dataclass
class AblationPlan:
    model: ModelConfig
    train: TrainConfig
    axis: str
    values: list
    data: DataSpec = field(default_factory=DataSpec)
    base_value: object = None
    retrain_knockout: bool = False

    def __post_init__(self):
        self.validate()

    @property
    def seeds(self) -> list[int]:
        return list(self.train.seeds)

    def validate(self) -> None:
        if self.axis not in AXES:
            raise ConfigError(f"unknown ablation axis {self.axis!r}; expected one of {AXES}")
        if not self.values:
            raise ConfigError("ablation values list is empty")
        if len(set(map(str, self.values))) != len(self.values):
            raise ConfigError(f"duplicate ablation values {self.values}")
        if self.axis == "knockout":
            bad = [v for v in self.values if not 1 <= int(v) <= self.model.num_layers]
            if bad:
                raise ConfigError(f"knockout layers {bad} outside 1..{self.model.num_layers}")
        elif self.axis == "variant":
            bad = [v for v in self.values if v not in VARIANTS]
            if bad:
                raise ConfigError(f"unknown variants {bad}")
        for cfg in self.cell_configs().values():
            cfg.validate()

    def cell_configs(self) -> dict[str, ModelConfig]:
        if self.axis == "knockout":
            return {"base": self.model}
        out = {}
        for v in self.values:
            kw = {_FIELD[self.axis]: v}
            if self.axis == "variant" and v != "aila1":
                kw["task_dim"] = None
            out[cell_label(self.axis, v)] = dataclasses.replace(self.model, **kw)
        return out

    def base_label(self) -> str:
        if self.axis == "knockout":
            return "base"
        if self.base_value is not None:
            if self.base_value not in self.values:
                raise ConfigError(f"base value {self.base_value!r} is not among {self.values}")
            return cell_label(self.axis, self.base_value)
        current = getattr(self.model, _FIELD[self.axis])
        return cell_label(self.axis, current if current in self.values else self.values[0])

    def to_dict(self) -> dict:
        return {"axis": self.axis, "values": list(self.values), "base_value": self.base_value,
                "retrain_knockout": self.retrain_knockout,
                "model": dataclasses.asdict(self.model), "train": dataclasses.asdict(self.train),
                "data": dataclasses.asdict(self.data)}

    @classmethod
    def from_dict(cls, d: dict) -> "AblationPlan":
        allowed = {"axis", "values", "base_value", "retrain_knockout", "model", "train", "data"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown plan keys {sorted(unknown)}")
        return cls(model=ModelConfig(**d.get("model", {})), train=TrainConfig(**d.get("train", {})),
                   axis=d["axis"], values=list(d.get("values") or []),
                   data=DataSpec(**d.get("data", {})), base_value=d.get("base_value"),
                   retrain_knockout=bool(d.get("retrain_knockout", False)))


def cell_label(axis: str, value) -> str:
    return {"variant": f"{value}", "heads": f"heads{value}", "depth": f"depth{value}",
            "knockout": f"knockout{value}"}[axis]


@dataclass
class CellResult:
    label: str
    value: object
    metric_name: str
    per_seed: list[float]
    mean: float
    std: float
    param_count: int
    train_seconds: float
    inference_seconds: float
    dataset_fingerprint: str
    delta: float = 0.0
    rel_delta: float = 0.0
    within_noise: bool | None = None
    diverged_seeds: list[int] = field(default_factory=list)
    runs: int = 0


@dataclass
class AblationReport:
    axis: str
    base_label: str
    metric_name: str
    cells: list[CellResult]
    noise_floor: float = 0.0
    checksums_unchanged: bool | None = None

    def cell(self, label: str) -> CellResult:
        for c in self.cells:
            if c.label == label:
                return c
        raise KeyError(label)

    @property
    def total_runs(self) -> int:
        return int(sum(c.runs for c in self.cells))

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cols = ["label", "value", "metric", "mean", "std", "delta", "rel_delta", "within_noise",
                "param_count", "train_seconds", "inference_seconds", "runs", "diverged_seeds",
                "dataset_fingerprint", "per_seed"]
        with open(out / "ablation.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for c in self.cells:
                w.writerow([c.label, c.value, c.metric_name, repr(c.mean), repr(c.std), repr(c.delta),
                            repr(c.rel_delta), "" if c.within_noise is None else c.within_noise,
                            c.param_count, f"{c.train_seconds:.3f}", f"{c.inference_seconds:.3f}",
                            c.runs, " ".join(map(str, c.diverged_seeds)), c.dataset_fingerprint,
                            " ".join(repr(v) for v in c.per_seed)])
        (out / "summary.txt").write_text(self.summary())

    def summary(self) -> str:
        lines = [f"ablation over {self.axis}; base cell {self.base_label}; metric {self.metric_name}", ""]
        width = max(len(c.label) for c in self.cells)
        for c in self.cells:
            note = ""
            if c.within_noise is not None and c.label != self.base_label:
                note = "  (within noise)" if c.within_noise else ""
            if c.diverged_seeds:
                note += f"  DIVERGED seeds {c.diverged_seeds}"
            lines.append(f"{c.label:<{width}}  {c.mean:.6g} +/- {c.std:.2g}  "
                         f"delta {c.delta:+.4g} ({100 * c.rel_delta:+.2f}%)  params {c.param_count}  "
                         f"train {c.train_seconds:.2f}s  infer {c.inference_seconds:.3f}s{note}")
        if self.axis == "knockout":
            lines += ["", f"seed-noise floor (std of base seeds): {self.noise_floor:.4g}",
                      f"parameter checksums unchanged: {self.checksums_unchanged}"]
        return "\n".join(lines) + "\n"


def _seed_dir(root: Path | None, label: str, seed: int) -> Path | None:
    if root is None:
        return None
    d = root / label / f"seed{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def train_cell(cfg: ModelConfig, tcfg: TrainConfig, data: Dataset, seeds, out: Path | None,
               label: str, echo: dict | None = None) -> list[tuple[RunReport, Model]]:
    runs = []
    for seed in seeds:
        model = build_model(cfg, seed=seed)
        cell_echo = {"model": dataclasses.asdict(cfg), "train": dataclasses.asdict(tcfg),
                     "seed": seed, **(echo or {})}
        report = train(model, data, tcfg, seed=seed, config_echo=cell_echo)
        d = _seed_dir(out, label, seed)
        if d is not None:
            report.write(d)
            save_checkpoint(d / "model.ckpt", model, extra={"seed": seed})
        runs.append((report, model))
    return runs


def _cell(label, value, metric_name, metrics, times, infer, pc, fp, diverged) -> CellResult:
    agg = aggregate(metrics)
    return CellResult(label=label, value=value, metric_name=metric_name, per_seed=agg.values,
                      mean=agg.mean, std=agg.std, param_count=pc,
                      train_seconds=float(np.mean(times)), inference_seconds=float(np.mean(infer)),
                      dataset_fingerprint=fp, diverged_seeds=diverged, runs=len(metrics))


def _apply_deltas(report: AblationReport) -> None:
    base = report.cell(report.base_label)
    for c in report.cells:
        c.delta = c.mean - base.mean
        c.rel_delta = c.delta / abs(base.mean) if base.mean != 0 else 0.0


def run_ablation(plan: AblationPlan, out_dir: str | Path | None = None,
                 dataset: Dataset | None = None) -> AblationReport:
    """Train every cell over all seeds (knockout cells are evaluated, not retrained)."""
    plan.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
    data = dataset if dataset is not None else make_dataset(plan.data)
    fp = data.fingerprint()
    tcfg = dataclasses.replace(plan.train, loss_kind=loss_for_head(plan.model.head_kind))
    metric_name = "mse" if tcfg.loss_kind == "mse" else "accuracy"
    echo = {"data": dataclasses.asdict(plan.data), "dataset_fingerprint": fp}
    cells = []
    base_runs = None
    for label, cfg in plan.cell_configs().items():
        runs = train_cell(cfg, tcfg, data, plan.seeds, out, label, echo)
        if label == "base":
            base_runs = runs
        reports = [r for r, _ in runs]
        value = "none" if plan.axis == "knockout" else getattr(cfg, _FIELD[plan.axis])
        cells.append(_cell(label, value, metric_name, [r.test_metric for r in reports],
                           [r.train_seconds for r in reports], [r.inference_seconds for r in reports],
                           param_count(runs[0][1]), fp, [r.seed for r in reports if r.diverged]))
    report = AblationReport(plan.axis, plan.base_label(), metric_name, cells)
    if plan.axis == "knockout":
        report.checksums_unchanged = True
        for j in plan.values:
            j = int(j)
            label = cell_label("knockout", j)
            metrics, infer = [], []
            for (rep, model), seed in zip(base_runs, plan.seeds):
                if plan.retrain_knockout:
                    model = build_model(plan.model, seed=seed)
                    train(model, data, tcfg, seed=seed, knockout={j})
                before = checksum(model)
                t0 = time.perf_counter()
                metrics.append(evaluate_metric(model, data.test, tcfg.loss_kind, knockout={j}))
                infer.append(time.perf_counter() - t0)
                if checksum(model) != before:
                    report.checksums_unchanged = False
                d = _seed_dir(out, label, seed)
                if d is not None:
                    (d / "eval.json").write_text(json.dumps(
                        {"seed": seed, "knockout": j, "metric": tcfg.loss_kind, "value": metrics[-1],
                         "checksum": before, "retrained": plan.retrain_knockout}, sort_keys=True) + "\n")
            base_cell = cells[0]
            report.cells.append(_cell(label, j, metric_name, metrics, [0.0], infer,
                                      base_cell.param_count, fp, []))
        report.noise_floor = report.cell("base").std
        _apply_deltas(report)
        for c in report.cells:
            c.within_noise = abs(c.delta) < report.noise_floor
    else:
        _apply_deltas(report)
    if out is not None:
        report.write(out)
    return report


def compare_variants(data_spec: DataSpec, seeds, model: ModelConfig | None = None,
                     train_cfg: TrainConfig | None = None, out_dir: str | Path | None = None,
                     dataset: Dataset | None = None) -> AblationReport:
    """All five connection schemes at matched depth and width."""
    model = model or ModelConfig(num_layers=4, hidden=32, d_k=32, d_v=32)
    train_cfg = dataclasses.replace(train_cfg or TrainConfig(), seeds=list(seeds))
    plan = AblationPlan(model=dataclasses.replace(model, task_dim=None), train=train_cfg,
                        axis="variant", values=list(VARIANTS), data=data_spec,
                        base_value=model.variant if model.variant in VARIANTS else None)
    return run_ablation(plan, out_dir, dataset=dataset)
