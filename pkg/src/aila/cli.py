"""Command-line entry point: train, eval, ablate, compare, gradcheck.

Exit codes are distinct per failure class so shell harnesses can assert them.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from .config import (RUN_SECTIONS, ConfigError, RunConfig, apply_overrides, load_checked_yaml,
                     load_run_config)
from .data import DataError, make_dataset
from .models import CheckpointError, build_model, load_checkpoint, save_checkpoint
from .training import evaluate_metric, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_DIVERGED = 5
EXIT_MISMATCH = 6
EXIT_GRADCHECK = 7

OUTPUT_ROOT_ENV = "AILA_OUTPUT_ROOT"

PLAN_SECTIONS = {**RUN_SECTIONS, "axis": None, "values": None, "base_value": None,
                 "retrain_knockout": None}


class UsageError(Exception):
    pass


def _fail(code: int, msg: str) -> int:
    print(f"aila: error: {msg}", file=sys.stderr)
    return code


def output_root(cli_out: str | None, config_root: str | None) -> Path:
    if cli_out:
        return Path(cli_out)
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or config_root or "runs")


def fresh_dir(path: Path, overwrite: bool) -> Path:
    """Return ``path`` if unused (or ``overwrite``), else a suffixed sibling; never clobbers."""
    if overwrite or not path.exists() or not any(path.iterdir()):
        path.mkdir(parents=True, exist_ok=True)
        return path
    n = 1
    while True:
        cand = path.with_name(f"{path.name}.{n}")
        if not cand.exists():
            cand.mkdir(parents=True)
            return cand
        n += 1


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(path)
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = load_run_config(_require_file(args.config), args.set)
    seed = args.seed if args.seed is not None else cfg.train.seeds[0]
    if args.run_dir:
        run_dir = fresh_dir(Path(args.run_dir), args.overwrite)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        root = output_root(args.out, cfg.output_dir)
        run_dir = fresh_dir(root / f"{Path(args.config).stem}-seed{seed}-{stamp}", args.overwrite)
    data = make_dataset(cfg.data)
    model = build_model(cfg.model, seed=seed)
    echo = {**cfg.to_dict(), "seed": seed}
    (run_dir / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    report = train(model, data, cfg.train, seed=seed, config_echo=echo)
    report.write(run_dir)
    save_checkpoint(run_dir / "model.ckpt", model, extra={"run": echo})
    print(json.dumps({"run_dir": str(run_dir), "metric": report.metric_name,
                      "test_metric": report.test_metric, "epochs": len(report.epochs),
                      "diverged": report.diverged}))
    if report.diverged:
        return _fail(EXIT_DIVERGED, f"training diverged: {report.message}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, header = load_checkpoint(_require_file(args.checkpoint))
    run = header.get("extra", {}).get("run")
    if args.config:
        cfg = load_run_config(_require_file(args.config))
        if dataclasses.asdict(cfg.model) != header["config"]:
            diff = {k: (header["config"].get(k), v) for k, v in dataclasses.asdict(cfg.model).items()
                    if header["config"].get(k) != v}
            raise CheckpointError(f"config/checkpoint model mismatch (checkpoint, config): {diff}")
        cfg_echo = cfg.to_dict()
    elif run is not None:
        cfg_echo = run
    else:
        raise ConfigError("checkpoint carries no run config; pass --config")
    rc = RunConfig.from_dict(cfg_echo)
    data = make_dataset(rc.data)
    n = model.num_layers
    if args.knockout is None:
        targets = [None]
    elif args.knockout == "all":
        targets = list(range(1, n + 1))
    else:
        try:
            j = int(args.knockout)
        except ValueError:
            raise UsageError(f"--knockout expects a layer number or 'all', got {args.knockout!r}")
        if not 1 <= j <= n:
            raise UsageError(f"--knockout {j} outside 1..{n}")
        targets = [j]
    split = data.split(args.split)
    for j in targets:
        value = evaluate_metric(model, split, rc.train.loss_kind, knockout=None if j is None else {j})
        print(json.dumps({"split": args.split, "knockout": j, "metric": rc.train.loss_kind,
                          "value": value}, sort_keys=True))
    return EXIT_OK


def load_plan(path: Path, overrides=()):
    from .ablation import AblationPlan

    raw = apply_overrides(load_checked_yaml(path.read_text(), PLAN_SECTIONS, str(path)), overrides,
                          PLAN_SECTIONS)
    out_dir = raw.pop("output_dir", None)
    try:
        return AblationPlan.from_dict(raw), out_dir
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def cmd_ablate(args) -> int:
    from .ablation import run_ablation

    plan, cfg_out = load_plan(_require_file(args.plan), args.set)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    if args.run_dir:
        out = fresh_dir(Path(args.run_dir), args.overwrite)
    else:
        out = fresh_dir(output_root(args.out, cfg_out) / f"{Path(args.plan).stem}-{stamp}", args.overwrite)
    report = run_ablation(plan, out)
    print(report.summary(), end="")
    print(f"wrote {out}")
    return EXIT_OK if not any(c.diverged_seeds for c in report.cells) else EXIT_DIVERGED


def cmd_compare(args) -> int:
    from .ablation import compare_variants

    cfg = load_run_config(_require_file(args.config), args.set)
    seeds = args.seeds or cfg.train.seeds
    stamp = time.strftime("%Y%m%d-%H%M%S")
    if args.run_dir:
        out = fresh_dir(Path(args.run_dir), args.overwrite)
    else:
        out = fresh_dir(output_root(args.out, cfg.output_dir) / f"compare-{stamp}", args.overwrite)
    report = compare_variants(cfg.data, seeds, cfg.model, cfg.train, out)
    print(report.summary(), end="")
    print(f"wrote {out}")
    return EXIT_OK if not any(c.diverged_seeds for c in report.cells) else EXIT_DIVERGED


def cmd_gradcheck(args) -> int:
    from .gradcheck import timed_suite

    results, seconds = timed_suite(args.scale, args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  max_rel_err {r.max_rel_error:.3e}  tol {r.tolerance:.0e}  "
              f"{'ok' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results)} checks, {len(failed)} failed, {seconds:.1f}s")
    return EXIT_GRADCHECK if failed else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aila", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def outputs(sp):
        sp.add_argument("--out", help=f"output root (default: ${OUTPUT_ROOT_ENV} or config output_dir)")
        sp.add_argument("--run-dir", help="exact run directory instead of a timestamped one")
        sp.add_argument("--overwrite", action="store_true", help="reuse a non-empty run directory")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value, e.g. --set model.hidden=32 (repeatable)")

    t = sub.add_parser("train", help="train one model from a run config")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    outputs(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint, optionally with layer knockout")
    e.add_argument("checkpoint")
    e.add_argument("--config", help="run config (defaults to the one stored in the checkpoint)")
    e.add_argument("--knockout", help="1-based layer to zero, or 'all' for one record per layer")
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation plan")
    a.add_argument("plan")
    outputs(a)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("compare", help="compare all five connection variants")
    c.add_argument("config")
    c.add_argument("--seeds", type=int, nargs="+")
    outputs(c)
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--scale", choices=("small", "full"), default="small")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, f"file not found: {exc}")
    except CheckpointError as exc:
        return _fail(EXIT_MISMATCH, str(exc))
    except (ConfigError, DataError) as exc:
        return _fail(EXIT_CONFIG, str(exc))


if __name__ == "__main__":
    sys.exit(main())
