"""Acceptance criteria, one test per criterion, each reporting a PASS/FAIL line.

The lines are collected in ``conftest.ACCEPTANCE_LINES`` and printed in the
terminal summary under "acceptance criteria".
"""

import hashlib

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from aila import autodiff as ad
from aila import cli
from aila.ablation import AblationPlan, compare_variants, run_ablation
from aila.autodiff import Tensor
from aila.config import VARIANTS, DataSpec, ModelConfig, TrainConfig
from aila.data import last_step_oracle_mse, synth_long_memory
from aila.gradcheck import timed_suite
from aila.layers import LayerState, arch1_integrate, arch2_integrate, base_forward
from aila.models import build_model, forward, run_layers
from aila.training import train


def report(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    print(ACCEPTANCE_LINES[-1])


def test_criterion_1_gradient_fidelity():
    results, seconds = timed_suite("small")
    worst = max(results, key=lambda r: r.max_rel_error / r.tolerance)
    failed = [r.name for r in results if not r.passed]
    ok = not failed and seconds < 60
    report(1, ok, f"{len(results)} checks, {len(failed)} over tolerance, worst {worst.name} "
                  f"{worst.max_rel_error:.1e} (tol {worst.tolerance:.0e}), {seconds:.1f}s")
    assert ok, failed


def test_criterion_2_attention_normalization():
    rng = np.random.default_rng(2024)
    worst, count = 0.0, 0
    for trial in range(100):
        heads = int(rng.choice([1, 2, 4]))
        cfg = ModelConfig(variant="aila2", num_layers=4, hidden=8, d_k=8, d_v=8, heads=heads, input_dim=2)
        model = build_model(cfg, seed=trial)
        x = rng.normal(scale=rng.uniform(0.1, 5.0), size=(int(rng.integers(1, 5)), int(rng.integers(1, 6)), 2))
        weights = []
        with ad.no_grad():
            run_layers(model, x, weights=weights)
        assert weights[0] is None and len(weights) == 4
        for alpha in weights[1:]:
            worst = max(worst, float(np.max(np.abs(alpha.sum(axis=-1) - 1.0))))
            count += alpha[..., 0].size
    ok = worst < 1e-12
    report(2, ok, f"100 forwards, {count} position/head/layer sums, max |sum - 1| = {worst:.1e}")
    assert ok


def test_criterion_3_oracle_equivalence():
    x = np.random.default_rng(3).normal(size=(3, 4, 2))
    errs = {}
    for variant in ("aila2", "aila1"):
        cfg = ModelConfig(variant=variant, num_layers=2, hidden=4, d_k=4, d_v=4, heads=1, input_dim=2)
        model = build_model(cfg, seed=17)
        errs[variant] = float(np.max(np.abs(forward(model, x).data - oracles.model_forward(model, x))))
    ok = max(errs.values()) < 1e-10
    report(3, ok, ", ".join(f"{k} max abs diff {v:.1e}" for k, v in errs.items()) + " (tol 1e-10)")
    assert ok


def test_criterion_4_degenerate_reductions():
    x = Tensor(np.random.default_rng(4).normal(size=(2, 3, 2)))
    exact = True
    for variant in ("aila1", "aila2"):
        model = build_model(ModelConfig(variant=variant, num_layers=2, hidden=4, d_k=4, d_v=4, input_dim=2), seed=4)
        layer = model.layers[0]
        h_tilde = base_forward(x, layer.base)
        integrate = arch1_integrate if variant == "aila1" else arch2_integrate
        a1 = integrate(h_tilde, LayerState(), layer.integrator)
        h1 = run_layers(model, x).outputs[0]
        want = ad.layer_norm(ad.relu(h_tilde), layer.gain, layer.bias)
        exact &= not np.any(a1.data) and np.array_equal(h1.data, want.data)
    weights = []
    model = build_model(ModelConfig(variant="aila2", num_layers=2, hidden=4, d_k=4, d_v=4, heads=2, input_dim=2), seed=5)
    run_layers(model, x, weights=weights)
    single = bool(np.all(weights[1] == 1.0))
    ok = exact and single
    report(4, ok, f"j=1 reductions exact for aila1/aila2: {exact}; single-predecessor alpha == 1 exactly: {single}")
    assert ok


# desk-scale learning setup; see the decisions ledger for how it was chosen
LEARN_MODEL = dict(num_layers=2, hidden=16, d_k=16, d_v=16, heads=1)
LEARN_TRAIN = dict(lr=1e-3, grad_clip=1.0, batch_size=32, epochs=200, early_stop_patience=200)
LEARN_DATA_SEED = 0


@pytest.mark.slow
def test_criterion_5_learning_sanity():
    data = synth_long_memory(2000, T=24, lag=12, seed=LEARN_DATA_SEED)
    target = 0.5 * last_step_oracle_mse(data)
    rows, ok = [], True
    for variant in ("aila1", "aila2"):
        for seed in range(5):
            model = build_model(ModelConfig(variant=variant, **LEARN_MODEL), seed=seed)

            def reached(r):
                last = r.epochs[-1]
                return last.val_loss <= target and last.train_loss <= 0.5 * r.initial_train_loss

            rep = train(model, data, TrainConfig(**LEARN_TRAIN), seed=seed, stop_when=reached)
            hit = reached(rep) and not rep.diverged
            fast = rep.train_seconds < 600
            ok &= hit and fast
            rows.append(f"{variant}/s{seed}:{len(rep.epochs)}ep,{rep.train_seconds:.0f}s,"
                        f"val/oracle={rep.epochs[-1].val_loss / (2 * target):.2f}{'' if hit else '!'}")
    report(5, ok, f"target val <= {target:.3f}; " + " ".join(rows))
    assert ok


def test_criterion_6_ablation_harness(tmp_path):
    data = DataSpec("long_memory", {"num_examples": 200, "T": 8, "lag": 3, "seed": 0})
    model = ModelConfig(variant="aila2", num_layers=4, hidden=8, d_k=8, d_v=8, heads=1)
    tcfg = TrainConfig(epochs=3, seeds=[0, 1, 2, 3, 4])
    problems = []
    reports = {}
    for axis, values in (("depth", [2, 4, 6]), ("heads", [1, 4]), ("knockout", [1, 2, 3, 4])):
        out = tmp_path / axis
        rep = run_ablation(AblationPlan(model=model, train=tcfg, axis=axis, values=values, data=data), out)
        reports[axis] = rep
        expect = (["base"] if axis == "knockout" else []) + [f"{axis}{v}" for v in values]
        if [c.label for c in rep.cells] != expect:
            problems.append(f"{axis} cells {[c.label for c in rep.cells]}")
        if any(len(c.per_seed) != 5 or not np.isfinite(c.mean) for c in rep.cells):
            problems.append(f"{axis} incomplete cells")
        for name in ("ablation.csv", "summary.txt", "plan.json"):
            if not (out / name).exists():
                problems.append(f"{axis} missing {name}")
        base = rep.cell(rep.base_label).mean
        if any(abs(c.delta - (c.mean - base)) > 1e-12 for c in rep.cells):
            problems.append(f"{axis} deltas")
    ko = reports["knockout"]
    if ko.checksums_unchanged is not True:
        problems.append("knockout changed parameters")
    deltas = {c.label: c.delta for c in ko.cells if c.label != "base"}
    if len(deltas) != 4:
        problems.append("knockout delta count")
    ok = not problems
    report(6, ok, f"depth {{2,4,6}} runs={reports['depth'].total_runs}, heads {{1,4}} runs={reports['heads'].total_runs}, "
                  f"knockout checksums unchanged={ko.checksums_unchanged}, deltas "
                  + " ".join(f"{k}={v:+.3g}" for k, v in deltas.items()) + (f"; problems: {problems}" if problems else ""))
    assert ok, problems


def test_criterion_7_determinism(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("model: {variant: aila2, num_layers: 3, hidden: 8, d_k: 8, d_v: 8, heads: 2}\n"
                   "train: {epochs: 3, seeds: [7]}\n"
                   "data: {kind: long_memory, params: {num_examples: 120, T: 6, lag: 2, seed: 1}}\n")
    digests = []
    for name in ("a", "b"):
        assert cli.main(["train", str(cfg), "--run-dir", str(tmp_path / name)]) == cli.EXIT_OK
        digests.append({f: hashlib.sha256((tmp_path / name / f).read_bytes()).hexdigest()
                        for f in ("model.ckpt", "report.jsonl", "config.json")})
    capsys.readouterr()
    ok = digests[0] == digests[1]
    report(7, ok, "two runs byte-identical: " + ", ".join(f"{f} {d[:12]}" for f, d in digests[0].items()))
    assert ok


def test_criterion_8_baseline_comparison(tmp_path):
    data = DataSpec("long_memory", {"num_examples": 300, "T": 12, "lag": 4, "seed": 0})
    model = ModelConfig(variant="aila2", num_layers=4, hidden=32, d_k=32, d_v=32)
    rep = compare_variants(data, seeds=[0, 1, 2], model=model, train_cfg=TrainConfig(epochs=2), out_dir=tmp_path)
    pc = {c.label: c.param_count for c in rep.cells}
    complete = ([c.label for c in rep.cells] == list(VARIANTS)
                and all(np.isfinite(c.mean) and c.train_seconds > 0 and c.inference_seconds > 0 for c in rep.cells)
                and len({c.dataset_fingerprint for c in rep.cells}) == 1)
    ordered = pc["plain"] <= pc["residual_sum"] < min(pc["aila1"], pc["aila2"])
    ok = complete and ordered
    report(8, ok, " ".join(f"{c.label}: mse {c.mean:.3f}+/-{c.std:.3f} params {c.param_count} "
                           f"train {c.train_seconds:.1f}s;" for c in rep.cells))
    assert ok
