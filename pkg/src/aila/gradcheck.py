"""Central finite-difference checks for the autodiff core and full models.

The relative error of one tensor is ``||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)``
(floored at 1e-12 so all-zero gradients compare as equal).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

STEP = 1e-5
PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-4


def numerical_grad(fn: Callable[[], Tensor], wrt: Tensor, step: float = STEP) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``wrt.data``."""
    grad = np.zeros_like(wrt.data)
    flat = wrt.data.reshape(-1)
    gflat = grad.reshape(-1)
    with ad.no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp = fn().item()
            flat[i] = old - step
            fm = fn().item()
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def autodiff_grads(fn: Callable[[], Tensor], wrt: Sequence[Tensor]) -> list[np.ndarray]:
    for t in wrt:
        t.requires_grad = True
        t.grad = None
    with ad.recording():
        loss = fn()
        ad.backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in wrt]


def check(fn: Callable[[], Tensor], wrt: Sequence[Tensor], step: float = STEP) -> float:
    """Largest relative error over ``wrt`` between autodiff and central differences."""
    auto = autodiff_grads(fn, wrt)
    return max(relative_error(g, numerical_grad(fn, t, step)) for g, t in zip(auto, wrt))


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _rand(rng, *shape, positive=False):
    x = rng.standard_normal(shape)
    return Tensor(np.abs(x) + 0.5 if positive else x)


def _weighted(rng, out: Tensor) -> Tensor:
    # random projection so every output element carries a distinct weight
    w = Tensor(rng.standard_normal(out.shape))
    return ad.sum(ad.mul(out, w))


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    """Named (loss_fn, inputs) pairs, one per differentiable primitive."""
    cases = {}

    a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
    cases["matmul"] = (lambda a=a, b=b: _weighted(rng_fixed(0), ad.matmul(a, b)), [a, b])
    a3, w3 = _rand(rng, 2, 3, 4), _rand(rng, 4, 5)
    cases["matmul_batched"] = (lambda: _weighted(rng_fixed(1), ad.matmul(a3, w3)), [a3, w3])
    x, y = _rand(rng, 3, 4), _rand(rng, 4)
    cases["add_bias"] = (lambda: _weighted(rng_fixed(2), ad.add(x, y)), [x, y])
    x2, y2 = _rand(rng, 3, 4), _rand(rng, 3, 4)
    cases["sub"] = (lambda: _weighted(rng_fixed(3), ad.sub(x2, y2)), [x2, y2])
    cases["mul"] = (lambda: _weighted(rng_fixed(4), ad.mul(x2, y2)), [x2, y2])
    s = _rand(rng, 5)
    cases["scale"] = (lambda: _weighted(rng_fixed(5), ad.scale(s, -2.5)), [s])
    # keep relu inputs away from the kink
    r = Tensor(np.sign(rng.standard_normal(6)) * (0.1 + rng.random(6)))
    cases["relu"] = (lambda: _weighted(rng_fixed(6), ad.relu(r)), [r])
    z = _rand(rng, 2, 3)
    cases["sigmoid"] = (lambda: _weighted(rng_fixed(7), ad.sigmoid(z)), [z])
    cases["tanh"] = (lambda: _weighted(rng_fixed(8), ad.tanh(z)), [z])
    cases["exp"] = (lambda: _weighted(rng_fixed(9), ad.exp(z)), [z])
    p = _rand(rng, 2, 3, positive=True)
    cases["log"] = (lambda: _weighted(rng_fixed(10), ad.log(p)), [p])
    sm = _rand(rng, 3, 4)
    cases["softmax"] = (lambda: _weighted(rng_fixed(11), ad.softmax(sm, axis=-1)), [sm])
    cases["softmax_axis0"] = (lambda: _weighted(rng_fixed(12), ad.softmax(sm, axis=0)), [sm])
    c1, c2 = _rand(rng, 2, 3), _rand(rng, 2, 2)
    cases["concat"] = (lambda: _weighted(rng_fixed(13), ad.concat([c1, c2], axis=-1)), [c1, c2])
    st1, st2 = _rand(rng, 2, 3), _rand(rng, 2, 3)
    cases["stack"] = (lambda: _weighted(rng_fixed(14), ad.stack([st1, st2], axis=1)), [st1, st2])
    sl = _rand(rng, 4, 5)
    cases["slice"] = (lambda: _weighted(rng_fixed(15), ad.slice(sl, 1, 1, 4)), [sl])
    cases["take"] = (lambda: _weighted(rng_fixed(16), ad.take(sl, 0, -1)), [sl])
    cases["reshape"] = (lambda: _weighted(rng_fixed(17), ad.reshape(sl, (2, 10))), [sl])
    cases["sum_axis"] = (lambda: _weighted(rng_fixed(18), ad.sum(sl, axis=1)), [sl])
    cases["mean_axis"] = (lambda: _weighted(rng_fixed(19), ad.mean(sl, axis=0)), [sl])
    bc = _rand(rng, 3, 1)
    cases["broadcast_to"] = (lambda: _weighted(rng_fixed(20), ad.broadcast_to(bc, (2, 3, 4))), [bc])
    table = _rand(rng, 5, 3)
    ids = np.array([[0, 2, 2], [4, 1, 0]])
    cases["embedding"] = (lambda: _weighted(rng_fixed(21), ad.embedding(table, ids)), [table])
    xl, gl, bl = _rand(rng, 4, 8), _rand(rng, 8), _rand(rng, 8)
    cases["layer_norm"] = (lambda: _weighted(rng_fixed(22), ad.layer_norm(xl, gl, bl)), [xl, gl, bl])

    xt, hp, cp = _rand(rng, 2, 3), _rand(rng, 2, 4), _rand(rng, 2, 4)
    wl, bll = Tensor(0.5 * rng.standard_normal((7, 16))), Tensor(0.5 * rng.standard_normal(16))

    def _lstm():
        h, c = ad.lstm_cell_step(xt, hp, cp, wl, bll)
        return ad.add(_weighted(rng_fixed(23), h), _weighted(rng_fixed(24), c))

    cases["lstm_cell_step"] = (_lstm, [xt, hp, cp, wl, bll])
    return cases


def rng_fixed(seed: int) -> np.random.Generator:
    return np.random.default_rng(1000 + seed)


def composite_cases(rng: np.random.Generator):
    """Compositions whose tolerance is the looser composite bound."""
    from .training import mse_loss

    x = _rand(rng, 3, 4)
    w = _rand(rng, 4, 5)
    g, b = _rand(rng, 5), _rand(rng, 5)
    target = _rand(rng, 3, 5)

    def _chain():
        hdn = ad.relu(ad.matmul(x, w))
        return mse_loss(ad.layer_norm(hdn, g, b), target)

    cases = {"matmul_relu_layernorm_mse": (_chain, [x, w, g, b])}

    seq = [_rand(rng, 2, 3) for _ in range(3)]
    wl = Tensor(0.5 * rng.standard_normal((3 + 4, 16)))
    bl = Tensor(0.5 * rng.standard_normal(16))

    def _unroll():
        h = ad.zeros((2, 4))
        c = ad.zeros((2, 4))
        for xt in seq:
            h, c = ad.lstm_cell_step(xt, h, c, wl, bl)
        return ad.sum(h)

    cases["lstm_3_steps"] = (_unroll, [wl, bl, *seq])
    return cases


def model_cases(heads: Sequence[int] = (1, 2), variants: Sequence[str] = ("aila1", "aila2"),
                num_layers: int = 2, d: int = 4, T: int = 3, batch: int = 2, seed: int = 0):
    """Full-model losses with every registry parameter as an input."""
    from .config import ModelConfig
    from .models import build_model, forward
    from .training import mse_loss

    cases = {}
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((batch, T, 2)))
    y = Tensor(rng.standard_normal((batch, 1)))
    for variant in variants:
        for h in heads:
            cfg = ModelConfig(variant=variant, num_layers=num_layers, hidden=d, d_k=d, d_v=d,
                              heads=h, base_kind="lstm", input_dim=2)
            model = build_model(cfg, seed=seed)
            params = list(model.params.values())
            cases[f"{variant}_H{h}"] = (lambda m=model: mse_loss(forward(m, x), y), params)
    return cases


def run_suite(scale: str = "small", seed: int = 0) -> list[GradCheckResult]:
    """Run every gradient check; ``full`` adds a deeper, wider model instance."""
    rng = np.random.default_rng(seed)
    results = []
    for name, (fn, wrt) in primitive_cases(rng).items():
        results.append(GradCheckResult(name, check(fn, wrt), PRIMITIVE_TOL))
    for name, (fn, wrt) in composite_cases(rng).items():
        results.append(GradCheckResult(name, check(fn, wrt), COMPOSITE_TOL))
    for name, (fn, wrt) in model_cases().items():
        results.append(GradCheckResult(f"model_{name}", check(fn, wrt), COMPOSITE_TOL))
    if scale == "full":
        big = model_cases(heads=(1, 2, 4), num_layers=3, d=8, T=4, batch=3, seed=seed + 1)
        big.update(model_cases(heads=(1,), variants=("plain", "residual_sum", "dense_concat"),
                               num_layers=3, d=4, T=3, seed=seed + 2))
        for name, (fn, wrt) in big.items():
            results.append(GradCheckResult(f"model_full_{name}", check(fn, wrt), COMPOSITE_TOL))
    return results


def timed_suite(scale: str = "small", seed: int = 0) -> tuple[list[GradCheckResult], float]:
    t0 = time.perf_counter()
    res = run_suite(scale, seed)
    return res, time.perf_counter() - t0
