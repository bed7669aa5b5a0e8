"""Cross-layer integration: the linear-scoring integrator (Arch-1) and the
query/key/value integrator (Arch-2), plus the base layers they sit on.

All integrators act position-wise: tensors are (..., d) and only the last
axis is mixed, so a sequence output (batch, time, d) is integrated
independently at every time step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .config import ConfigError


def uniform_param(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


@dataclass
class LayerState:
    """Outputs h_1..h_{j-1} of the layers completed so far."""

    outputs: list[Tensor] = field(default_factory=list)

    def append(self, h: Tensor) -> None:
        if self.outputs and h.shape != self.outputs[0].shape:
            raise DimensionError(f"layer output {h.shape} differs from {self.outputs[0].shape}")
        self.outputs.append(h)

    def __len__(self) -> int:
        return len(self.outputs)

    def __iter__(self):
        return iter(self.outputs)


@dataclass
class TaskEmbedding:
    t: Tensor | None = None

    @property
    def present(self) -> bool:
        return self.t is not None


@dataclass
class Arch1Integrator:
    """Per-predecessor projections and per-head linear scorers.

    ``scorers`` has shape (num_candidates, H, d/H); row ``c`` head ``k`` is the
    slice of w^(k) that scores candidate ``c``.  Candidates are ordered
    [h~_j, task (if present), W_{j,1} h_1, ..., W_{j,j-1} h_{j-1}].
    """

    proj: list[Tensor]
    scorers: Tensor
    num_heads: int
    task_proj: Tensor | None = None

    @classmethod
    def init(cls, rng, d: int, num_predecessors: int, num_heads: int,
             task_dim: int | None = None) -> "Arch1Integrator":
        if d % num_heads:
            raise ConfigError(f"d={d} not divisible by H={num_heads}")
        proj = [uniform_param(rng, (d, d), d) for _ in range(num_predecessors)]
        task_proj = uniform_param(rng, (task_dim, d), task_dim) if task_dim else None
        n_cand = 1 + num_predecessors + (1 if task_dim else 0)
        scorers = uniform_param(rng, (n_cand, num_heads, d // num_heads), d // num_heads)
        return cls(proj=proj, scorers=scorers, num_heads=num_heads, task_proj=task_proj)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"proj{i + 1}": w for i, w in enumerate(self.proj)}
        if self.task_proj is not None:
            out["task_proj"] = self.task_proj
        out["scorers"] = self.scorers
        return out


@dataclass
class Arch2Integrator:
    """Query/key/value projections; key and value maps are shared by all predecessors."""

    w_query: Tensor
    w_key: Tensor
    w_value: Tensor
    num_heads: int

    @classmethod
    def init(cls, rng, d: int, d_k: int, d_v: int, num_heads: int) -> "Arch2Integrator":
        if d_k % num_heads or d_v % num_heads:
            raise ConfigError(f"d_k={d_k}, d_v={d_v} must be divisible by H={num_heads}")
        return cls(w_query=uniform_param(rng, (d, d_k), d),
                   w_key=uniform_param(rng, (d, d_k), d),
                   w_value=uniform_param(rng, (d, d_v), d),
                   num_heads=num_heads)

    @property
    def d_k(self) -> int:
        return self.w_query.shape[1]

    @property
    def d_v(self) -> int:
        return self.w_value.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {"w_query": self.w_query, "w_key": self.w_key, "w_value": self.w_value}


def _split_heads(x: Tensor, heads: int) -> Tensor:
    return ad.reshape(x, x.shape[:-1] + (heads, x.shape[-1] // heads))


def arch1_candidates(h_tilde: Tensor, state: LayerState, integ: Arch1Integrator,
                     task: TaskEmbedding | None = None) -> list[Tensor]:
    d = h_tilde.shape[-1]
    cands = [h_tilde]
    if task is not None and task.present:
        if integ.task_proj is None:
            raise DimensionError("task embedding given but integrator has no task projection")
        tp = ad.matmul(ad.reshape(task.t, (1, task.t.shape[0])), integ.task_proj)
        cands.append(ad.broadcast_to(ad.reshape(tp, (d,)), h_tilde.shape))
    if len(integ.proj) != len(state):
        raise DimensionError(f"{len(integ.proj)} projections for {len(state)} predecessors")
    for w, h in zip(integ.proj, state):
        if h.shape != h_tilde.shape:
            raise DimensionError(f"predecessor shape {h.shape} differs from {h_tilde.shape}")
        cands.append(ad.matmul(h, w))
    for c in cands:
        if c.shape[-1] != d:
            raise DimensionError(f"candidate feature dim {c.shape[-1]} != {d}")
    return cands


def arch1_integrate(h_tilde: Tensor, state: LayerState, integ: Arch1Integrator | None,
                    task: TaskEmbedding | None = None, return_weights: bool = False):
    """Aggregate a_j from h~_j, the task vector and projected predecessors.

    Each head scores every candidate from that candidate's k-th feature
    slice, softmaxes over candidates, and forms a weighted sum of the full
    candidate vectors; head outputs are averaged.
    """
    has_task = task is not None and task.present
    if len(state) == 0 and not has_task:
        zero = ad.zeros(h_tilde.shape)
        return (zero, None) if return_weights else zero
    cands = arch1_candidates(h_tilde, state, integ, task)
    n, H = len(cands), integ.num_heads
    if integ.scorers.shape[:2] != (n, H):
        raise DimensionError(f"scorers {integ.scorers.shape} do not match {n} candidates x {H} heads")
    stacked = ad.stack(cands, axis=-2)                      # (..., n, d)
    per_head = _split_heads(stacked, H)                     # (..., n, H, d/H)
    w = ad.broadcast_to(integ.scorers, per_head.shape)
    scores = ad.sum(ad.mul(per_head, w), axis=-1)           # (..., n, H)
    alpha = ad.softmax(scores, axis=-2)
    mean_alpha = ad.mean(alpha, axis=-1)                    # (..., n)
    weights = ad.broadcast_to(ad.reshape(mean_alpha, mean_alpha.shape + (1,)), stacked.shape)
    a = ad.sum(ad.mul(weights, stacked), axis=-2)
    return (a, alpha) if return_weights else a


def arch2_integrate(h_tilde: Tensor, state: LayerState, integ: Arch2Integrator | None,
                    return_weights: bool = False):
    """Scaled dot-product attention from h~_j over predecessors; heads concatenated."""
    if len(state) == 0:
        zero = ad.zeros(h_tilde.shape[:-1] + ((integ.d_v if integ else h_tilde.shape[-1]),))
        return (zero, None) if return_weights else zero
    H = integ.num_heads
    dh = integ.d_k // H
    q = _split_heads(ad.matmul(h_tilde, integ.w_query), H)            # (..., H, dh)
    scores, values = [], []
    for h in state:
        if h.shape[:-1] != h_tilde.shape[:-1]:
            raise DimensionError(f"predecessor shape {h.shape} incompatible with {h_tilde.shape}")
        k = _split_heads(ad.matmul(h, integ.w_key), H)
        scores.append(ad.sum(ad.mul(q, k), axis=-1))                    # (..., H)
        values.append(_split_heads(ad.matmul(h, integ.w_value), H))     # (..., H, dv/H)
    e = ad.scale(ad.stack(scores, axis=-1), 1.0 / math.sqrt(dh))       # (..., H, n)
    alpha = ad.softmax(e, axis=-1)
    V = ad.stack(values, axis=-2)                                       # (..., H, n, dv/H)
    wts = ad.broadcast_to(ad.reshape(alpha, alpha.shape + (1,)), V.shape)
    heads = ad.sum(ad.mul(wts, V), axis=-2)                             # (..., H, dv/H)
    a = ad.reshape(heads, heads.shape[:-2] + (integ.d_v,))
    return (a, alpha) if return_weights else a


def layer_update(h_tilde: Tensor, a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """h_j = LayerNorm(ReLU(h~_j + a_j))."""
    if h_tilde.shape != a.shape:
        raise DimensionError(f"layer_update: h~ {h_tilde.shape} vs a {a.shape}")
    return ad.layer_norm(ad.relu(ad.add(h_tilde, a)), gain, bias, eps)


# ---------------------------------------------------------------------------
# base layers


@dataclass
class BaseParams:
    kind: str
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng, kind: str, d_in: int, d: int) -> "BaseParams":
        if kind == "lstm":
            fan = d_in + d
            return cls(kind, uniform_param(rng, (fan, 4 * d), fan), uniform_param(rng, (4 * d,), fan))
        if kind == "mlp":
            return cls(kind, uniform_param(rng, (d_in, d), d_in), uniform_param(rng, (d,), d_in))
        raise ConfigError(f"unknown base kind {kind!r}")

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def lstm_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Run an LSTM from zero state over (batch, time, d_in); returns (batch, time, d)."""
    b, T, _ = x.shape
    d = bias.shape[0] // 4
    h = ad.zeros((b, d))
    c = ad.zeros((b, d))
    outs = []
    for t in range(T):
        h, c = ad.lstm_cell_step(ad.take(x, 1, t), h, c, weight, bias)
        outs.append(h)
    return ad.stack(outs, axis=1)


def base_forward(x: Tensor, params: BaseParams) -> Tensor:
    """h~_j: LSTM hidden sequence, or affine + ReLU for the MLP base."""
    if params.kind == "lstm":
        if x.ndim != 3:
            raise DimensionError(f"lstm base expects (batch, time, d_in), got {x.shape}")
        return lstm_forward(x, params.weight, params.bias)
    if params.kind == "mlp":
        return ad.relu(ad.add(ad.matmul(x, params.weight), params.bias))
    raise ConfigError(f"unknown base kind {params.kind!r}")
