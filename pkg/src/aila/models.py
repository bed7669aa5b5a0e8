"""N-layer AILA networks and fixed-skip baselines behind one interface."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import BASELINES, ConfigError, ModelConfig
from .layers import (Arch1Integrator, Arch2Integrator, BaseParams, LayerState, TaskEmbedding,
                     arch1_integrate, arch2_integrate, base_forward, layer_update, uniform_param)


@dataclass
class Layer:
    base: BaseParams
    gain: Tensor
    bias: Tensor
    integrator: Arch1Integrator | Arch2Integrator | None = None
    dense_proj: Tensor | None = None


@dataclass
class Model:
    config: ModelConfig
    layers: list[Layer]
    head_weight: Tensor
    head_bias: Tensor
    embedding: Tensor | None = None
    task: TaskEmbedding = field(default_factory=TaskEmbedding)
    params: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if not self.params:
            self.params = self._registry()

    def _registry(self) -> dict[str, Tensor]:
        reg: dict[str, Tensor] = {}
        if self.embedding is not None:
            reg["embedding"] = self.embedding
        if self.task.present:
            reg["task"] = self.task.t
        for j, layer in enumerate(self.layers, start=1):
            if layer.dense_proj is not None:
                reg[f"layer{j}.dense_proj"] = layer.dense_proj
            for k, v in layer.base.parameters().items():
                reg[f"layer{j}.base.{k}"] = v
            if layer.integrator is not None:
                for k, v in layer.integrator.parameters().items():
                    reg[f"layer{j}.integrator.{k}"] = v
            reg[f"layer{j}.norm.gain"] = layer.gain
            reg[f"layer{j}.norm.bias"] = layer.bias
        reg["head.weight"] = self.head_weight
        reg["head.bias"] = self.head_bias
        seen = set()
        for name, t in reg.items():
            if id(t) in seen:
                raise RuntimeError(f"parameter {name} registered twice")
            seen.add(id(t))
            t.name = name
        return reg

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            v.data[...] = arrays[k]


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    """Initialise every parameter from ``seed``; same seed, same bits."""
    config.validate()
    rng = np.random.default_rng(seed)
    d = config.hidden
    embedding = None
    d_in = config.input_dim
    if config.vocab_size is not None:
        e = config.embed_dim or d
        embedding = uniform_param(rng, (config.vocab_size, e), e)
        d_in = e
    task = TaskEmbedding()
    if config.task_dim:
        task = TaskEmbedding(uniform_param(rng, (config.task_dim,), config.task_dim))
    layers = []
    for j in range(1, config.num_layers + 1):
        dense_proj = None
        layer_in = d_in if j == 1 else d
        if config.variant == "dense_concat" and j > 1:
            dense_proj = uniform_param(rng, ((j - 1) * d, d), (j - 1) * d)
        base = BaseParams.init(rng, config.base_kind, layer_in, d)
        integ = None
        if config.variant == "aila1" and (j > 1 or config.task_dim):
            integ = Arch1Integrator.init(rng, d, j - 1, config.heads, config.task_dim)
        elif config.variant == "aila2" and j > 1:
            integ = Arch2Integrator.init(rng, d, config.d_k, config.d_v, config.heads)
        layers.append(Layer(base=base, gain=Tensor(np.ones(d), requires_grad=True),
                            bias=Tensor(np.zeros(d), requires_grad=True),
                            integrator=integ, dense_proj=dense_proj))
    head_w = uniform_param(rng, (d, config.output_dim), d)
    head_b = uniform_param(rng, (config.output_dim,), d)
    return Model(config=config, layers=layers, head_weight=head_w, head_bias=head_b,
                 embedding=embedding, task=task)


def build_baseline(variant: str, config: ModelConfig, seed: int = 0) -> Model:
    if variant not in BASELINES:
        raise ConfigError(f"{variant!r} is not a baseline; expected one of {BASELINES}")
    return build_model(dataclasses.replace(config, variant=variant, task_dim=None), seed)


def param_count(model: Model) -> int:
    return int(sum(p.size for p in model.params.values()))


def _check_knockout(knockout, n: int) -> frozenset[int]:
    ko = frozenset(int(j) for j in (knockout or ()))
    bad = [j for j in ko if not 1 <= j <= n]
    if bad:
        raise ConfigError(f"knockout layers {sorted(bad)} outside 1..{n}")
    return ko


def embed_inputs(model: Model, x) -> Tensor:
    if model.embedding is not None:
        ids = x.data if isinstance(x, Tensor) else np.asarray(x)
        return ad.embedding(model.embedding, ids.astype(np.int64))
    return x if isinstance(x, Tensor) else Tensor(x)


def run_layers(model: Model, x, knockout=None, weights: list | None = None) -> LayerState:
    """Compute h_1..h_N; knocked-out layers (1-based) are zeroed after computing.

    If ``weights`` is a list, each layer's attention weights (or None) are appended to it.
    """
    ko = _check_knockout(knockout, model.num_layers)
    variant = model.config.variant
    state = LayerState()
    inp = embed_inputs(model, x)
    for j, layer in enumerate(model.layers, start=1):
        if layer.dense_proj is not None:
            inp = ad.matmul(ad.concat(state.outputs, axis=-1), layer.dense_proj)
        h_tilde = base_forward(inp, layer.base)
        alpha = None
        if variant == "aila1":
            a, alpha = arch1_integrate(h_tilde, state, layer.integrator, model.task, return_weights=True)
        elif variant == "aila2":
            a, alpha = arch2_integrate(h_tilde, state, layer.integrator, return_weights=True)
        elif variant == "residual_sum" and j > 1:
            a = state.outputs[-1]
        else:
            a = None
        h = (ad.layer_norm(ad.relu(h_tilde), layer.gain, layer.bias) if a is None
             else layer_update(h_tilde, a, layer.gain, layer.bias))
        if weights is not None:
            weights.append(None if alpha is None else alpha.data)
        if j in ko:
            h = ad.zeros(h.shape)
        state.append(h)
        inp = h
    return state


def readout(model: Model, h_last: Tensor) -> Tensor:
    feat = ad.take(h_last, 1, -1) if h_last.ndim == 3 else h_last
    return ad.add(ad.matmul(feat, model.head_weight), model.head_bias)


def forward(model: Model, x, knockout=None) -> Tensor:
    """Prediction of shape (batch, output_dim)."""
    state = run_layers(model, x, knockout)
    return readout(model, state.outputs[-1])


def checksum(model: Model) -> str:
    h = hashlib.sha256()
    for name, p in model.params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# checkpoint container
#
# layout: MAGIC | u32 version | u64 header length | UTF-8 JSON header | payloads
# header: {"config": {...}, "extra": {...}, "tensors": [{name, shape, offset, nbytes}]}
# payloads are raw little-endian float64, row-major, in header order.

MAGIC = b"AILACKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable checkpoint or one that does not match the target model."""


def save_checkpoint(path: str | Path, model: Model, extra: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, p in model.params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": dataclasses.asdict(model.config), "extra": extra or {},
                         "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an AILA checkpoint")
    version, hlen = struct.unpack_from("<IQ", buf, len(MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + struct.calcsize("<IQ")
    header = json.loads(buf[start:start + hlen].decode())
    base = start + hlen
    arrays = {}
    for e in header["tensors"]:
        lo = base + e["offset"]
        arr = np.frombuffer(buf[lo:lo + e["nbytes"]], dtype="<f8").astype(np.float64)
        arrays[e["name"]] = arr.reshape(e["shape"])
    return header, arrays


def load_into(model: Model, arrays: dict[str, np.ndarray]) -> None:
    """Copy ``arrays`` into ``model``; any name/shape disagreement is reported in full."""
    diffs = []
    for name, p in model.params.items():
        if name not in arrays:
            diffs.append(f"missing {name} {p.shape}")
        elif arrays[name].shape != p.shape:
            diffs.append(f"{name}: checkpoint {arrays[name].shape} vs model {p.shape}")
    diffs += [f"unexpected {k} {v.shape}" for k, v in arrays.items() if k not in model.params]
    if diffs:
        raise CheckpointError("checkpoint does not match model:\n  " + "\n  ".join(diffs))
    model.load_arrays(arrays)


def load_checkpoint(path: str | Path) -> tuple[Model, dict]:
    header, arrays = read_checkpoint(path)
    model = build_model(ModelConfig(**header["config"]), seed=0)
    load_into(model, arrays)
    return model, header
