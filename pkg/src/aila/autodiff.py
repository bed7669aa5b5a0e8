"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation appends a node to the calling thread's
active :class:`Tape` when at least one input requires a gradient and
recording is enabled.  :func:`backward` walks that tape once in reverse
and then clears it.

Broadcasting is deliberately narrow: ``add``/``sub`` accept a right operand
whose shape equals the trailing shape of the left one (bias add over
leading axes).  Anything else must go through :func:`broadcast_to`.
"""

from __future__ import annotations

import builtins
import contextlib
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(RuntimeError):
    """Raised when an API precondition is violated."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._leaf = True
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        return self.data

    @property
    def is_leaf(self) -> bool:
        return self._leaf

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# tape


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    out: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


class _ThreadState(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.enabled = True


_state = _ThreadState()
_DEBUG = os.environ.get("AILA_DEBUG", "") not in ("", "0")


def set_debug(flag: bool) -> None:
    """Toggle the post-op finiteness check."""
    global _DEBUG
    _DEBUG = bool(flag)


def current_tape() -> Tape:
    return _state.tape


@contextlib.contextmanager
def recording(tape: Tape | None = None) -> Iterator[Tape]:
    """Record into a fresh (or given) tape for the duration of the block."""
    prev_tape, prev_enabled = _state.tape, _state.enabled
    _state.tape = tape if tape is not None else Tape()
    _state.enabled = True
    try:
        yield _state.tape
    finally:
        _state.tape, _state.enabled = prev_tape, prev_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _make(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _state.enabled and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    out._leaf = not needs
    if needs:
        _state.tape.record(Node(op, inputs, out, backward))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every grad-requiring tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; the tape is cleared afterwards.
    """
    if loss.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    if not tape.nodes:
        raise ContractError("backward called on an empty tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        node.out.grad = g
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if inp._leaf:
                leaves[key] = inp
    if loss._leaf and loss.requires_grad:
        leaves[id(loss)] = loss
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    tape.clear()


# ---------------------------------------------------------------------------
# elementwise


def _bias_compatible(a_shape, b_shape) -> bool:
    return len(b_shape) <= len(a_shape) and tuple(a_shape[len(a_shape) - len(b_shape):]) == tuple(b_shape)


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead else g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_binary(op, a: Tensor, b: Tensor, allow_bias: bool):
    if a.shape == b.shape:
        return
    if allow_bias and _bias_compatible(a.shape, b.shape):
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary("add", a, b, allow_bias=True)
    bshape = b.shape
    return _make("add", a.data + b.data, (a, b), lambda g: (g, _reduce_to(g, bshape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary("sub", a, b, allow_bias=True)
    bshape = b.shape
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -_reduce_to(g, bshape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary("mul", a, b, allow_bias=False)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("scale", x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _make("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _make("exp", e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make("log", np.log(xd), (x,), lambda g: (g / xd,))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., k) and a 2-D ``b`` of shape (k, n)."""
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def _bw(g):
        ga = g @ bd.T
        a2 = ad.reshape(-1, ad.shape[-1])
        gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make("matmul", ad @ bd, (a, b), _bw)


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return _make("sum", np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = _norm_axis(axis, x.ndim)
    return _make("sum", x.data.sum(axis=ax), (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.size if axis is None else x.shape[_norm_axis(axis, x.ndim)]
    return scale(sum(x, axis), 1.0 / n)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    if x.shape[ax] < 1:
        raise DimensionError("softmax over an empty axis")
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=ax, keepdims=True)

    def _bw(g):
        return (s * (g - (g * s).sum(axis=ax, keepdims=True)),)

    return _make("softmax", s, (x,), _bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply ``gain``/``bias``."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs feature dim {d}")
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def _bw(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make("layer_norm", xhat * gd + bias.data, (x, gain, bias), _bw)


# ---------------------------------------------------------------------------
# shape manipulation


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise DimensionError("concat of an empty list")
    ndim = tensors[0].ndim
    ax = _norm_axis(axis, ndim)
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def _bw(g):
        idx = [builtins.slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = builtins.slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return _make("concat", np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), _bw)


def stack(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Stack equal-shaped tensors along a new axis."""
    if not tensors:
        raise DimensionError("stack of an empty list")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise DimensionError(f"stack: shapes differ {[t.shape for t in tensors]}")
    ax = axis % (len(shape) + 1)
    n = len(tensors)

    def _bw(g):
        return [np.take(g, i, axis=ax) for i in range(n)]

    return _make("stack", np.stack([t.data for t in tensors], axis=ax), tuple(tensors), _bw)


def slice(x: Tensor, axis: int, start: int, stop: int) -> Tensor:  # noqa: A001
    ax = _norm_axis(axis, x.ndim)
    n = x.shape[ax]
    if not 0 <= start < stop <= n:
        raise DimensionError(f"slice [{start}:{stop}] out of range for extent {n}")
    idx = [builtins.slice(None)] * x.ndim
    idx[ax] = builtins.slice(start, stop)
    idx = tuple(idx)
    shape = x.shape

    def _bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[idx] = g
        return (full,)

    return _make("slice", x.data[idx].copy(), (x,), _bw)


def take(x: Tensor, axis: int, index: int) -> Tensor:
    """Select one index along ``axis`` and drop that axis."""
    ax = _norm_axis(axis, x.ndim)
    if not -x.shape[ax] <= index < x.shape[ax]:
        raise DimensionError(f"index {index} out of range for extent {x.shape[ax]}")
    index = index % x.shape[ax]
    shape = x.shape

    def _bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        idx = [builtins.slice(None)] * len(shape)
        idx[ax] = index
        full[tuple(idx)] = g
        return (full,)

    return _make("take", np.take(x.data, index, axis=ax), (x,), _bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _make("reshape", out, (x,), lambda g: (g.reshape(old),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style broadcast; backward sums over the expanded axes."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as exc:
        raise DimensionError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from exc
    old = x.shape
    return _make("broadcast_to", out, (x,), lambda g: (_reduce_to(g, old),))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (vocab x d) for integer ``ids`` of any shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"embedding ids outside [0, {table.shape[0]})")
    ids = ids.astype(np.int64)
    vocab, d = table.shape

    def _bw(g):
        gt = np.zeros((vocab, d), dtype=DTYPE)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, d))
        return (gt,)

    return _make("embedding", table.data[ids], (table,), _bw)


# ---------------------------------------------------------------------------
# recurrent cell


def lstm_cell_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
                   weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step as a single tape op.

    ``weight`` is (d_in + d_h) x 4*d_h acting on ``[x_t, h_prev]``; gate
    blocks are ordered input, forget, output, candidate.
    """
    b, d_in = x_t.shape
    d_h = h_prev.shape[-1]
    if h_prev.shape != (b, d_h) or c_prev.shape != (b, d_h):
        raise DimensionError(f"lstm: state shapes {h_prev.shape}/{c_prev.shape} vs batch {b}")
    if weight.shape != (d_in + d_h, 4 * d_h) or bias.shape != (4 * d_h,):
        raise DimensionError(
            f"lstm: weight {weight.shape}/bias {bias.shape} incompatible with d_in={d_in}, d_h={d_h}")
    xh = np.concatenate([x_t.data, h_prev.data], axis=1)
    z = xh @ weight.data + bias.data
    gates = _sigmoid(z[:, :3 * d_h])
    i, f, o = gates[:, :d_h], gates[:, d_h:2 * d_h], gates[:, 2 * d_h:]
    g = np.tanh(z[:, 3 * d_h:])
    c = f * c_prev.data + i * g
    tc = np.tanh(c)
    h = o * tc
    wd, cp = weight.data, c_prev.data

    # h and c are produced by one node: the c-node carries the full
    # backward, the h-node forwards its gradient onto a shared buffer.
    shared: dict[str, np.ndarray] = {}

    def _bw_c(gc):
        gh = shared.pop("gh", None)
        gc_total = gc.copy()
        go = None
        if gh is not None:
            go = gh * tc
            gc_total += gh * o * (1.0 - tc * tc)
        gi = gc_total * g
        gf = gc_total * cp
        gg = gc_total * i
        dz = np.empty_like(z)
        dz[:, :d_h] = gi * i * (1.0 - i)
        dz[:, d_h:2 * d_h] = gf * f * (1.0 - f)
        dz[:, 2 * d_h:3 * d_h] = 0.0 if go is None else go * o * (1.0 - o)
        dz[:, 3 * d_h:] = gg * (1.0 - g * g)
        dxh = dz @ wd.T
        return dxh[:, :d_in], dxh[:, d_in:], gc_total * f, xh.T @ dz, dz.sum(axis=0)

    c_out = _make("lstm_cell", c, (x_t, h_prev, c_prev, weight, bias), _bw_c)

    def _bw_h(gh):
        shared["gh"] = gh
        return (np.zeros_like(c),)

    h_out = _make("lstm_cell_h", h, (c_out,), _bw_h)
    return h_out, c_out
