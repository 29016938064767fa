"""Dense 2-D tensor engine with reverse-mode automatic differentiation.

Everything is float64 and strictly two-dimensional. Operations executed
while a :class:`Tape` is active are recorded in execution order, so the
tape is topologically sorted by construction; ``backward`` replays it in
reverse exactly once. Gradients accumulate additively across fan-out and
across successive backward passes until :func:`zero_grad` resets them.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DegenerateInputError, DimensionError

LOG_CLAMP = 1e-12
_GELU_C = math.sqrt(2.0 / math.pi)

_tls = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_tls, "tapes", None)
    if stack is None:
        stack = []
        _tls.tapes = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense 2-D float64 matrix, optionally tracked for gradients."""

    __slots__ = ("values", "requires_grad", "grad", "_tape")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.values.shape}")
        return float(self.values[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.values.shape}{flag})"


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager around a forward pass; every op executed
    inside records itself. ``backward`` may be called once per tape.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._used = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise ContractError("tape context exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> None:
        self._entries.append((out, inputs, backward_fn))
        out._tape = self

    def reset(self) -> None:
        self._entries.clear()
        self._used = False

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor with
        ``requires_grad`` reachable from ``loss``."""
        if loss.values.shape != (1, 1):
            raise ContractError(f"backward needs a 1x1 loss tensor, got {loss.values.shape}")
        if self._used:
            raise ContractError("backward was already called on this tape; use a fresh tape or reset()")
        self._used = True

        flowing: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        if loss.requires_grad:
            loss.grad = np.ones((1, 1)) if loss.grad is None else loss.grad + 1.0
        for out, inputs, backward_fn in reversed(self._entries):
            g = flowing.pop(id(out), None)
            if g is None:
                continue
            if out.requires_grad and out is not loss:
                out.grad = g if out.grad is None else out.grad + g
            for t, ig in zip(inputs, backward_fn(g)):
                if ig is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in flowing:
                    flowing[key] = flowing[key] + ig
                else:
                    flowing[key] = ig
        # Whatever is left flowing belongs to graph sources (parameters, inputs).
        by_id = {id(t): t for _, inputs, _ in self._entries for t in inputs}
        for key, g in flowing.items():
            t = by_id.get(key)
            if t is not None and t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """Run the backward pass of the tape that produced ``loss``."""
    if loss._tape is None:
        raise ContractError("loss was not recorded on any tape")
    loss._tape.backward(loss)


def zero_grad(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, backward_fn)
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.values.shape != b.values.shape:
        raise DimensionError(f"{op}: shapes {a.values.shape} and {b.values.shape} differ")


# ---------------------------------------------------------------------------
# arithmetic


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: inner dimensions disagree, {a.values.shape} @ {b.values.shape}")
    out = Tensor(a.values @ b.values)
    av, bv = a.values, b.values

    def bwd(g):
        return g @ bv.T, av.T @ g

    return _record(out, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.values.T.copy())

    def bwd(g):
        return (g.T,)

    return _record(out, (a,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor(a.values + b.values)

    def bwd(g):
        return g, g

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = Tensor(a.values * b.values)
    av, bv = a.values, b.values

    def bwd(g):
        return g * bv, g * av

    return _record(out, (a, b), bwd)


def scale_const(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.values * c)

    def bwd(g):
        return (g * c,)

    return _record(out, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor([[a.values.sum()]])
    shape = a.values.shape

    def bwd(g):
        return (np.full(shape, g[0, 0]),)

    return _record(out, (a,), bwd)


def log_clamped(a: Tensor, clamp: float = LOG_CLAMP) -> Tensor:
    """log(max(x, clamp)); the clamped region has zero derivative."""
    clamped = np.maximum(a.values, clamp)
    out = Tensor(np.log(clamped))
    live = a.values > clamp

    def bwd(g):
        return (np.where(live, g / clamped, 0.0),)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# activations


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.values, 0.0))
    pos = a.values > 0.0

    def bwd(g):
        return (g * pos,)

    return _record(out, (a,), bwd)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out = Tensor(np.where(a.values > 0.0, a.values, slope * a.values))
    pos = a.values > 0.0

    def bwd(g):
        return (g * np.where(pos, 1.0, slope),)

    return _record(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_values(a.values)
    out = Tensor(s)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return _record(out, (a,), bwd)


def swish(a: Tensor) -> Tensor:
    """x * sigmoid(x) (SiLU)."""
    s = _sigmoid_values(a.values)
    out = Tensor(a.values * s)
    av = a.values

    def bwd(g):
        return (g * (s + av * s * (1.0 - s)),)

    return _record(out, (a,), bwd)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    x = a.values
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))

    def bwd(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * d,)

    return _record(out, (a,), bwd)


_ELEMENTWISE_UNARY = {"relu": relu, "sigmoid": sigmoid, "swish": swish, "gelu": gelu}
_ELEMENTWISE_BINARY = {"add": add, "mul": mul}


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Apply a named elementwise op: add/mul (binary), relu/sigmoid/swish/gelu (unary)."""
    if op in _ELEMENTWISE_BINARY:
        if b is None:
            raise ContractError(f"elementwise {op!r} needs two operands")
        return _ELEMENTWISE_BINARY[op](a, b)
    if op in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ContractError(f"elementwise {op!r} takes one operand")
        return _ELEMENTWISE_UNARY[op](a)
    raise ConfigError(f"unknown elementwise op {op!r}")


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# normalization / softmax


def layer_norm(h: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine.

    ``gain`` and ``bias`` are 1 x d row vectors broadcast over rows.
    """
    n, d = h.values.shape
    if gain.values.shape != (1, d) or bias.values.shape != (1, d):
        raise DimensionError(
            f"layer_norm: affine shapes {gain.values.shape}/{bias.values.shape} do not match width {d}"
        )
    if eps <= 0.0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    mu = h.values.mean(axis=1, keepdims=True)
    centered = h.values - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gain.values + bias.values)
    gv = gain.values

    def bwd(g):
        dxhat = g * gv
        dgain = (g * xhat).sum(axis=0, keepdims=True)
        dbias = g.sum(axis=0, keepdims=True)
        # Standard layer-norm backward through mean and variance.
        dh = (inv / d) * (
            d * dxhat
            - dxhat.sum(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )
        return dh, dgain, dbias

    return _record(out, (h, gain, bias), bwd)


def row_softmax(scores: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax, stabilized by row-max subtraction.

    ``mask`` (boolean, True = keep) zeroes masked entries exactly and
    renormalizes over the remainder.
    """
    x = scores.values
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"row_softmax: mask shape {mask.shape} vs scores {x.shape}")
        if not mask.any(axis=1).all():
            bad = int(np.flatnonzero(~mask.any(axis=1))[0])
            raise DegenerateInputError(f"row_softmax: row {bad} is fully masked")
        shifted = np.where(mask, x, -np.inf)
    else:
        shifted = x
    m = shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p)

    def bwd(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return _record(out, (scores,), bwd)


# ---------------------------------------------------------------------------
# sparse / segmented ops (CSR graphs and edge-level attention)


def spmm(g, h: Tensor) -> Tensor:
    """Sparse @ dense: out[i] = sum_{j in N(i)} w_ij * h[j].

    ``g`` is a CsrGraph; absent edge weights mean weight 1. The backward
    pass routes gradients through the transposed edge structure.
    """
    if g.n != h.rows:
        raise DimensionError(f"spmm: graph has {g.n} nodes but h has {h.rows} rows")
    w = g.edge_weights if g.edge_weights is not None else None
    if w is not None and not np.isfinite(w).all():
        raise ContractError("spmm: graph has nonfinite edge weights")
    cols = g.col_indices
    seg = g.row_ids()
    contrib = h.values[cols] if w is None else h.values[cols] * w[:, None]
    acc = np.zeros_like(h.values)
    np.add.at(acc, seg, contrib)
    out = Tensor(acc)

    def bwd(grad):
        # dH = W^T g: each stored edge (i, j) routes grad[i] into row j.
        gathered = grad[seg] if w is None else grad[seg] * w[:, None]
        dh = np.zeros_like(grad)
        np.add.at(dh, cols, gathered)
        return (dh,)

    return _record(out, (h,), bwd)


def gather_rows(t: Tensor, idx: np.ndarray) -> Tensor:
    out = Tensor(t.values[idx])
    n = t.rows

    def bwd(g):
        dt = np.zeros((n, g.shape[1]))
        np.add.at(dt, idx, g)
        return (dt,)

    return _record(out, (t,), bwd)


def segment_sum(t: Tensor, offsets: np.ndarray) -> Tensor:
    """Sum contiguous row segments: out[i] = sum of rows offsets[i]:offsets[i+1]."""
    n = len(offsets) - 1
    seg_ids = np.repeat(np.arange(n), np.diff(offsets))
    if len(seg_ids) != t.rows:
        raise DimensionError(f"segment_sum: offsets cover {len(seg_ids)} rows, tensor has {t.rows}")
    acc = np.zeros((n, t.cols))
    np.add.at(acc, seg_ids, t.values)
    out = Tensor(acc)

    def bwd(g):
        return (g[seg_ids],)

    return _record(out, (t,), bwd)


def segment_softmax(scores: Tensor, offsets: np.ndarray) -> Tensor:
    """Softmax within contiguous segments of an m x 1 score column."""
    if scores.cols != 1:
        raise DimensionError(f"segment_softmax: expected m x 1 scores, got {scores.values.shape}")
    n = len(offsets) - 1
    seg_ids = np.repeat(np.arange(n), np.diff(offsets))
    if len(seg_ids) != scores.rows:
        raise DimensionError(f"segment_softmax: offsets cover {len(seg_ids)} rows, scores have {scores.rows}")
    s = scores.values[:, 0]
    seg_max = np.full(n, -np.inf)
    np.maximum.at(seg_max, seg_ids, s)
    e = np.exp(s - seg_max[seg_ids])
    denom = np.zeros(n)
    np.add.at(denom, seg_ids, e)
    p = e / denom[seg_ids]
    out = Tensor(p[:, None])

    def bwd(g):
        gp = g[:, 0] * p
        dot = np.zeros(n)
        np.add.at(dot, seg_ids, gp)
        return ((p * (g[:, 0] - dot[seg_ids]))[:, None],)

    return _record(out, (scores,), bwd)


def scale_rows(t: Tensor, s: Tensor) -> Tensor:
    """Multiply each row of t (m x d) by the matching scalar in s (m x 1)."""
    if s.values.shape != (t.rows, 1):
        raise DimensionError(f"scale_rows: scale shape {s.values.shape} vs tensor {t.values.shape}")
    out = Tensor(t.values * s.values)
    tv, sv = t.values, s.values

    def bwd(g):
        return g * sv, (g * tv).sum(axis=1, keepdims=True)

    return _record(out, (t, s), bwd)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise DimensionError(f"concat_cols: row counts differ, {p.rows} vs {rows}")
    out = Tensor(np.hstack([p.values for p in parts]))
    widths = [p.cols for p in parts]

    def bwd(g):
        return tuple(np.hsplit(g, np.cumsum(widths)[:-1]))

    return _record(out, tuple(parts), bwd)


# ---------------------------------------------------------------------------
# mixing / regularization


def logit_mix(logit: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """sigmoid(logit) * a + (1 - sigmoid(logit)) * b with a 1x1 logit.

    Keeps the mix a convex combination for any real logit value.
    """
    if logit.values.shape != (1, 1):
        raise DimensionError(f"logit_mix: logit must be 1x1, got {logit.values.shape}")
    _check_same_shape(a, b, "logit_mix")
    s = float(_sigmoid_values(logit.values)[0, 0])
    out = Tensor(s * a.values + (1.0 - s) * b.values)
    av, bv = a.values, b.values

    def bwd(g):
        dl = np.array([[(g * (av - bv)).sum() * s * (1.0 - s)]])
        return dl, g * s, g * (1.0 - s)

    return _record(out, (logit, a, b), bwd)


def dropout(h: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate); eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return h
    keep = rng.random(h.values.shape) >= rate
    scale = keep / (1.0 - rate)
    out = Tensor(h.values * scale)

    def bwd(g):
        return (g * scale,)

    return _record(out, (h,), bwd)


# ---------------------------------------------------------------------------
# initializers


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    """Uniform Glorot/Xavier initialization, marked as a parameter."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def zeros(rows: int, cols: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=requires_grad)


def ones(rows: int, cols: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones((rows, cols)), requires_grad=requires_grad)
