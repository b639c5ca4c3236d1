"""Small dense tensor library with reverse-mode autodiff.

Storage is a numpy array (row-major).  Every op builds a graph node holding
its parents and a closure that maps the output gradient to parent gradients;
``backward`` walks the graph in reverse topological order.

Only what the selector and summarizer need is here: broadcasting arithmetic,
matmul, a handful of activations, reductions, indexing, an LSTM step fused
into a single node, inverted dropout, cross entropy and Adam.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


PROB_FLOOR = 1e-10

_default_dtype = np.float64
_node_ids = itertools.count()
_local = threading.local()


def set_precision(mode: str) -> None:
    """Switch the dtype of newly created tensors (``"fp64"`` or ``"fp32"``)."""
    global _default_dtype
    if mode == "fp64":
        _default_dtype = np.float64
    elif mode == "fp32":
        _default_dtype = np.float32
    else:
        raise ContractError(f"unknown precision mode: {mode!r}")


def get_dtype():
    return _default_dtype


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_default_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(out: np.ndarray, op: str) -> None:
    if not np.isfinite(out).all():
        raise NumericalError(f"non-finite values produced by {op}")


def _make(out: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    _check_finite(out, op)
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.node_id = next(_node_ids)
    t.name = None
    track = grad_enabled() and any(p.requires_grad for p in parents)
    t.requires_grad = track
    if track:
        t._parents = tuple(parents)
        t._backward = backward_fn
    else:
        t._parents = ()
        t._backward = None
    return t


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf that requires grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not part of a recorded graph")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.node_id not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument never overflows; the clip keeps the
    # output strictly inside (0, 1) once it saturates
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    fi = np.finfo(s.dtype)
    return np.clip(s, fi.tiny, 1.0 - fi.epsneg)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = _stable_sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    t = np.tanh(x.data)
    return _make(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; values below ``floor`` are clamped (and get zero gradient)."""
    x = _as_tensor(x)
    clipped = np.maximum(x.data, floor) if floor > 0 else x.data
    out = np.log(clipped)
    live = x.data >= floor if floor > 0 else True
    return _make(out, (x,), lambda g: (np.where(live, g / clipped, 0.0),), "log")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _make(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------- reductions / shape


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor) -> Tensor:
    return mul(sum(x), 1.0 / x.data.size)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def expand_dims(x: Tensor, axis: int) -> Tensor:
    return _make(np.expand_dims(x.data, axis), (x,), lambda g: (g.reshape(x.shape),), "expand_dims")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def bw(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _make(out, xs, bw, "concat")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out = np.stack([x.data for x in xs], axis=axis)
    return _make(
        out, xs, lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(xs))), "stack"
    )


def index(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(k, (slice, int, np.integer)) for k in parts)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out), (x,), bw, "index")


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatters back into the used rows."""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _make(out, (table,), bw, "embedding")


def gather_last(x: Tensor, ids) -> Tensor:
    """``out[r] = x[r, ids[r]]`` for a 2-D ``x``."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.arange(x.shape[0])
    out = x.data[rows, ids]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, ids), g)
        return (full,)

    return _make(out, (x,), bw, "gather_last")


def scatter_add(src: Tensor, ids, size: int) -> Tensor:
    """Row-wise scatter: ``out[b, ids[b, i]] += src[b, i]`` into width ``size``."""
    ids = np.asarray(ids, dtype=np.int64)
    if src.shape != ids.shape or src.ndim != 2:
        raise DimensionError(f"scatter_add shape mismatch: {src.shape} vs ids {ids.shape}")
    rows = np.repeat(np.arange(src.shape[0])[:, None], src.shape[1], axis=1)
    out = np.zeros((src.shape[0], size), dtype=src.data.dtype)
    np.add.at(out, (rows, ids), src.data)
    return _make(out, (src,), lambda g: (g[rows, ids],), "scatter_add")


def pad_last(x: Tensor, extra: int) -> Tensor:
    """Append ``extra`` zero columns along the last axis."""
    if extra == 0:
        return x
    width = x.shape[-1]
    pad = [(0, 0)] * (x.ndim - 1) + [(0, extra)]
    return _make(np.pad(x.data, pad), (x,), lambda g: (g[..., :width],), "pad_last")


# ---------------------------------------------------------------- distributions


def softmax(v: Tensor, axis: int = -1) -> Tensor:
    v = _as_tensor(v)
    if v.data.size == 0 or v.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis, shape {v.shape}")
    z = v.data - v.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (v,), bw, "softmax")


def cross_entropy(probs: Tensor, target_index) -> Tensor:
    """``-log(probs[target])`` with the probability clamped at ``PROB_FLOOR``.

    ``probs`` may be a single distribution (1-D, scalar target) or a batch of
    rows (2-D, one target per row; returns the per-row losses).
    """
    if probs.ndim == 1:
        n = probs.shape[0]
        if not 0 <= int(target_index) < n:
            raise IndexError(f"target index {target_index} out of range for {n} classes")
        picked = index(probs, int(target_index))
    else:
        ids = np.asarray(target_index, dtype=np.int64)
        if ids.min(initial=0) < 0 or ids.max(initial=0) >= probs.shape[1]:
            raise IndexError(f"target index out of range for {probs.shape[1]} classes")
        picked = gather_last(probs, ids)
    return neg(log(picked, floor=PROB_FLOOR))


# ---------------------------------------------------------------- dropout


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------- LSTM


@dataclass
class LstmParams:
    """LSTM weights with the four gates packed column-wise as [input, forget, candidate, output].

    ``w_x`` maps input to gates, ``w_h`` hidden to gates; ``bias`` is shared.
    """

    w_x: Tensor
    w_h: Tensor
    bias: Tensor

    def __post_init__(self):
        h4 = self.w_h.shape[1]
        if self.hidden_size <= 0 or h4 != 4 * self.w_h.shape[0]:
            raise DimensionError(f"w_h shape {self.w_h.shape} is not H x 4H")
        if self.w_x.shape[1] != h4 or self.bias.shape != (h4,):
            raise DimensionError(
                f"inconsistent LSTM shapes: w_x {self.w_x.shape}, w_h {self.w_h.shape}, "
                f"bias {self.bias.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_x.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"w_x": self.w_x, "w_h": self.w_h, "bias": self.bias}

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator, scale: float = 0.1):
        def p(*shape):
            return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)

        return cls(p(input_size, 4 * hidden_size), p(hidden_size, 4 * hidden_size), p(4 * hidden_size))


def lstm_step(
    x_t: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    p: LstmParams,
    mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """One LSTM recurrence step for a batch (rows are independent sequences).

    ``mask`` (shape ``(B,)``, 0/1) freezes the state of rows whose sequence
    has no token at this step.  The step is a single graph node with a
    hand-written backward; ``h`` and ``c`` are views sliced out of it.
    """
    squeeze = x_t.ndim == 1
    if squeeze:
        x_t, h_prev, c_prev = (reshape(t, (1, -1)) for t in (x_t, h_prev, c_prev))
    H = p.hidden_size
    if x_t.shape[1] != p.input_size or h_prev.shape[1] != H or c_prev.shape[1] != H:
        raise DimensionError(
            f"lstm_step shapes x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} "
            f"do not fit input {p.input_size}, hidden {H}"
        )
    x, h, c = x_t.data, h_prev.data, c_prev.data
    z = x @ p.w_x.data + h @ p.w_h.data + p.bias.data
    i = _stable_sigmoid(z[:, :H])
    f = _stable_sigmoid(z[:, H : 2 * H])
    gc = np.tanh(z[:, 2 * H : 3 * H])
    o = _stable_sigmoid(z[:, 3 * H :])
    c_new = f * c + i * gc
    tc = np.tanh(c_new)
    h_new = o * tc
    if mask is None:
        m = None
        h_out, c_out = h_new, c_new
    else:
        m = np.asarray(mask, dtype=x.dtype).reshape(-1, 1)
        h_out = m * h_new + (1.0 - m) * h
        c_out = m * c_new + (1.0 - m) * c

    def bw(g):
        dh, dc = g[:, :H], g[:, H:]
        if m is None:
            dh_new, dc_in = dh, dc
        else:
            dh_new, dc_in = m * dh, m * dc
        dc_new = dc_in + dh_new * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc_new * gc * i * (1.0 - i),
                dc_new * c * f * (1.0 - f),
                dc_new * i * (1.0 - gc * gc),
                dh_new * tc * o * (1.0 - o),
            ],
            axis=1,
        )
        dx = dz @ p.w_x.data.T
        dh_prev = dz @ p.w_h.data.T
        dc_prev = dc_new * f
        if m is not None:
            dh_prev = dh_prev + (1.0 - m) * dh
            dc_prev = dc_prev + (1.0 - m) * dc
        return dx, dh_prev, dc_prev, x.T @ dz, h.T @ dz, dz.sum(axis=0)

    hc = _make(
        np.concatenate([h_out, c_out], axis=1),
        (x_t, h_prev, c_prev, p.w_x, p.w_h, p.bias),
        bw,
        "lstm_step",
    )
    h_t, c_t = index(hc, (slice(None), slice(0, H))), index(hc, (slice(None), slice(H, 2 * H)))
    if squeeze:
        h_t, c_t = reshape(h_t, (H,)), reshape(c_t, (H,))
    return h_t, c_t


def run_lstm(
    inputs: Sequence[Tensor],
    p: LstmParams,
    masks: Sequence[np.ndarray] | None = None,
    reverse: bool = False,
    h0: Tensor | None = None,
    c0: Tensor | None = None,
) -> list[Tensor]:
    """Run ``p`` over a list of ``(B, D)`` step inputs; returns hidden states in input order."""
    B = inputs[0].shape[0]
    h = h0 if h0 is not None else Tensor(np.zeros((B, p.hidden_size)))
    c = c0 if c0 is not None else Tensor(np.zeros((B, p.hidden_size)))
    steps = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    out: list[Tensor | None] = [None] * len(inputs)
    for t in steps:
        h, c = lstm_step(inputs[t], h, c, p, None if masks is None else masks[t])
        out[t] = h
    return out  # type: ignore[return-value]


# ---------------------------------------------------------------- optimisation


@dataclass
class AdamState:
    first: list[np.ndarray]
    second: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kw) -> "AdamState":
        return cls(
            [np.zeros_like(p.data) for p in params],
            [np.zeros_like(p.data) for p in params],
            **kw,
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
    names: Sequence[str] | None = None,
) -> None:
    """Bias-corrected Adam update applied in place to ``params``."""
    if lr <= 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    if len(params) != len(state.first):
        raise DimensionError("optimizer state does not match parameter list")
    for k, g in enumerate(grads):
        if g is not None and not np.isfinite(g).all():
            label = names[k] if names else f"#{k}"
            bad = int((~np.isfinite(g)).sum())
            raise NumericalError(f"non-finite gradient in parameter {label}: {bad} entries")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.first, state.second):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Thin stateful wrapper over :func:`adam_step` for a named parameter set."""

    def __init__(self, params: dict[str, Tensor], lr: float, clip_norm: float | None = 5.0, **kw):
        self.names = list(params)
        self.params = [params[n] for n in self.names]
        self.lr = lr
        self.clip_norm = clip_norm
        self.state = AdamState.for_params(self.params, **kw)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad for p in self.params]
        if self.clip_norm:
            grads = clip_grad_norm(grads, self.clip_norm)
        adam_step(self.params, grads, self.state, self.lr, self.names)


def clip_grad_norm(grads: Iterable[np.ndarray | None], max_norm: float) -> list[np.ndarray | None]:
    grads = list(grads)
    total = float(np.sqrt(np.sum([float((g * g).sum()) for g in grads if g is not None])))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return [None if g is None else g * scale for g in grads]


# ---------------------------------------------------------------- gradient checking


@dataclass
class GradCheck:
    name: str
    rel_error: float
    checked: int
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)


def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[GradCheck]:
    """Compare backprop gradients against central finite differences.

    Per parameter group the error is ``||a - n|| / max(||a||, ||n||)`` over
    the checked entries (0 when both vanish).  ``max_entries`` subsamples
    large groups, favouring entries with a non-zero analytic gradient.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    backward(loss)
    rng = rng or np.random.default_rng(0)
    results = []
    for name, p in params.items():
        analytic_full = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = np.arange(p.data.size)
        if max_entries is not None and p.data.size > max_entries:
            nz = flat[analytic_full.ravel() != 0]
            take = rng.choice(nz, size=min(len(nz), max_entries), replace=False) if len(nz) else nz
            rest = np.setdiff1d(flat, take)
            extra = max(0, max_entries - len(take))
            if extra:
                take = np.concatenate([take, rng.choice(rest, size=min(extra, len(rest)), replace=False)])
            flat = np.sort(take)
        numeric = np.empty(len(flat))
        view = p.data.reshape(-1)
        with no_grad():
            for k, j in enumerate(flat):
                orig = view[j]
                view[j] = orig + step
                up = float(loss_fn().data)
                view[j] = orig - step
                down = float(loss_fn().data)
                view[j] = orig
                numeric[k] = (up - down) / (2 * step)
        analytic = analytic_full.reshape(-1)[flat]
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        err = 0.0 if denom == 0 else float(np.linalg.norm(analytic - numeric) / denom)
        results.append(GradCheck(name, err, len(flat), analytic, numeric))
    for p in params.values():
        p.grad = None
    return results
