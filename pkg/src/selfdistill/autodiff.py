"""Dense tensors with reverse-mode automatic differentiation on an explicit tape.

The design is a Wengert list: every differentiable primitive executes its
forward pass eagerly in numpy and, when any input is tracked on an open
``Tape``, appends an entry holding vector-Jacobian closures for the tracked
inputs. ``backward`` replays those entries in reverse execution order, so no
topological sort is needed.

Tracking rules:

* A ``Tensor`` becomes tracked by ``tape.watch(t)`` (parameters) or by being
  produced by a primitive whose inputs were tracked (intermediates).
* Tensors never watched, or watched only on a tape that has since been
  closed by ``backward``, behave as constants: primitives fall through to
  plain numpy and no gradient ever reaches them. This is how teacher logits
  stay frozen without any special flag at the call site.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

from .errors import InputError, ShapeError, UsageError

DEFAULT_DTYPE = np.float64

# Additive pre-softmax penalty for masked attention positions. Large enough
# that exp() underflows to exactly 0 after max subtraction, small enough to
# stay finite.
MASK_PENALTY = 1e9

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense real-valued array plus its tracking state.

    ``data`` is always a float32 or float64 ndarray. ``tape`` points at the
    tape the tensor was last recorded or watched on (None for constants).
    """

    __slots__ = ("data", "tape", "is_param")

    def __init__(self, data, dtype=None, is_param: bool = False):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.tape: Tape | None = None
        self.is_param = is_param

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def copy(self) -> "Tensor":
        """Detached deep copy (constant, no tape)."""
        return Tensor(self.data.copy(), is_param=self.is_param)

    def __repr__(self) -> str:
        kind = "param" if self.is_param else ("tracked" if self.tape else "const")
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, {kind})"


class Tape:
    """Ordered record of executed primitives and their saved adjoint closures.

    One tape serves one forward+backward pass; ``backward`` closes it, after
    which tensors still pointing at it are treated as constants.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, list[tuple[Tensor, Callable]]]] = []
        self._watched: list[Tensor] = []
        self._watched_ids: set[int] = set()
        self._open = True

    def watch(self, tensor: Tensor) -> Tensor:
        """Mark ``tensor`` as a gradient source for this tape."""
        if not self._open:
            raise UsageError("cannot watch a tensor on a closed tape")
        if id(tensor) not in self._watched_ids:
            self._watched.append(tensor)
            self._watched_ids.add(id(tensor))
        tensor.tape = self
        return tensor

    def watch_all(self, tensors: Iterable[Tensor]) -> None:
        for t in tensors:
            self.watch(t)

    def _record(self, out: Tensor, pairs: list[tuple[Tensor, Callable]]) -> None:
        out.tape = self
        self._nodes.append((out, pairs))

    def __len__(self) -> int:
        return len(self._nodes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _live_tape(*tensors) -> Tape | None:
    for t in tensors:
        if isinstance(t, Tensor) and t.tape is not None and t.tape._open:
            return t.tape
    return None


def _tracked(t, tape: Tape) -> bool:
    return isinstance(t, Tensor) and t.tape is tape


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)
    tape = _live_tape(a, b)
    if tape is not None:
        pairs = []
        if _tracked(a, tape):
            pairs.append((a, lambda g: _unbroadcast(g, a.data.shape)))
        if _tracked(b, tape):
            pairs.append((b, lambda g: _unbroadcast(g, b.data.shape)))
        tape._record(out, pairs)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)
    tape = _live_tape(a, b)
    if tape is not None:
        pairs = []
        if _tracked(a, tape):
            pairs.append((a, lambda g: _unbroadcast(g, a.data.shape)))
        if _tracked(b, tape):
            pairs.append((b, lambda g: _unbroadcast(-g, b.data.shape)))
        tape._record(out, pairs)
    return out


def mul(a, b) -> Tensor:
    """Elementwise product; either side may be a plain python scalar."""
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        out = Tensor(a.data * b)
        tape = _live_tape(a)
        if tape is not None and _tracked(a, tape):
            tape._record(out, [(a, lambda g: g * b)])
        return out
    if isinstance(a, (int, float)) and isinstance(b, Tensor):
        return mul(b, a)
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)
    tape = _live_tape(a, b)
    if tape is not None:
        pairs = []
        if _tracked(a, tape):
            pairs.append((a, lambda g: _unbroadcast(g * b.data, a.data.shape)))
        if _tracked(b, tape):
            pairs.append((b, lambda g: _unbroadcast(g * a.data, b.data.shape)))
        tape._record(out, pairs)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching over leading dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs >=2-d operands, got {a.data.shape} x {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    out = Tensor(np.matmul(a.data, b.data))
    tape = _live_tape(a, b)
    if tape is not None:
        pairs = []
        if _tracked(a, tape):
            pairs.append(
                (a, lambda g: _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)),
                                           a.data.shape))
            )
        if _tracked(b, tape):
            pairs.append(
                (b, lambda g: _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g),
                                           b.data.shape))
            )
        tape._record(out, pairs)
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    tape = _live_tape(a)
    if tape is not None and _tracked(a, tape):
        tape._record(out, [(a, lambda g: g.reshape(a.data.shape))])
    return out


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.transpose(axes))
    tape = _live_tape(a)
    if tape is not None and _tracked(a, tape):
        inverse = tuple(np.argsort(axes))
        tape._record(out, [(a, lambda g: g.transpose(inverse))])
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise InputError(
            f"embedding ids out of range [0, {table.data.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    out = Tensor(table.data[ids])
    tape = _live_tape(table)
    if tape is not None and _tracked(table, tape):
        def vjp(g, ids=ids):
            acc = np.zeros_like(table.data)
            np.add.at(acc, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
            return acc
        tape._record(out, [(table, vjp)])
    return out


def narrow_rows(a: Tensor, n: int) -> Tensor:
    """First ``n`` rows of a 2-d tensor (used for position embeddings)."""
    out = Tensor(a.data[:n])
    tape = _live_tape(a)
    if tape is not None and _tracked(a, tape):
        def vjp(g):
            acc = np.zeros_like(a.data)
            acc[:n] = g
            return acc
        tape._record(out, [(a, vjp)])
    return out


def select_position(a: Tensor, position: int) -> Tensor:
    """Slice one sequence position: [B, L, D] -> [B, D]."""
    out = Tensor(a.data[:, position, :])
    tape = _live_tape(a)
    if tape is not None and _tracked(a, tape):
        def vjp(g):
            acc = np.zeros_like(a.data)
            acc[:, position, :] = g
            return acc
        tape._record(out, [(a, vjp)])
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Smooth GELU (tanh approximation)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))
    tape = _live_tape(a)
    if tape is not None and _tracked(a, tape):
        def vjp(g, x=x, t=t):
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
            return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner)
        tape._record(out, [(a, vjp)])
    return out


def softmax(a: Tensor) -> Tensor:
    """Stable softmax over the last axis (max subtraction)."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)
    tape = _live_tape(a)
    if tape is not None and _tracked(a, tape):
        def vjp(g, s=s):
            return (g - (g * s).sum(axis=-1, keepdims=True)) * s
        tape._record(out, [(a, vjp)])
    return out


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; consumes rng only when p > 0."""
    if p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise UsageError(f"dropout probability must be in [0, 1), got {p}")
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype)
    scale = 1.0 / (1.0 - p)
    out = Tensor(a.data * keep * scale)
    tape = _live_tape(a)
    if tape is not None and _tracked(a, tape):
        tape._record(out, [(a, lambda g: g * keep * scale)])
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learned gain and bias."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(gain.data * xhat + bias.data)
    tape = _live_tape(a, gain, bias)
    if tape is not None:
        pairs = []
        if _tracked(a, tape):
            def vjp_x(g, xhat=xhat, inv=inv):
                d = x.shape[-1]
                dxhat = g * gain.data
                return (inv / d) * (
                    d * dxhat
                    - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
                )
            pairs.append((a, vjp_x))
        if _tracked(gain, tape):
            pairs.append(
                (gain, lambda g, xhat=xhat: _unbroadcast(g * xhat, gain.data.shape))
            )
        if _tracked(bias, tape):
            pairs.append((bias, lambda g: _unbroadcast(g, bias.data.shape)))
        tape._record(out, pairs)
    return out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[gold]; log-sum-exp stable."""
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.data
    if x.ndim != 2:
        raise ShapeError(f"cross_entropy expects [B, C] logits, got {x.shape}")
    b, c = x.shape
    if labels.shape != (b,):
        raise ShapeError(
            f"cross_entropy: {b} logit rows but labels shape {labels.shape}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InputError(
            f"labels out of range [0, {c}): min={labels.min()}, max={labels.max()}"
        )
    m = x.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=-1))
    loss = (lse - x[np.arange(b), labels]).mean()
    out = Tensor(np.asarray(loss, dtype=x.dtype))
    tape = _live_tape(logits)
    if tape is not None and _tracked(logits, tape):
        def vjp(g, x=x, labels=labels):
            e = np.exp(x - x.max(axis=-1, keepdims=True))
            probs = e / e.sum(axis=-1, keepdims=True)
            probs[np.arange(b), labels] -= 1.0
            return probs * (g / b)
        tape._record(out, [(logits, vjp)])
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over every entry of the squared difference."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse: shapes differ: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = diff.size
    out = Tensor(np.asarray((diff ** 2).mean(), dtype=diff.dtype))
    tape = _live_tape(a, b)
    if tape is not None:
        pairs = []
        if _tracked(a, tape):
            pairs.append((a, lambda g: g * (2.0 / n) * diff))
        if _tracked(b, tape):
            pairs.append((b, lambda g: g * (-2.0 / n) * diff))
        tape._record(out, pairs)
    return out


# ---------------------------------------------------------------------------
# Backward pass and gradient checking
# ---------------------------------------------------------------------------


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Replay adjoints in reverse execution order.

    Returns a map from each watched parameter tensor to its gradient array;
    watched tensors with no path to the loss get zeros. Constants never
    appear. The tape is closed afterwards.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, pairs in reversed(tape._nodes):
        g = adjoints.pop(id(out), None)
        if g is None:
            continue
        for tensor, vjp in pairs:
            contribution = vjp(g)
            key = id(tensor)
            if key in adjoints:
                adjoints[key] = adjoints[key] + contribution
            else:
                adjoints[key] = contribution
    tape._open = False
    grads: dict[Tensor, np.ndarray] = {}
    for t in tape._watched:
        grads[t] = adjoints.get(id(t), np.zeros_like(t.data))
    return grads


def grad_check(f: Callable[[], Tensor], params, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` is a zero-argument closure over ``params`` returning a scalar
    Tensor; it must be deterministic (dropout off). ``params`` is a dict of
    name -> Tensor or an iterable of Tensors. The finite-difference replays
    run after the tape closes, so they are plain forward evaluations.
    """
    tensors = list(params.values()) if isinstance(params, dict) else list(params)
    tape = Tape()
    tape.watch_all(tensors)
    loss = f()
    grads = backward(loss, tape)
    worst = 0.0
    for t in tensors:
        analytic = grads[t]
        it = np.nditer(t.data, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = t.data[idx]
            t.data[idx] = orig + eps
            fp = float(f().data)
            t.data[idx] = orig - eps
            fm = float(f().data)
            t.data[idx] = orig
            fd = (fp - fm) / (2.0 * eps)
            a = float(analytic[idx])
            denom = max(abs(a), abs(fd), 1e-8)
            worst = max(worst, abs(a - fd) / denom)
            it.iternext()
    return worst
