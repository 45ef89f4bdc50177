"""Dense tensors with reverse-mode automatic differentiation.

Every op builds a node that remembers its parents and a rule mapping the
output gradient to parent gradients. ``backward`` orders the reachable
nodes topologically (the tape) and replays the rules in reverse.

Arrays carry a leading batch axis wherever the model needs one; the engine
itself is shape-agnostic and follows numpy broadcasting.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "ComputationTape",
    "build_tape",
    "backward",
    "no_grad",
    "precision",
    "get_default_dtype",
    "set_default_dtype",
    "as_tensor",
    "matmul",
    "add",
    "mul",
    "tanh",
    "sigmoid",
    "relu",
    "softmax",
    "conv1d_causal",
    "concat",
    "mean",
    "var",
    "transpose",
    "reshape",
    "broadcast_to",
    "gather",
    "take",
    "topk_mask",
    "layer_norm",
    "finite_difference_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def get_default_dtype() -> np.dtype:
    return np.dtype(_get("dtype", np.float32))


def set_default_dtype(dtype) -> None:
    _state.dtype = np.dtype(dtype)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype new tensors are created with."""
    old = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    """Skip graph recording; used for evaluation passes."""
    old = _get("grad_enabled", True)
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


def _grad_enabled() -> bool:
    return _get("grad_enabled", True)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f" or arr.dtype != get_default_dtype():
            arr = arr.astype(get_default_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

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
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, like=self)))

    def __rsub__(self, other):
        return add(as_tensor(other, like=self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other))

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return gather(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], rule, op: str) -> Tensor:
    # skips __init__: op results are already arrays of the right dtype
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data)
    out.grad = None
    out.op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    if a.data.shape == b.data.shape:
        return a.data.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape, detail="not broadcastable") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_shape("add", a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), rule, "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_shape("mul", a, b)

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), rule, "mul")


def power(a: Tensor, p: float) -> Tensor:
    out = a.data**p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    # tanh form is stable for large |x| and avoids overflow in exp
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; entries where ``mask`` is False get weight 0."""
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("softmax: a row of the mask selects nothing")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), rule, "softmax")


def topk_mask(scores, k: int) -> np.ndarray:
    """Boolean mask of the ``k`` largest entries along the last axis.

    Ties go to the lowest index. The mask is a constant to the tape.
    """
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    width = s.shape[-1]
    if not 1 <= k <= width:
        raise ShapeError("topk", s.shape, detail=f"k={k} outside [1, {width}]")
    order = np.argsort(-s, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(s.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return mask


# ---------------------------------------------------------------- contraction


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dims") from None

    def rule(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), rule, "matmul")


def conv1d_causal(x: Tensor, w: Tensor) -> Tensor:
    """Causal convolution along the time axis.

    x: (..., T, c_in), w: (k, c_in, c_out). The input is left-padded with
    k-1 zeros so the output keeps length T and step t sees only steps <= t.
    """
    if w.ndim != 3 or x.ndim < 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError("conv1d", x.shape, w.shape)
    k, c_in, c_out = w.shape
    T = x.shape[-2]
    if T < k:
        raise ShapeError("conv1d", x.shape, w.shape, detail=f"T={T} < kernel size {k}")
    xp = np.concatenate([np.zeros(x.shape[:-2] + (k - 1, c_in), x.dtype), x.data], axis=-2)
    # im2col: column block j holds the input shifted by k-1-j steps
    cols = np.concatenate([xp[..., j : j + T, :] for j in range(k)], axis=-1)
    w2 = w.data.reshape(k * c_in, c_out)
    out = cols @ w2

    def rule(g):
        gcols = g @ w2.T
        gx = np.zeros_like(xp)
        for j in range(k):
            gx[..., j : j + T, :] += gcols[..., j * c_in : (j + 1) * c_in]
        gw = cols.reshape(-1, k * c_in).T @ g.reshape(-1, c_out)
        return gx[..., k - 1 :, :], gw.reshape(w.shape)

    return _make(out, (x, w), rule, "conv1d")


# ---------------------------------------------------------------- reductions


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), rule, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / count)


def var(a: Tensor, axis=None, keepdims=False) -> Tensor:
    """Population variance."""
    centered = a - mean(a, axis, keepdims=True)
    return mean(centered * centered, axis, keepdims)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    centered = x - mean(x, axis=-1, keepdims=True)
    v = mean(centered * centered, axis=-1, keepdims=True)
    return centered * power(v + eps, -0.5) * gain + bias


# ---------------------------------------------------------------- structure


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2) if a.ndim >= 2 else (0,)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, detail=f"axes {axes}")
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", a.shape, tuple(shape)) from None
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", *(t.shape for t in tensors))
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, rule, "concat")


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def gather(a: Tensor, index) -> Tensor:
    """Basic or fancy indexing; repeated indices accumulate in backward."""
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError("gather", a.shape, detail=str(exc)) from None
    basic = _is_basic(index)

    def rule(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[index] += g
        else:
            np.add.at(ga, index, g)
        return (ga,)

    return _make(np.array(out), (a,), rule, "gather")


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Select entries of ``axis`` by an integer array (embedding lookup).

    The index array's shape replaces ``axis`` in the output.
    """
    idx = np.asarray(indices, dtype=np.int64)
    ax = axis % a.ndim
    L = a.shape[ax]
    if idx.size and (idx.min() < -L or idx.max() >= L):
        raise ShapeError("take", a.shape, detail=f"index out of range for axis {ax}")
    idx = idx % L
    out = np.take(a.data, idx, axis=ax)

    def rule(g):
        flat = idx.reshape(-1)
        onehot = np.zeros((flat.size, L), dtype=g.dtype)
        onehot[np.arange(flat.size), flat] = 1.0
        gm = np.moveaxis(g, tuple(range(ax, ax + idx.ndim)), tuple(range(idx.ndim)))
        rest = gm.shape[idx.ndim :]
        ga = onehot.T @ gm.reshape(flat.size, -1)
        return (np.moveaxis(ga.reshape((L,) + rest), 0, ax),)

    return _make(out, (a,), rule, "take")


# ---------------------------------------------------------------- backward


class ComputationTape:
    """Nodes reachable from a loss in topological order (inputs first)."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def ops(self) -> list[Tensor]:
        return [t for t in self.nodes if t._backward is not None]


def build_tape(loss: Tensor) -> ComputationTape:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return ComputationTape(order)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; clear them with ``zero_grad``.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss._backward is None:
        raise ValueError("backward: empty tape (loss was not produced by recorded ops)")
    tape = build_tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    step: float = 1e-6,
) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``f`` re-evaluates the scalar objective from the current values of
    ``params`` (their data is perturbed in place). Relative error is
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("finite_difference_check needs float64 parameters")
        p.grad = None
    loss = f()
    again = f()
    if loss.data.tobytes() != again.data.tobytes():
        raise RuntimeError("finite_difference_check: objective is not deterministic")
    backward(loss)
    worst = 0.0
    with no_grad():
        for p in params:
            analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = float(f().data)
                flat[i] = orig - step
                down = float(f().data)
                flat[i] = orig
                numeric = (up - down) / (2 * step)
                a = float(analytic.reshape(-1)[i])
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                worst = max(worst, err)
    return worst
