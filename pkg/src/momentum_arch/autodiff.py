"""Dense float64 tensors and a reverse-mode differentiation tape.

Every differentiable computation in the package is expressed through
:func:`record_op`. A :class:`Tensor` that is not attached to a :class:`Tape`
is a plain constant and operations on it are evaluated eagerly with no
bookkeeping, which is the fast path used by forward ODE integration and
inference.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """Immutable float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "index", "name")

    def __init__(self, data, tape: "Tape | None" = None, index: int = -1, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.index = index
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

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __repr__(self) -> str:
        where = f", node={self.index}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{where})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(other, self)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return slice_(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    kind: str
    inputs: tuple[int, ...]  # tape indices, -1 for constants
    values: tuple[np.ndarray, ...]
    out: np.ndarray
    attrs: dict


class Gradients(dict):
    """Parameter-name -> gradient mapping returned by :meth:`Tape.backward`.

    ``disconnected`` is set when no registered parameter lies on a path to
    the root. :meth:`of` exposes the gradient for any tensor on the tape,
    which is how per-timestep hidden-state gradients are read.
    """

    def __init__(self, grads: Mapping[str, np.ndarray], node_grads: list, tape: "Tape", disconnected: bool):
        super().__init__(grads)
        self._node_grads = node_grads
        self._tape = tape
        self.disconnected = disconnected

    def of(self, t: Tensor) -> np.ndarray:
        if t.tape is not self._tape:
            raise ValueError("tensor does not belong to this tape")
        g = self._node_grads[t.index]
        return np.zeros(t.shape) if g is None else g


class Tape:
    """Append-only record of operations for one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.params: dict[str, Tensor] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: _Node, name: str | None = None) -> Tensor:
        self.nodes.append(node)
        return Tensor(node.out, self, len(self.nodes) - 1, name)

    def param(self, name: str, value) -> Tensor:
        """Register a trainable leaf."""
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        arr = np.array(value, dtype=np.float64)
        t = self._append(_Node("leaf", (), (), arr, {}), name)
        self.params[name] = t
        return t

    def leaf(self, value, name: str | None = None) -> Tensor:
        """Tracked but untrained leaf (an input whose gradient we want to read)."""
        arr = np.array(value, dtype=np.float64)
        return self._append(_Node("leaf", (), (), arr, {}), name)

    def grad(
        self,
        outputs: Tensor | Sequence[Tensor],
        cotangents: Any = None,
    ) -> Gradients:
        """Vector-Jacobian product of ``outputs`` against ``cotangents``.

        With a single scalar output and no cotangent this is ordinary
        backpropagation of a loss.
        """
        if isinstance(outputs, Tensor):
            outputs = [outputs]
            cotangents = [1.0 if cotangents is None else cotangents]
        elif cotangents is None:
            cotangents = [1.0] * len(outputs)
        node_grads: list[np.ndarray | None] = [None] * len(self.nodes)
        for out, ct in zip(outputs, cotangents):
            if out.tape is None:
                continue
            if out.tape is not self:
                raise ValueError("output belongs to a different tape")
            ct = np.broadcast_to(np.asarray(ct, dtype=np.float64), out.shape)
            prev = node_grads[out.index]
            node_grads[out.index] = np.array(ct) if prev is None else prev + ct

        for i in range(len(self.nodes) - 1, -1, -1):
            g = node_grads[i]
            node = self.nodes[i]
            if g is None or node.kind == "leaf":
                continue
            in_grads = _OPS[node.kind].vjp(g, node.out, node.values, node.attrs)
            for j, gi in zip(node.inputs, in_grads):
                if j < 0 or gi is None:
                    continue
                prev = node_grads[j]
                node_grads[j] = gi if prev is None else prev + gi

        grads = {}
        disconnected = True
        for name, t in self.params.items():
            g = node_grads[t.index]
            if g is None:
                grads[name] = np.zeros(t.shape)
            else:
                grads[name] = g
                disconnected = False
        return Gradients(grads, node_grads, self, disconnected)

    def backward(self, root: Tensor) -> Gradients:
        return backward(self, root)


def backward(tape: Tape, root: Tensor) -> Gradients:
    """Gradient of a scalar ``root`` with respect to every registered parameter."""
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if root.tape is None:
        return Gradients({n: np.zeros(t.shape) for n, t in tape.params.items()},
                         [None] * len(tape.nodes), tape, True)
    return tape.grad(root, 1.0)


# --------------------------------------------------------------------------
# op registry


@dataclass(frozen=True)
class _Op:
    forward: Callable
    vjp: Callable
    arity: int  # -1: variadic


_OPS: dict[str, _Op] = {}


def register_op(kind: str, arity: int):
    def deco(cls):
        _OPS[kind] = _Op(cls.forward, cls.vjp, arity)
        return cls
    return deco


def op_kinds() -> list[str]:
    return list(_OPS)


def record_op(kind: str, inputs: Sequence, attrs: Mapping | None = None) -> Tensor:
    """Evaluate op ``kind`` and, if any input is on a tape, record it."""
    op = _OPS.get(kind)
    if op is None:
        raise ValueError(f"unknown op kind {kind!r}")
    attrs = {} if attrs is None else dict(attrs)
    tensors = [as_tensor(x) for x in inputs]
    if op.arity >= 0 and len(tensors) != op.arity:
        raise ShapeError(f"{kind} takes {op.arity} inputs, got {len(tensors)}")
    values = tuple(t.data for t in tensors)
    out = op.forward(values, attrs)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{kind} produced non-finite values")
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("inputs belong to different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(out)
    idx = tuple(t.index if t.tape is tape else -1 for t in tensors)
    return tape._append(_Node(kind, idx, values, out, attrs))


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not conform") from None


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


@register_op("matmul", 2)
class _MatMul:
    @staticmethod
    def forward(v, attrs):
        a, b = v
        if a.ndim == 0 or b.ndim == 0:
            raise ShapeError("matmul needs at least 1-d operands")
        if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
        return np.matmul(a, b)

    @staticmethod
    def vjp(g, out, v, attrs):
        a, b = v
        if a.ndim == 1 and b.ndim == 1:
            return g * b, g * a
        if b.ndim == 1:
            ga = g[..., :, None] * b
            gb = unbroadcast(np.matmul(_swap(a), g[..., :, None])[..., 0], b.shape)
            return ga, gb
        if a.ndim == 1:
            ga = unbroadcast(np.matmul(b, g[..., :, None])[..., 0], a.shape)
            gb = a[:, None] * g[..., None, :]
            return ga, unbroadcast(gb, b.shape)
        ga = unbroadcast(np.matmul(g, _swap(b)), a.shape)
        gb = unbroadcast(np.matmul(_swap(a), g), b.shape)
        return ga, gb


@register_op("add", 2)
class _Add:
    @staticmethod
    def forward(v, attrs):
        _broadcast_shape("add", *v)
        return v[0] + v[1]

    @staticmethod
    def vjp(g, out, v, attrs):
        return unbroadcast(g, v[0].shape), unbroadcast(g, v[1].shape)


@register_op("sub", 2)
class _Sub:
    @staticmethod
    def forward(v, attrs):
        _broadcast_shape("sub", *v)
        return v[0] - v[1]

    @staticmethod
    def vjp(g, out, v, attrs):
        return unbroadcast(g, v[0].shape), unbroadcast(-g, v[1].shape)


@register_op("hadamard", 2)
class _Hadamard:
    @staticmethod
    def forward(v, attrs):
        _broadcast_shape("hadamard", *v)
        return v[0] * v[1]

    @staticmethod
    def vjp(g, out, v, attrs):
        a, b = v
        return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)


@register_op("div", 2)
class _Div:
    @staticmethod
    def forward(v, attrs):
        a, b = v
        _broadcast_shape("div", a, b)
        if np.any(b == 0.0):
            raise DomainError("div: divisor contains zero")
        return a / b

    @staticmethod
    def vjp(g, out, v, attrs):
        a, b = v
        gb = -g * out / b
        return unbroadcast(g / b, a.shape), unbroadcast(gb, b.shape)


@register_op("scale", 1)
class _Scale:
    @staticmethod
    def forward(v, attrs):
        return v[0] * attrs["factor"]

    @staticmethod
    def vjp(g, out, v, attrs):
        return (g * attrs["factor"],)


@register_op("sigmoid", 1)
class _Sigmoid:
    @staticmethod
    def forward(v, attrs):
        return sigmoid_np(v[0])

    @staticmethod
    def vjp(g, out, v, attrs):
        return (g * out * (1.0 - out),)


@register_op("tanh", 1)
class _Tanh:
    @staticmethod
    def forward(v, attrs):
        return np.tanh(v[0])

    @staticmethod
    def vjp(g, out, v, attrs):
        return (g * (1.0 - out * out),)


@register_op("softplus", 1)
class _Softplus:
    @staticmethod
    def forward(v, attrs):
        return softplus_np(v[0])

    @staticmethod
    def vjp(g, out, v, attrs):
        return (g * sigmoid_np(v[0]),)


@register_op("elu_plus_one", 1)
class _EluPlusOne:
    @staticmethod
    def forward(v, attrs):
        return elu_plus_one_np(v[0])

    @staticmethod
    def vjp(g, out, v, attrs):
        x = v[0]
        return (g * np.where(x >= 0.0, 1.0, out),)


@register_op("relu", 1)
class _Relu:
    @staticmethod
    def forward(v, attrs):
        return np.maximum(v[0], 0.0)

    @staticmethod
    def vjp(g, out, v, attrs):
        return (g * (v[0] > 0.0),)


@register_op("exp", 1)
class _Exp:
    @staticmethod
    def forward(v, attrs):
        with np.errstate(over="ignore"):
            return np.exp(v[0])

    @staticmethod
    def vjp(g, out, v, attrs):
        return (g * out,)


@register_op("sqrt", 1)
class _Sqrt:
    @staticmethod
    def forward(v, attrs):
        if np.any(v[0] < 0.0):
            raise DomainError("sqrt of negative input")
        return np.sqrt(v[0])

    @staticmethod
    def vjp(g, out, v, attrs):
        # subgradient 0 at the origin keeps gradients finite
        safe = np.where(out > 0.0, out, 1.0)
        return (np.where(out > 0.0, 0.5 * g / safe, 0.0),)


@register_op("log", 1)
class _Log:
    @staticmethod
    def forward(v, attrs):
        if np.any(v[0] <= 0.0):
            raise DomainError("log of non-positive input")
        return np.log(v[0])

    @staticmethod
    def vjp(g, out, v, attrs):
        return (g / v[0],)


@register_op("square", 1)
class _Square:
    @staticmethod
    def forward(v, attrs):
        return v[0] * v[0]

    @staticmethod
    def vjp(g, out, v, attrs):
        return (2.0 * g * v[0],)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


@register_op("sum", 1)
class _Sum:
    @staticmethod
    def forward(v, attrs):
        return np.sum(v[0], axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False))

    @staticmethod
    def vjp(g, out, v, attrs):
        x = v[0]
        if not attrs.get("keepdims", False):
            g = np.expand_dims(g, _norm_axis(attrs.get("axis"), x.ndim))
        return (np.broadcast_to(g, x.shape).copy(),)


@register_op("mean", 1)
class _Mean:
    @staticmethod
    def forward(v, attrs):
        return np.mean(v[0], axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False))

    @staticmethod
    def vjp(g, out, v, attrs):
        x = v[0]
        axes = _norm_axis(attrs.get("axis"), x.ndim)
        count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
        if not attrs.get("keepdims", False):
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)


@register_op("concat", -1)
class _Concat:
    @staticmethod
    def forward(v, attrs):
        try:
            return np.concatenate(v, axis=attrs.get("axis", -1))
        except ValueError as e:
            raise ShapeError(f"concat: {e}") from None

    @staticmethod
    def vjp(g, out, v, attrs):
        axis = attrs.get("axis", -1)
        bounds = np.cumsum([x.shape[axis] for x in v])[:-1]
        return tuple(np.split(g, bounds, axis=axis))


@register_op("slice", 1)
class _Slice:
    @staticmethod
    def forward(v, attrs):
        try:
            return np.array(v[0][attrs["key"]])
        except IndexError as e:
            raise ShapeError(f"slice: {e}") from None

    @staticmethod
    def vjp(g, out, v, attrs):
        gx = np.zeros_like(v[0])
        np.add.at(gx, attrs["key"], g)
        return (gx,)


@register_op("transpose", 1)
class _Transpose:
    @staticmethod
    def forward(v, attrs):
        x = v[0]
        axes = attrs.get("axes")
        if axes is None:
            if x.ndim < 2:
                raise ShapeError("transpose needs at least 2 dims")
            return _swap(x)
        return np.transpose(x, axes)

    @staticmethod
    def vjp(g, out, v, attrs):
        axes = attrs.get("axes")
        if axes is None:
            return (_swap(g),)
        return (np.transpose(g, np.argsort(axes)),)


@register_op("reshape", 1)
class _Reshape:
    @staticmethod
    def forward(v, attrs):
        try:
            return v[0].reshape(attrs["shape"])
        except ValueError as e:
            raise ShapeError(f"reshape: {e}") from None

    @staticmethod
    def vjp(g, out, v, attrs):
        return (g.reshape(v[0].shape),)


def _softmax_last(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@register_op("softmax_rows", 1)
class _SoftmaxRows:
    """Row softmax; optional boolean ``mask`` (True = keep) broadcast to the input."""

    @staticmethod
    def forward(v, attrs):
        return _softmax_last(v[0], attrs.get("mask"))

    @staticmethod
    def vjp(g, out, v, attrs):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)


@register_op("mse_loss", 2)
class _MSE:
    @staticmethod
    def forward(v, attrs):
        pred, target = v
        if pred.shape != target.shape:
            raise ShapeError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
        d = pred - target
        return np.asarray(np.mean(d * d))

    @staticmethod
    def vjp(g, out, v, attrs):
        pred, target = v
        gp = 2.0 * g * (pred - target) / pred.size
        return gp, -gp


def _log_softmax(x):
    z = x - np.max(x, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


@register_op("cross_entropy_loss", 1)
class _CrossEntropy:
    """Weighted mean of -log softmax(logits)[label]; ``labels`` and optional
    ``weights`` are attributes shaped like ``logits.shape[:-1]``."""

    @staticmethod
    def forward(v, attrs):
        logits = v[0]
        labels = np.asarray(attrs["labels"])
        if labels.shape != logits.shape[:-1]:
            raise ShapeError(f"cross_entropy_loss: labels {labels.shape} vs logits {logits.shape}")
        w = attrs.get("weights")
        w = np.ones(labels.shape) if w is None else np.asarray(w, dtype=np.float64)
        total = w.sum()
        if total <= 0:
            raise DomainError("cross_entropy_loss: weights sum to zero")
        logp = _log_softmax(logits)
        picked = np.take_along_axis(logp, labels[..., None].astype(np.intp), axis=-1)[..., 0]
        return np.asarray(-(w * picked).sum() / total)

    @staticmethod
    def vjp(g, out, v, attrs):
        logits = v[0]
        labels = np.asarray(attrs["labels"]).astype(np.intp)
        w = attrs.get("weights")
        w = np.ones(labels.shape) if w is None else np.asarray(w, dtype=np.float64)
        p = np.exp(_log_softmax(logits))
        np.put_along_axis(p, labels[..., None],
                          np.take_along_axis(p, labels[..., None], axis=-1) - 1.0, axis=-1)
        return (g * p * (w / w.sum())[..., None],)


# --------------------------------------------------------------------------
# numpy helpers shared with non-tape code


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus_np(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def elu_plus_one_np(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, x + 1.0, np.exp(np.minimum(x, 0.0)))


# --------------------------------------------------------------------------
# thin functional front-end


def matmul(a, b):
    return record_op("matmul", (a, b))


def add(a, b):
    return record_op("add", (a, b))


def sub(a, b):
    return record_op("sub", (a, b))


def hadamard(a, b):
    return record_op("hadamard", (a, b))


def div(a, b):
    return record_op("div", (a, b))


def scale(a, factor: float):
    return record_op("scale", (a,), {"factor": float(factor)})


def sigmoid(a):
    return record_op("sigmoid", (a,))


def tanh(a):
    return record_op("tanh", (a,))


def softplus(a):
    return record_op("softplus", (a,))


def elu_plus_one(a):
    return record_op("elu_plus_one", (a,))


def relu(a):
    return record_op("relu", (a,))


def exp(a):
    return record_op("exp", (a,))


def sqrt(a):
    return record_op("sqrt", (a,))


def log(a):
    return record_op("log", (a,))


def square(a):
    return record_op("square", (a,))


def sum_(a, axis=None, keepdims=False):
    return record_op("sum", (a,), {"axis": axis, "keepdims": keepdims})


def mean(a, axis=None, keepdims=False):
    return record_op("mean", (a,), {"axis": axis, "keepdims": keepdims})


def concat(tensors: Iterable, axis: int = -1):
    return record_op("concat", tuple(tensors), {"axis": axis})


def slice_(a, key):
    return record_op("slice", (a,), {"key": key})


def transpose(a, axes=None):
    return record_op("transpose", (a,), {"axes": axes})


def reshape(a, shape):
    return record_op("reshape", (a,), {"shape": tuple(shape)})


def softmax_rows(a, mask=None):
    return record_op("softmax_rows", (a,), {"mask": mask})


def mse_loss(pred, target):
    return record_op("mse_loss", (pred, target))


def cross_entropy_loss(logits, labels, weights=None):
    return record_op("cross_entropy_loss", (logits,), {"labels": labels, "weights": weights})


ACTIVATIONS: dict[str, Callable] = {"tanh": tanh, "sigmoid": sigmoid}


# --------------------------------------------------------------------------
# finite differences


def finite_difference_gradient(
    f: Callable[[dict[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference estimate of the gradient of scalar ``f``.

    ``f`` receives a fresh dict of arrays on every call; the caller's
    arrays are never mutated.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    out = {}
    for name, value in base.items():
        g = np.zeros_like(value)
        flat = value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(base))
            flat[i] = orig - h
            fm = float(f(base))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite evaluation perturbing {name}[{i}]")
            gflat[i] = (fp - fm) / (2.0 * h)
        out[name] = g
    return out


def relative_error(a, b, floor: float = 1e-12) -> float:
    """‖a − b‖ / max(‖a‖, ‖b‖, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
