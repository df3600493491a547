"""Dense float64 tensors with eager reverse-mode automatic differentiation.

The op set is deliberately small: just enough to express MLP encoders,
similarity-based contrastive objectives, and the squared-error / cross-entropy
losses built on top of them. Everything is float64 and single-threaded;
gradients accumulate in a fixed reverse-topological order, so identical
graphs always produce bit-identical values and gradients.

Subgradient conventions (relevant when checking gradients near kinks):
relu'(0) = 0, clamp' is zero outside the interval *and at its boundaries*,
and the L2 norm has gradient 0 at the origin.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, GraphStateError, ShapeError

__all__ = [
    "Tensor",
    "affine",
    "backward",
    "concat_last",
    "dot",
    "grad_check",
    "matmul",
    "softmax_last",
    "zero_grads",
]


class Tensor:
    """Array node in a computation graph.

    Leaves are built directly (``Tensor(data, requires_grad=True)`` for
    trainables); ops return derived tensors that remember their parents.
    ``backward`` on a scalar result fills ``grad`` on every requires-grad
    leaf reachable from it, summing over all uses.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_spent")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._spent = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other)
        _require_same_shape("add", self, other)
        out = _node(self.data + other.data, (self, other))
        if out._parents:
            def back(g: np.ndarray) -> None:
                _accumulate(self, g)
                _accumulate(other, g)
            out._backward = back
        return out

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = _as_tensor(other)
        _require_same_shape("sub", self, other)
        out = _node(self.data - other.data, (self, other))
        if out._parents:
            def back(g: np.ndarray) -> None:
                _accumulate(self, g)
                _accumulate(other, -g)
            out._backward = back
        return out

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            c = float(other)
            out = _node(self.data * c, (self,))
            if out._parents:
                out._backward = lambda g: _accumulate(self, g * c)
            return out
        other = _as_tensor(other)
        # elementwise on equal shapes; a size-1 operand acts as a scalar factor
        if self.shape != other.shape and self.data.size != 1 and other.data.size != 1:
            raise ShapeError(f"mul: incompatible shapes {self.shape} and {other.shape}")
        a, b = self, other
        out = _node(a.data * b.data, (a, b))
        if out._parents:
            def back(g: np.ndarray) -> None:
                _accumulate(a, _reduce_to(g * b.data, a.shape))
                _accumulate(b, _reduce_to(g * a.data, b.shape))
            out._backward = back
        return out

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    # -- elementwise --------------------------------------------------------

    def relu(self) -> "Tensor":
        out = _node(np.maximum(self.data, 0.0), (self,))
        if out._parents:
            mask = self.data > 0.0
            out._backward = lambda g: _accumulate(self, g * mask)
        return out

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        out = _node(y, (self,))
        if out._parents:
            out._backward = lambda g: _accumulate(self, g * (1.0 - y * y))
        return out

    def square(self) -> "Tensor":
        out = _node(self.data * self.data, (self,))
        if out._parents:
            out._backward = lambda g: _accumulate(self, g * 2.0 * self.data)
        return out

    def sqrt(self) -> "Tensor":
        if np.any(self.data <= 0.0):
            raise DomainError("sqrt: input must be strictly positive")
        y = np.sqrt(self.data)
        out = _node(y, (self,))
        if out._parents:
            out._backward = lambda g: _accumulate(self, g * 0.5 / y)
        return out

    def log(self) -> "Tensor":
        if np.any(self.data <= 0.0):
            raise DomainError("log: input must be strictly positive")
        out = _node(np.log(self.data), (self,))
        if out._parents:
            out._backward = lambda g: _accumulate(self, g / self.data)
        return out

    def reciprocal(self) -> "Tensor":
        if np.any(self.data == 0.0):
            raise DomainError("reciprocal: input must be nonzero")
        y = 1.0 / self.data
        out = _node(y, (self,))
        if out._parents:
            out._backward = lambda g: _accumulate(self, -g * y * y)
        return out

    def clamp(self, lo: float, hi: float) -> "Tensor":
        if not lo < hi:
            raise DomainError(f"clamp: lo {lo} must be < hi {hi}")
        out = _node(np.clip(self.data, lo, hi), (self,))
        if out._parents:
            # pass-through strictly inside [lo, hi]; zero at and beyond the edges
            mask = (self.data > lo) & (self.data < hi)
            out._backward = lambda g: _accumulate(self, g * mask)
        return out

    # -- reductions & structure ----------------------------------------------

    def sum(self, axis: int | None = None) -> "Tensor":
        out = _node(self.data.sum(axis=axis), (self,))
        if out._parents:
            def back(g: np.ndarray) -> None:
                _accumulate(self, _spread(g, self.shape, axis))
            out._backward = back
        return out

    def mean(self, axis: int | None = None) -> "Tensor":
        n = self.data.size if axis is None else self.shape[axis]
        out = _node(self.data.mean(axis=axis), (self,))
        if out._parents:
            def back(g: np.ndarray) -> None:
                _accumulate(self, _spread(g, self.shape, axis) / n)
            out._backward = back
        return out

    def norm(self) -> "Tensor":
        """Euclidean norm of a 1-D vector (scalar output)."""
        if self.data.ndim != 1:
            raise ShapeError(f"norm: expected a 1-D vector, got shape {self.shape}")
        value = float(np.sqrt(np.dot(self.data, self.data)))
        out = _node(np.asarray(value), (self,))
        if out._parents:
            def back(g: np.ndarray) -> None:
                if value == 0.0:
                    _accumulate(self, np.zeros_like(self.data))
                else:
                    _accumulate(self, (float(g) / value) * self.data)
            out._backward = back
        return out

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape, dtype=np.int64)) != self.data.size:
            raise ShapeError(f"reshape: cannot view {self.shape} as {shape}")
        out = _node(self.data.reshape(shape), (self,))
        if out._parents:
            out._backward = lambda g: _accumulate(self, g.reshape(self.shape))
        return out

    def row(self, i: int) -> "Tensor":
        """Select row ``i`` of a 2-D tensor as a 1-D vector."""
        if self.data.ndim != 2:
            raise ShapeError(f"row: expected a 2-D tensor, got shape {self.shape}")
        if not 0 <= i < self.shape[0]:
            raise ShapeError(f"row: index {i} out of range for {self.shape[0]} rows")
        out = _node(self.data[i].copy(), (self,))
        if out._parents:
            def back(g: np.ndarray) -> None:
                full = np.zeros_like(self.data)
                full[i] = g
                _accumulate(self, full)
            out._backward = back
        return out

    def frame(self, t: int) -> "Tensor":
        """Select time step ``t`` of a 3-D (batch, time, feature) tensor."""
        if self.data.ndim != 3:
            raise ShapeError(f"frame: expected a 3-D tensor, got shape {self.shape}")
        if not 0 <= t < self.shape[1]:
            raise ShapeError(f"frame: index {t} out of range for {self.shape[1]} steps")
        out = _node(self.data[:, t, :].copy(), (self,))
        if out._parents:
            def back(g: np.ndarray) -> None:
                full = np.zeros_like(self.data)
                full[:, t, :] = g
                _accumulate(self, full)
            out._backward = back
        return out

    def segment(self, start: int, stop: int) -> "Tensor":
        """Contiguous slice [start, stop) of a 1-D vector."""
        if self.data.ndim != 1:
            raise ShapeError(f"segment: expected a 1-D vector, got shape {self.shape}")
        if not 0 <= start <= stop <= self.shape[0]:
            raise ShapeError(f"segment: [{start}, {stop}) out of range for length {self.shape[0]}")
        out = _node(self.data[start:stop].copy(), (self,))
        if out._parents:
            def back(g: np.ndarray) -> None:
                full = np.zeros_like(self.data)
                full[start:stop] = g
                _accumulate(self, full)
            out._backward = back
        return out


# -- multi-argument ops -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product a @ b."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    out = _node(a.data @ b.data, (a, b))
    if out._parents:
        def back(g: np.ndarray) -> None:
            _accumulate(a, g @ b.data.T)
            _accumulate(b, a.data.T @ g)
        out._backward = back
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias broadcast across rows."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"affine: expected 2-D input/weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: input width {x.shape[1]} != weight rows {w.shape[0]}")
    if b.data.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ShapeError(f"affine: bias shape {b.shape} != output width ({w.shape[1]},)")
    out = _node(x.data @ w.data + b.data, (x, w, b))
    if out._parents:
        def back(g: np.ndarray) -> None:
            _accumulate(x, g @ w.data.T)
            _accumulate(w, x.data.T @ g)
            _accumulate(b, g.sum(axis=0))
        out._backward = back
    return out


def dot(u: Tensor, v: Tensor) -> Tensor:
    """Inner product of two equal-length 1-D vectors (scalar output)."""
    if u.data.ndim != 1 or v.data.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"dot: expected equal-length vectors, got {u.shape} and {v.shape}")
    out = _node(np.asarray(float(np.dot(u.data, v.data))), (u, v))
    if out._parents:
        def back(g: np.ndarray) -> None:
            _accumulate(u, float(g) * v.data)
            _accumulate(v, float(g) * u.data)
        out._backward = back
    return out


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate tensors along the last axis."""
    if not parts:
        raise ShapeError("concat_last: need at least one tensor")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.data.ndim != parts[0].data.ndim or p.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last: leading dims differ, {parts[0].shape} vs {p.shape}"
            )
    widths = [p.shape[-1] for p in parts]
    out = _node(np.concatenate([p.data for p in parts], axis=-1), tuple(parts))
    if out._parents:
        offsets = np.cumsum([0] + widths)
        def back(g: np.ndarray) -> None:
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _accumulate(p, g[..., lo:hi])
        out._backward = back
    return out


def softmax_last(t: Tensor) -> Tensor:
    """Softmax over the last axis, computed with the usual max-shift."""
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = _node(s, (t,))
    if out._parents:
        def back(g: np.ndarray) -> None:
            inner = (g * s).sum(axis=-1, keepdims=True)
            _accumulate(t, s * (g - inner))
        out._backward = back
    return out


# -- backward pass ------------------------------------------------------------


def backward(root: Tensor) -> None:
    """Backpropagate from a scalar root, filling grads on requires-grad leaves.

    Each graph may be walked once; a second call on the same root raises
    ``GraphStateError``. Leaves are reusable across graphs, and their grads
    accumulate until cleared (see ``zero_grads``).
    """
    if root.data.size != 1:
        raise ValueError(f"backward: root must be a scalar, got shape {root.shape}")
    if root._spent:
        raise GraphStateError("backward: graph already consumed by a previous call")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
            node._spent = True
    root._spent = True


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# -- numerical gradient checking -----------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, h: float = 1e-6) -> float:
    """Max relative error between ``f``'s analytic gradient and central differences.

    Per coordinate the error is |analytic - numeric| / max(1, |analytic|);
    the largest over all coordinates of ``point`` is returned. ``f`` must
    build a fresh scalar graph from its argument on every call.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError(f"grad_check: step {h} outside [1e-7, 1e-4]")
    base = np.array(point.data, dtype=np.float64)

    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("grad_check: f must return a scalar tensor")
    backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    worst = 0.0
    flat = base.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        f_plus = f(Tensor(base.copy())).item()
        flat[k] = orig - h
        f_minus = f(Tensor(base.copy())).item()
        flat[k] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = float(analytic.reshape(-1)[k])
        err = abs(a - numeric) / max(1.0, abs(a))
        if err > worst:
            worst = err
    return worst


# -- internals ------------------------------------------------------------------


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _node(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _spread(g: np.ndarray, shape: tuple[int, ...], axis: int | None) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
