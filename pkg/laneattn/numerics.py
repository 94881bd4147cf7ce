"""laneattn.numerics

Small dense-tensor library with define-by-run reverse-mode differentiation.

Every op returns a new `Tensor` that remembers its inputs and a closure that
pushes the output gradient back to them. `backward()` walks the resulting DAG
once in reverse topological order. Everything is float64.
"""
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence

import numpy as np

from laneattn.errors import DomainError, ShapeError

EXP_CLAMP = 30.0
RELATIVE_FLOOR = 1e-8

_ELEMENTWISE = ("sigmoid", "tanh", "relu", "exp")


class Tensor:
    """Dense float64 array plus the tape bookkeeping needed for backward."""

    # make numpy operands defer to Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _children: Sequence["Tensor"] = (), _op: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._backward: Callable[[], None] = _noop
        self._prev = tuple(_children)
        self._op = _op

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    @staticmethod
    def zeros(shape) -> "Tensor":
        return Tensor(np.zeros(shape))

    # Arithmetic

    def __add__(self, other):
        other = as_tensor(other)

        def vjp(g):
            if self.requires_grad:
                self.grad += _unbroadcast(g, self.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(g, other.shape)
        return _result(_binary(np.add, self, other), (self, other), "+", vjp)

    def __radd__(self, other):
        return self + other

    def __neg__(self):
        def vjp(g):
            self.grad -= g
        return _result(-self.data, (self,), "neg", vjp)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)

        def vjp(g):
            if self.requires_grad:
                self.grad += _unbroadcast(g * other.data, self.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(g * self.data, other.shape)
        return _result(_binary(np.multiply, self, other), (self, other), "*", vjp)

    def __rmul__(self, other):
        return self * other

    def __pow__(self, exponent: float):
        exponent = float(exponent)
        if exponent < 0 and np.any(self.data == 0.0):
            raise DomainError("negative power of zero")

        def vjp(g):
            self.grad += g * exponent * self.data ** (exponent - 1.0)
        return _result(self.data ** exponent, (self,), f"pow{exponent:g}", vjp)

    def __truediv__(self, other):
        return self * (as_tensor(other) ** -1.0)

    def __rtruediv__(self, other):
        return as_tensor(other) * (self ** -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # Shape plumbing

    def reshape(self, *shape):
        old = self.shape

        def vjp(g):
            self.grad += g.reshape(old)
        return _result(self.data.reshape(*shape), (self,), "reshape", vjp)

    def __getitem__(self, key):
        basic = _is_basic_index(key)

        def vjp(g):
            if basic:
                self.grad[key] += g
            else:
                np.add.at(self.grad, key, g)
        return _result(self.data[key], (self,), "index", vjp)

    def sum(self):
        def vjp(g):
            self.grad += np.ones_like(self.data) * g
        return _result(np.sum(self.data), (self,), "sum", vjp)

    # Nonlinearities

    def sigmoid(self):
        x = self.data
        inside = np.abs(x) <= EXP_CLAMP
        s = 1.0 / (1.0 + np.exp(-np.clip(x, -EXP_CLAMP, EXP_CLAMP)))

        def vjp(g):
            self.grad += g * s * (1.0 - s) * inside
        return _result(s, (self,), "sigmoid", vjp)

    def tanh(self):
        t = np.tanh(self.data)

        def vjp(g):
            self.grad += g * (1.0 - t * t)
        return _result(t, (self,), "tanh", vjp)

    def relu(self):
        mask = self.data > 0

        def vjp(g):
            self.grad += g * mask
        return _result(np.where(mask, self.data, 0.0), (self,), "relu", vjp)

    def exp(self):
        x = self.data
        inside = np.abs(x) <= EXP_CLAMP
        e = np.exp(np.clip(x, -EXP_CLAMP, EXP_CLAMP))

        def vjp(g):
            self.grad += g * e * inside
        return _result(e, (self,), "exp", vjp)

    def log(self):
        if np.any(self.data <= 0.0):
            raise DomainError("log of a non-positive value")

        def vjp(g):
            self.grad += g / self.data
        return _result(np.log(self.data), (self,), "log", vjp)

    def clip_min(self, floor: float):
        keep = self.data >= floor

        def vjp(g):
            self.grad += g * keep
        return _result(np.where(keep, self.data, floor), (self,), "clip_min", vjp)

    def backward(self):
        backward(self)


def _noop():
    pass


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Iterable[Tensor], op: str, vjp: Callable[[np.ndarray], None]) -> Tensor:
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    out = Tensor(data, requires_grad=True, _children=parents, _op=op)
    out._backward = lambda: vjp(out.grad)
    return out


def _binary(op, a: Tensor, b: Tensor) -> np.ndarray:
    try:
        return op(a.data, b.data)
    except ValueError:
        raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}") from None


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis for p in parts)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    # Sum gradients across broadcast dimensions to match shape
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D/2-D operands; 1-D operands act as row/column vectors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D and 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def vjp(g):
        A = a.data.reshape(1, -1) if a.ndim == 1 else a.data
        B = b.data.reshape(-1, 1) if b.ndim == 1 else b.data
        G = g.reshape(A.shape[0], B.shape[1])
        if a.requires_grad:
            a.grad += (G @ B.T).reshape(a.shape)
        if b.requires_grad:
            b.grad += (A.T @ G).reshape(b.shape)
    return _result(a.data @ b.data, (a, b), "@", vjp)


def elementwise(x: Tensor, f: str) -> Tensor:
    if f not in _ELEMENTWISE:
        raise DomainError(f"unsupported elementwise function '{f}'")
    return getattr(as_tensor(x), f)()


def softmax(scores: Tensor) -> Tensor:
    """Stable softmax of a 1-D score vector."""
    scores = as_tensor(scores)
    if scores.ndim != 1:
        raise ShapeError(f"softmax expects a 1-D vector, got {scores.shape}")
    if scores.shape[0] == 0:
        raise DomainError("softmax of an empty score vector")
    shifted = scores.data - np.max(scores.data)
    e = np.exp(shifted)
    y = e / np.sum(e)

    def vjp(g):
        scores.grad += y * (g - np.dot(g, y))
    return _result(y, (scores,), "softmax", vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DomainError("concat of nothing")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    ax = axis % data.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def vjp(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[ax] = slice(lo, hi)
                t.grad += g[tuple(index)]
    return _result(data, tensors, "concat", vjp)


def linearized(value: np.ndarray, x: Tensor, jacobian: Optional[np.ndarray]) -> Tensor:
    """Wrap a value computed off-tape as a function of `x`.

    `jacobian` has shape value.shape + x.shape; backward applies its transpose.
    """
    if jacobian is None or not x.requires_grad:
        return Tensor(value)
    value = np.asarray(value, dtype=np.float64)
    if jacobian.shape != value.shape + x.shape:
        raise ShapeError(f"jacobian shape {jacobian.shape} does not match {value.shape} + {x.shape}")

    def vjp(g):
        x.grad += np.tensordot(g, jacobian, axes=g.ndim)
    return _result(value, (x,), "linearized", vjp)


def _topological_order(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for child in node._prev:
            if id(child) not in seen:
                stack.append((child, False))
    return order


def backward(loss: Tensor, wrt: Optional[Mapping[str, Tensor]] = None) -> Optional[Dict[str, np.ndarray]]:
    """Fill `.grad` of every node reachable from the scalar `loss`.

    With `wrt`, returns the gradients of those leaves by name (zeros for
    leaves the loss does not reach).
    """
    if loss.data.size != 1:
        raise DomainError(f"backward needs a scalar root, got shape {loss.shape}")
    order = _topological_order(loss) if loss.requires_grad else []
    for node in order:
        node.grad = np.zeros_like(node.data)
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
        for node in reversed(order):
            node._backward()
    if wrt is None:
        return None
    reached = {id(n) for n in order}
    return {name: (t.grad.copy() if id(t) in reached else np.zeros_like(t.data)) for name, t in wrt.items()}


def leaves(params: Mapping[str, np.ndarray], requires_grad: bool = True) -> Dict[str, Tensor]:
    """Fresh leaf tensors for one forward pass over a parameter snapshot."""
    return {name: Tensor(value, requires_grad=requires_grad) for name, value in params.items()}


def finite_diff_check(f: Callable[[Mapping[str, Tensor]], Tensor], params: Mapping[str, np.ndarray],
                      h: float = 1e-5, max_entries: Optional[int] = None, seed: int = 0,
                      names: Optional[Iterable[str]] = None) -> Dict[str, float]:
    """Compare backward() against central differences for each parameter tensor.

    Per coordinate the error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8);
    each tensor reports its worst coordinate and key "max" holds the worst tensor.
    `names` restricts the check to those tensors. With `max_entries`, only that
    many randomly chosen coordinates per tensor are perturbed.
    """
    if h <= 0:
        raise DomainError("finite-difference step must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    checked = list(base) if names is None else list(names)
    unknown = [name for name in checked if name not in base]
    if unknown:
        raise DomainError(f"no parameter tensors named {unknown}")
    tape = leaves(base)
    analytic = backward(f(tape), tape)
    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    for name in checked:
        flat_count = base[name].size
        if max_entries is not None and flat_count > max_entries:
            coords = rng.choice(flat_count, size=max_entries, replace=False)
        else:
            coords = np.arange(flat_count)
        a = analytic[name].reshape(-1)[coords]
        c = np.array([_central_difference(f, base, name, int(idx), h) for idx in coords])
        denom = np.maximum(np.maximum(np.abs(a), np.abs(c)), RELATIVE_FLOOR)
        errors[name] = float(np.max(np.abs(a - c) / denom)) if len(coords) else 0.0
    errors["max"] = max(errors.values()) if errors else 0.0
    return errors


def numeric_gradient(f: Callable[[Mapping[str, Tensor]], Tensor], params: Mapping[str, np.ndarray], name: str,
                     h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of f with respect to one parameter tensor."""
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    out = np.array([_central_difference(f, base, name, j, h) for j in range(base[name].size)])
    return out.reshape(base[name].shape)


def _central_difference(f, base, name, flat_index, h):
    values = dict(base)
    shifted = base[name].copy()
    flat = shifted.reshape(-1)
    original = flat[flat_index]
    flat[flat_index] = original + h
    values[name] = shifted
    up = f(leaves(values, requires_grad=False)).item()
    flat[flat_index] = original - h
    down = f(leaves(values, requires_grad=False)).item()
    return (up - down) / (2.0 * h)
