"""Dense float64 arrays with reverse-mode gradients, plus the Adam update rule.

All model state is carried by `Tensor`, a thin wrapper around a C-order
float64 ndarray that records enough of the computation graph to push
gradients back to named parameters. The gradient mechanism is verified
against central finite differences (see `finite_difference_check`), which
is the contract; the tape itself is an implementation detail.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, ValidationError

Array = np.ndarray


def _as_array(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    # ascontiguousarray would promote 0-d scalars to shape (1,), so gate it
    if not a.flags["C_CONTIGUOUS"]:
        a = np.ascontiguousarray(a)
    return a


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """Node in a dynamically built computation graph.

    `data` is always float64 and row-major. Derived tensors keep references
    to the parents that require gradients; `backward()` walks the graph in
    reverse topological order and accumulates into `.grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fns")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple = ()
        self._grad_fns: tuple = ()

    @classmethod
    def _from_op(cls, data: Array, parents, grad_fns) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        tracked = [(p, f) for p, f in zip(parents, grad_fns) if p.requires_grad]
        out.requires_grad = bool(tracked)
        out._parents = tuple(p for p, _ in tracked)
        out._grad_fns = tuple(f for _, f in tracked)
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ---- graph traversal ----

    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's `.grad`."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if seed is None else _as_array(seed)
        for node in reversed(topo):
            g = node.grad
            if g is None:
                continue
            for p, fn in zip(node._parents, node._grad_fns):
                contrib = fn(g)
                p.grad = contrib if p.grad is None else p.grad + contrib

    # ---- arithmetic ----

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), (lambda g: -g,))

    def __matmul__(self, other):
        return matmul(self, other)

    # ---- shape ops ----

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return Tensor._from_op(self.data.reshape(shape), (self,),
                               (lambda g: g.reshape(old),))

    # ---- reductions ----

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def back(g, axis=axis, keepdims=keepdims, shape=shape):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape)

        return Tensor._from_op(np.asarray(data), (self,), (back,))

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.mean(axis=axis, keepdims=keepdims)
        shape = self.data.shape
        if axis is None:
            count = self.data.size
        else:
            count = self.data.size // max(data.size, 1)

        def back(g, axis=axis, keepdims=keepdims, shape=shape, count=count):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape) / count

        return Tensor._from_op(np.asarray(data), (self,), (back,))

    # ---- elementwise nonlinearities ----

    def abs(self) -> "Tensor":
        s = np.sign(self.data)
        return Tensor._from_op(np.abs(self.data), (self,), (lambda g: g * s,))

    def square(self) -> "Tensor":
        d = self.data
        return Tensor._from_op(d * d, (self,), (lambda g: g * (2.0 * d),))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)

        def back(g, out=out):
            # subgradient 0 at exactly 0 so norms of zero vectors stay clean
            inv = np.divide(0.5, out, out=np.zeros_like(out), where=out > 0)
            return g * inv

        return Tensor._from_op(out, (self,), (back,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor._from_op(out, (self,), (lambda g: g * (1.0 - out * out),))

    def sigmoid(self) -> "Tensor":
        out = _sigmoid(self.data)
        return Tensor._from_op(out, (self,), (lambda g: g * out * (1.0 - out),))

    def silu(self) -> "Tensor":
        s = _sigmoid(self.data)
        d = self.data
        return Tensor._from_op(d * s, (self,),
                               (lambda g: g * s * (1.0 + d * (1.0 - s)),))


def _sigmoid(x: Array) -> Array:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    sa, sb = a.data.shape, b.data.shape
    return Tensor._from_op(a.data + b.data, (a, b),
                           (lambda g: _unbroadcast(g, sa),
                            lambda g: _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    sa, sb = a.data.shape, b.data.shape
    return Tensor._from_op(a.data - b.data, (a, b),
                           (lambda g: _unbroadcast(g, sa),
                            lambda g: _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    da, db = a.data, b.data
    return Tensor._from_op(da * db, (a, b),
                           (lambda g: _unbroadcast(g * db, da.shape),
                            lambda g: _unbroadcast(g * da, db.shape)))


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    da, db = a.data, b.data
    return Tensor._from_op(da / db, (a, b),
                           (lambda g: _unbroadcast(g / db, da.shape),
                            lambda g: _unbroadcast(-g * da / (db * db), db.shape)))


def matmul(a, b) -> Tensor:
    """Standard 2-D matrix product with deterministic summation."""
    a, b = _coerce(a), _coerce(b)
    da, db = a.data, b.data
    if da.ndim != 2 or db.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {da.shape} @ {db.shape}")
    if da.shape[1] != db.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {da.shape} @ {db.shape}")
    return Tensor._from_op(da @ db, (a, b),
                           (lambda g: g @ db.T,
                            lambda g: da.T @ g))


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def make_back(i):
        lo, hi = offsets[i], offsets[i + 1]

        def back(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return back

    return Tensor._from_op(out, tuple(tensors),
                           tuple(make_back(i) for i in range(len(tensors))))


def slice0(x, start: int, stop: int = None) -> Tensor:
    """Slice along the leading axis, differentiable (gradient scatters back)."""
    x = _coerce(x)
    data = x.data[start:stop]
    shape = x.data.shape

    def back(g, start=start, stop=stop, shape=shape):
        out = np.zeros(shape)
        out[start:stop] = g
        return out

    return Tensor._from_op(data, (x,), (back,))


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def make_back(i):
        def back(g):
            return np.take(g, i, axis=axis)

        return back

    return Tensor._from_op(out, tuple(tensors),
                           tuple(make_back(i) for i in range(len(tensors))))


# ---------------------------------------------------------------------------
# parameters, gradients, optimizer
# ---------------------------------------------------------------------------


class ParamSet(dict):
    """Insertion-ordered map of parameter name -> Tensor (requires_grad)."""

    def add(self, name: str, values) -> Tensor:
        if name in self:
            raise ValidationError(f"duplicate parameter name {name!r}")
        t = Tensor(values, requires_grad=True)
        self[name] = t
        return t

    def values_copy(self) -> dict[str, Array]:
        return {name: p.data.copy() for name, p in self.items()}

    def load_values(self, values: dict) -> None:
        for name, p in self.items():
            v = _as_array(values[name])
            if v.shape != p.data.shape:
                raise DimensionError(
                    f"parameter {name!r} expects shape {p.data.shape}, got {v.shape}")
            p.data = v.copy()

    def n_values(self) -> int:
        return sum(p.data.size for p in self.values())


def grad(loss_fn, params: ParamSet) -> dict[str, Array]:
    """Evaluate `loss_fn(params)` and return d(loss)/d(param) per name.

    `loss_fn` must be deterministic for fixed params (any dropout masks
    fixed inside the closure) and produce a scalar Tensor.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn(params)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ValidationError("loss_fn must return a scalar Tensor")
    if not np.isfinite(loss.data):
        bad = [n for n, p in params.items() if not np.all(np.isfinite(p.data))]
        hint = f" (non-finite parameters: {', '.join(bad)})" if bad else ""
        raise NumericError(f"loss is non-finite{hint}")
    loss.backward()
    return {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


@dataclass
class AdamState:
    """First/second moment accumulators plus step counter and hyperparams."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: ParamSet, lr: float = 1e-4) -> "AdamState":
        return cls(m={n: np.zeros_like(p.data) for n, p in params.items()},
                   v={n: np.zeros_like(p.data) for n, p in params.items()},
                   t=0, lr=lr)


def adam_step(params: ParamSet, grads: dict, state: AdamState):
    """One Adam update with bias correction; mutates params and state."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {g.shape}, expected {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    return float(np.sqrt(total))


def clip_grads_(grads: dict, max_norm: float) -> float:
    """Scale grads in place so the global norm is at most max_norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def finite_difference_check(loss_fn, params: ParamSet, h: float = 1e-5) -> dict:
    """Max relative error between analytic and central-difference gradients.

    Returns {param name: max over elements of |analytic - numeric| /
    (|analytic| + 1e-8)}. The loss closure is evaluated 2*n_values times,
    so keep instances small.
    """
    analytic = grad(loss_fn, params)
    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn(params).data.item()
            flat[i] = orig - h
            f_minus = loss_fn(params).data.item()
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * h)
        a = analytic[name].reshape(-1)
        rel = np.abs(a - numeric) / (np.abs(a) + 1e-8)
        report[name] = float(rel.max()) if rel.size else 0.0
    return report
