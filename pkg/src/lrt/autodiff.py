"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray plus the closure needed to push gradients to its
parents. backward() topologically sorts the graph reachable from a scalar
root and runs each node's local rule once, accumulating into .grad so shared
subexpressions contribute additively.

Only the operations the reasoning model needs are provided. Each op's
gradient is validated against central finite differences in the test suite;
keep any new op's backward rule covered the same way before relying on it.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible for the attempted operation."""


def _as_array(value, dtype):
    arr = np.asarray(value, dtype=dtype)
    return arr


class Tensor:
    """A node in the computation graph.

    data     : the ndarray value
    grad     : accumulated gradient, same shape as data (None until backward)
    requires_grad : whether gradients flow into this node
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None,
                 name=None, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in parents
        )
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def _accumulate(self, delta):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, "
                             f"got shape {self.shape}")
        return float(self.data.reshape(()))

    # ---- graph construction helpers ----

    def _unary(self, out_data, bwd):
        return Tensor(out_data, parents=(self,), backward=bwd)

    # ---- arithmetic ----

    def __add__(self, other):
        other = _wrap(other, self.dtype)
        out_data = self.data + other.data
        a, b = self, other

        def bwd(out):
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad, b.shape))

        return Tensor(out_data, parents=(a, b), backward=bwd)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bwd(out):
            if a.requires_grad:
                a._accumulate(-out.grad)

        return self._unary(-self.data, bwd)

    def __sub__(self, other):
        return self + (-_wrap(other, self.dtype))

    def __rsub__(self, other):
        return _wrap(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = _wrap(other, self.dtype)
        out_data = self.data * other.data
        a, b = self, other

        def bwd(out):
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

        return Tensor(out_data, parents=(a, b), backward=bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other, self.dtype)
        out_data = self.data / other.data
        a, b = self, other

        def bwd(out):
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

        return Tensor(out_data, parents=(a, b), backward=bwd)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self
        out_data = self.data ** exponent

        def bwd(out):
            if a.requires_grad:
                a._accumulate(out.grad * exponent * a.data ** (exponent - 1))

        return self._unary(out_data, bwd)

    def __matmul__(self, other):
        return matmul(self, other)

    # ---- structural ----

    def transpose(self, *axes):
        a = self
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)

        def bwd(out):
            if a.requires_grad:
                a._accumulate(out.grad.transpose(inverse))

        return self._unary(self.data.transpose(axes), bwd)

    @property
    def T(self):
        return self.transpose()

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old_shape = self.shape

        def bwd(out):
            if a.requires_grad:
                a._accumulate(out.grad.reshape(old_shape))

        return self._unary(self.data.reshape(shape), bwd)

    def __getitem__(self, key):
        a = self
        out_data = self.data[key]

        def bwd(out):
            if a.requires_grad:
                delta = np.zeros_like(a.data)
                np.add.at(delta, key, out.grad)
                a._accumulate(delta)

        return self._unary(out_data, bwd)

    # ---- reductions ----

    def sum(self, axis=None, keepdims=False):
        a = self
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(out):
            if not a.requires_grad:
                return
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

        return self._unary(out_data, bwd)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            scale = 1.0 / self.data.size
        else:
            scale = 1.0 / self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * scale

    def abs(self):
        a = self

        def bwd(out):
            if a.requires_grad:
                a._accumulate(out.grad * np.sign(a.data))

        return self._unary(np.abs(self.data), bwd)

    def detach(self):
        """Same value, no graph: gradients never flow past this node."""
        return Tensor(self.data.copy())

    # ---- backward ----

    def backward(self):
        """Backpropagate from this node; it must hold a scalar.

        Gradients accumulate into .grad of every reachable node with
        requires_grad set. Call reset_grads (or zero .grad) between distinct
        loss evaluations; accumulation across calls is the semantics.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() needs a scalar root, got shape {self.shape}"
            )
        order = []
        seen = set()
        stack = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.requires_grad:
                node._backward(node)


def _wrap(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _unbroadcast(grad, shape):
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D operands, or batched with leading batch dims.

    The contracted dimensions must agree; mismatches raise ShapeError naming
    both shapes. 1-D operands are not supported (keeps the gradient rule
    simple; reshape to a row or column first).
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape} @ {b.shape}"
        )
    try:
        out_data = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul batch dims incompatible: {a.shape} @ {b.shape}") from exc

    def bwd(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad @ _swap_last(b.data), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(_swap_last(a.data) @ out.grad, b.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def _swap_last(arr):
    return np.swapaxes(arr, -1, -2)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    a = x

    def bwd(out):
        if a.requires_grad:
            g = out.grad
            dot = (g * p).sum(axis=axis, keepdims=True)
            a._accumulate(p * (g - dot))

    return Tensor(p, parents=(a,), backward=bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then affine.

    gain and bias are 1-D with length x.shape[-1]. Fused backward rule rather
    than a composition of primitives; cheaper and one code path to test.
    """
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm affine params need shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def bwd(out):
        g = out.grad
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            term = gx - gx.mean(axis=-1, keepdims=True) \
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(term * inv)

    return Tensor(out_data, parents=(x, gain, bias), backward=bwd)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    u = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(u)
    out_data = 0.5 * x.data * (1.0 + t)
    a = x

    def bwd(out):
        if a.requires_grad:
            du = _GELU_C * (1.0 + 3 * 0.044715 * a.data ** 2)
            grad = 0.5 * (1.0 + t) + 0.5 * a.data * (1.0 - t * t) * du
            a._accumulate(out.grad * grad)

    return Tensor(out_data, parents=(a,), backward=bwd)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, computed stably for large |x|."""
    data = x.data
    out_data = np.where(data >= 0,
                        1.0 / (1.0 + np.exp(-np.clip(data, 0, None))),
                        np.exp(np.clip(data, None, 0)) / (1.0 + np.exp(np.clip(data, None, 0))))
    a = x

    def bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(a,), backward=bwd)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    a = x

    def bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * (1.0 - t * t))

    return Tensor(t, parents=(a,), backward=bwd)


def log(x: Tensor) -> Tensor:
    a = x

    def bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad / a.data)

    return Tensor(np.log(x.data), parents=(a,), backward=bwd)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)
    a = x

    def bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * out_data)

    return Tensor(out_data, parents=(a,), backward=bwd)


def concat(tensors, axis=-1) -> Tensor:
    """Concatenate along `axis`; backward splits the gradient."""
    tensors = tuple(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(out):
        pieces = np.split(out.grad, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor(out_data, parents=tensors, backward=bwd)


def gather_rows(table: Tensor, indices) -> Tensor:
    """Select rows of a 2-D table by integer index (embedding lookup)."""
    idx = np.asarray(indices)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D table, got {table.shape}")
    out_data = table.data[idx]
    a = table

    def bwd(out):
        if a.requires_grad:
            delta = np.zeros_like(a.data)
            np.add.at(delta, idx, out.grad)
            a._accumulate(delta)

    return Tensor(out_data, parents=(a,), backward=bwd)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits).

    logits: [..., C]; targets: integer array broadcastable to logits.shape[:-1].
    Fused log-softmax keeps the backward rule exact for large logits.
    """
    idx = np.asarray(targets)
    if idx.shape != logits.shape[:-1]:
        raise ShapeError(
            f"targets shape {idx.shape} does not match logits {logits.shape}"
        )
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_p = shifted - log_z
    picked = np.take_along_axis(log_p, idx[..., None], axis=-1)[..., 0]
    out_data = -picked.mean()
    n = idx.size
    a = logits

    def bwd(out):
        if a.requires_grad:
            p = np.exp(log_p)
            one_hot = np.zeros_like(p)
            np.put_along_axis(one_hot, idx[..., None], 1.0, axis=-1)
            a._accumulate(out.grad * (p - one_hot) / n)

    return Tensor(out_data, parents=(a,), backward=bwd)


class ParamRegistry:
    """Ordered, named collection of trainable tensors.

    Names are unique; insertion order is the canonical order used by the
    optimizer and the checkpoint format, so it must stay deterministic.
    """

    def __init__(self):
        self._params = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def reset_grads(self):
        for t in self._params.values():
            t.grad = None

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self):
        """name -> ndarray view, in registry order."""
        return {name: t.data for name, t in self._params.items()}

    def load_arrays(self, arrays: dict):
        """Overwrite parameter values in place from name -> ndarray.

        The name sets and shapes must match exactly.
        """
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(
                f"parameter names mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, t in self._params.items():
            arr = np.asarray(arrays[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"parameter {name!r}: shape {arr.shape} != expected {t.data.shape}"
                )
            t.data[...] = arr
