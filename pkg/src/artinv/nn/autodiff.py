"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations needed by the models in this package are provided.
Graphs are built eagerly; calling ``backward()`` on a scalar Tensor
accumulates gradients into every reachable Tensor with ``requires_grad``.
"""

import numpy as np

__all__ = [
    "Tensor", "as_tensor", "concat", "stack", "pad_edge", "reverse_padded",
    "tanh", "sigmoid", "relu", "sqrt", "absolute",
]


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        # Graph edges are only kept where a gradient can flow.
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return Tensor(self.data)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        topo, seen = [], set()

        def visit(t):
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    topo.append(node)
                    continue
                if id(node) in seen or not node.requires_grad:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    stack.append((p, False))

        visit(self)
        self.accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        out = Tensor(self.data + other.data, parents=(self, other))
        if out.requires_grad:
            def bwd(g):
                if self.requires_grad:
                    self.accumulate(_unbroadcast(g, self.data.shape))
                if other.requires_grad:
                    other.accumulate(_unbroadcast(g, other.data.shape))
            out._backward = bwd
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self.accumulate(-g)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        out = Tensor(self.data * other.data, parents=(self, other))
        if out.requires_grad:
            def bwd(g):
                if self.requires_grad:
                    self.accumulate(_unbroadcast(g * other.data, self.data.shape))
                if other.requires_grad:
                    other.accumulate(_unbroadcast(g * self.data, other.data.shape))
            out._backward = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other, self.dtype)
        out = Tensor(self.data / other.data, parents=(self, other))
        if out.requires_grad:
            def bwd(g):
                if self.requires_grad:
                    self.accumulate(_unbroadcast(g / other.data, self.data.shape))
                if other.requires_grad:
                    other.accumulate(_unbroadcast(
                        -g * self.data / (other.data * other.data), other.data.shape))
            out._backward = bwd
        return out

    def __matmul__(self, other):
        """Matrix product; the right operand must be 2-D."""
        other = as_tensor(other, self.dtype)
        assert other.ndim == 2
        out = Tensor(self.data @ other.data, parents=(self, other))
        if out.requires_grad:
            def bwd(g):
                if self.requires_grad:
                    self.accumulate(g @ other.data.T)
                if other.requires_grad:
                    a2 = self.data.reshape(-1, self.data.shape[-1])
                    g2 = g.reshape(-1, g.shape[-1])
                    other.accumulate(a2.T @ g2)
            out._backward = bwd
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], parents=(self,))
        if out.requires_grad:
            def bwd(g):
                full = np.zeros_like(self.data)
                np.add.at(full, key, g)
                self.accumulate(full)
            out._backward = bwd
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self.accumulate(g.reshape(self.data.shape))
        return out

    # ---- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))
        if out.requires_grad:
            def bwd(g):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self.accumulate(np.broadcast_to(g, self.data.shape).copy())
            out._backward = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


# ---- elementwise functions ----------------------------------------------

def tanh(x):
    y = np.tanh(x.data)
    out = Tensor(y, parents=(x,))
    if out.requires_grad:
        out._backward = lambda g: x.accumulate(g * (1.0 - y * y))
    return out


def sigmoid(x):
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y, parents=(x,))
    if out.requires_grad:
        out._backward = lambda g: x.accumulate(g * y * (1.0 - y))
    return out


def relu(x):
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0), parents=(x,))
    if out.requires_grad:
        out._backward = lambda g: x.accumulate(g * mask)
    return out


def sqrt(x):
    y = np.sqrt(x.data)
    out = Tensor(y, parents=(x,))
    if out.requires_grad:
        out._backward = lambda g: x.accumulate(g * (0.5 / y))
    return out


def absolute(x):
    s = np.sign(x.data)
    out = Tensor(np.abs(x.data), parents=(x,))
    if out.requires_grad:
        out._backward = lambda g: x.accumulate(g * s)
    return out


# ---- structural ops ------------------------------------------------------

def concat(tensors, axis=-1):
    tensors = [t if isinstance(t, Tensor) else as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 parents=tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def bwd(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    t.accumulate(piece)
        out._backward = bwd
    return out


def stack(tensors, axis=1):
    tensors = [t if isinstance(t, Tensor) else as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis),
                 parents=tuple(tensors))
    if out.requires_grad:
        def bwd(g):
            pieces = np.split(g, len(tensors), axis=axis)
            for t, piece in zip(tensors, pieces):
                if t.requires_grad:
                    t.accumulate(np.squeeze(piece, axis=axis))
        out._backward = bwd
    return out


def pad_edge(x, n, axis=1):
    """Edge-replicating pad of ``n`` elements on both ends of ``axis``."""
    if n == 0:
        return x
    pads = [(0, 0)] * x.ndim
    pads[axis] = (n, n)
    out = Tensor(np.pad(x.data, pads, mode="edge"), parents=(x,))
    if out.requires_grad:
        T = x.data.shape[axis]

        def take(g, sl):
            idx = [slice(None)] * g.ndim
            idx[axis] = sl
            return g[tuple(idx)]

        def bwd(g):
            core = take(g, slice(n, n + T)).copy()
            first = take(core, slice(0, 1))
            first += take(g, slice(0, n)).sum(axis=axis, keepdims=True)
            last = take(core, slice(T - 1, T))
            last += take(g, slice(n + T, None)).sum(axis=axis, keepdims=True)
            x.accumulate(core)
        out._backward = bwd
    return out


def reverse_padded(x, lengths):
    """Reverse a (B,T,D) batch along time, each row within its valid length.

    Padding frames (index >= length) stay in place, so a forward pass over
    the reversed sequence never mixes padding into valid frames.
    """
    B, T = x.data.shape[0], x.data.shape[1]
    idx = np.tile(np.arange(T), (B, 1))
    for b, L in enumerate(lengths):
        idx[b, :L] = np.arange(L - 1, -1, -1)
    rows = np.arange(B)[:, None]
    out = Tensor(x.data[rows, idx], parents=(x,))
    if out.requires_grad:
        # the permutation is an involution: applying it twice is identity
        out._backward = lambda g: x.accumulate(g[rows, idx])
    return out
