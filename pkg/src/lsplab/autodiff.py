"""Reverse-mode automatic differentiation on numpy arrays.

The engine is deliberately small: a Tensor wraps a float64 numpy array and
remembers the operation that produced it, so a forward pass builds an
expression graph in construction order. ``backward`` walks that graph once in
reverse topological order and accumulates vector-Jacobian products into
``.grad`` buffers. Everything is eager and deterministic; there is no
broadcasting cleverness beyond what the implemented ops need, no GPU path and
no sparsity.

Because gradients of gradients are required downstream (losses contain the
spatial gradient of a network as a first-class quantity), that spatial
gradient is assembled analytically out of ordinary ops by the model code
rather than by re-taping the tape; this module only has to provide correct
first-order vector-Jacobian products for its primitives.

The module also hosts the Adam optimizer and the exponential learning-rate
schedule used by every training loop in the package.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class AutodiffError(RuntimeError):
    """Raised for malformed graph use or non-finite values during backward."""


def _as_array(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.astype(np.float64, copy=False)
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # Extra leading axes were created by broadcasting: sum them away.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    # Axes of size 1 were stretched: sum back with keepdims.
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Node of the expression graph: a float64 array plus backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_id")

    _counter = 0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _op: str = "leaf"):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = None
        self._op = _op
        Tensor._counter += 1
        self._id = Tensor._counter

    # -- conveniences -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = self.name or self._op
        return f"Tensor({tag}, shape={self.data.shape}, id={self._id})"

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- graph construction helpers ----------------------------------------

    @staticmethod
    def _make(data, parents, op, backward):
        req = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=req, _parents=parents if req else (), _op=op)
        if req:
            out._backward = backward
        return out

    # -- elementwise arithmetic --------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data + other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._make(out_data, (self, other), "add", bw)

    __radd__ = __add__

    def __neg__(self):
        def bw(g):
            self._accumulate(-g)
        return Tensor._make(-self.data, (self,), "neg", bw)

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data - other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.data.shape))

        return Tensor._make(out_data, (self, other), "sub", bw)

    def __rsub__(self, other):
        return Tensor(other) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data * other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._make(out_data, (self, other), "mul", bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data / other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * self.data / other.data ** 2,
                                               other.data.shape))

        return Tensor._make(out_data, (self, other), "div", bw)

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise AutodiffError("only constant exponents are supported")
        c = float(exponent)
        out_data = self.data ** c

        def bw(g):
            self._accumulate(g * c * self.data ** (c - 1.0))

        return Tensor._make(out_data, (self,), f"pow{c}", bw)

    # -- elementwise functions ---------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def bw(g):
            self._accumulate(g * out_data)

        return Tensor._make(out_data, (self,), "exp", bw)

    def log(self):
        def bw(g):
            self._accumulate(g / self.data)
        return Tensor._make(np.log(self.data), (self,), "log", bw)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def bw(g):
            self._accumulate(g * 0.5 / out_data)

        return Tensor._make(out_data, (self,), "sqrt", bw)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bw(g):
            self._accumulate(g * (1.0 - out_data ** 2))

        return Tensor._make(out_data, (self,), "tanh", bw)

    def sigmoid(self):
        out_data = expit(self.data)

        def bw(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._make(out_data, (self,), "sigmoid", bw)

    def softplus(self, beta: float = 1.0):
        """log(1 + exp(beta * x)) / beta, evaluated without overflow."""
        out_data = np.logaddexp(0.0, beta * self.data) / beta

        def bw(g):
            self._accumulate(g * expit(beta * self.data))

        return Tensor._make(out_data, (self,), "softplus", bw)

    def relu(self):
        mask = self.data > 0.0

        def bw(g):
            self._accumulate(g * mask)

        return Tensor._make(self.data * mask, (self,), "relu", bw)

    def abs(self):
        sign = np.sign(self.data)

        def bw(g):
            self._accumulate(g * sign)

        return Tensor._make(np.abs(self.data), (self,), "abs", bw)

    def sin(self):
        def bw(g):
            self._accumulate(g * np.cos(self.data))
        return Tensor._make(np.sin(self.data), (self,), "sin", bw)

    def cos(self):
        def bw(g):
            self._accumulate(-g * np.sin(self.data))
        return Tensor._make(np.cos(self.data), (self,), "cos", bw)

    # -- shape ops ----------------------------------------------------------

    def reshape(self, shape):
        src_shape = self.data.shape

        def bw(g):
            self._accumulate(g.reshape(src_shape))

        return Tensor._make(self.data.reshape(shape), (self,), "reshape", bw)

    def transpose(self):
        if self.ndim != 2:
            raise AutodiffError("transpose is defined for 2-D tensors")

        def bw(g):
            self._accumulate(g.T)

        return Tensor._make(self.data.T, (self,), "transpose", bw)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        out_data = self.data[idx]
        advanced = isinstance(idx, (np.ndarray, list)) or (
            isinstance(idx, tuple) and any(isinstance(i, (np.ndarray, list)) for i in idx))

        def bw(g):
            buf = np.zeros_like(self.data)
            if advanced:
                np.add.at(buf, idx, g)
            else:
                buf[idx] += g
            self._accumulate(buf)

        return Tensor._make(out_data, (self,), "getitem", bw)

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        src_shape = self.data.shape
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, src_shape).copy())
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(gg, src_shape).copy())

        return Tensor._make(out_data, (self,), "sum", bw)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.data.shape[a] for a in axis]))
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- linear algebra ------------------------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise AutodiffError("matmul is defined for 2-D tensors")
        out_data = self.data @ other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        return Tensor._make(out_data, (self, other), "matmul", bw)

    def __matmul__(self, other):
        return self.matmul(other)


def constant(x) -> Tensor:
    """A graph leaf that never receives gradients."""
    return Tensor(x, requires_grad=False)


def parameter(x, name: str) -> Tensor:
    """A named graph leaf that accumulates gradients."""
    return Tensor(x, requires_grad=True, name=name)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``."""
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor._make(out_data, tuple(tensors), "concat", bw)


def _toposort(root: Tensor) -> list:
    """Iterative post-order over the sub-graph that requires gradients."""
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Tensor, nan_check: bool = False) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` over the whole graph.

    ``root`` must hold a single scalar. Existing ``.grad`` buffers of the
    traversed nodes are reset first, so repeated calls do not mix runs.
    """
    if root.data.size != 1:
        raise AutodiffError(f"backward root must be scalar, got shape {root.data.shape}")
    if not np.isfinite(root.data).all():
        raise AutodiffError(f"non-finite value at root node {root._id} ({root._op})")
    if not root.requires_grad:
        raise AutodiffError("root does not depend on any parameter")
    order = _toposort(root)
    for node in order:
        node.grad = None
    root._accumulate(np.ones_like(root.data))
    for node in reversed(order):
        if node._backward is None:
            continue
        if node.grad is None:
            continue
        node._backward(node.grad)
        if nan_check and not np.isfinite(node.grad).all():
            raise AutodiffError(f"non-finite gradient at node {node._id} ({node._op})")


def gradients(root: Tensor, params: dict, nan_check: bool = False) -> dict:
    """Run backward and return a name -> gradient-array map for ``params``.

    Parameters absent from the graph get zero gradients of matching shape.
    """
    backward(root, nan_check=nan_check)
    out = {}
    for name, p in params.items():
        out[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
    return out


class ExponentialDecay:
    """lr(epoch) = initial * gamma ** (epoch // every)."""

    def __init__(self, initial: float, gamma: float = 0.998, every: int = 30):
        self.initial = float(initial)
        self.gamma = float(gamma)
        self.every = int(every)

    def at(self, epoch: int) -> float:
        return self.initial * self.gamma ** (epoch // self.every)


class Adam:
    """Adam with bias correction; state is keyed by parameter name."""

    def __init__(self, params: dict, lr: float = 1e-3,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict | None = None) -> None:
        """Apply one update. ``grads`` defaults to each parameter's ``.grad``."""
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k] if grads is not None else p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
