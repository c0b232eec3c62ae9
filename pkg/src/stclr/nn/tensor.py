"""Reverse-mode autodiff over dense NumPy arrays.

A ``Tensor`` wraps an ndarray plus the tape bookkeeping needed to
backpropagate from a scalar root. Arithmetic supports NumPy broadcasting;
gradients of broadcast operands are summed back to the operand shape.
Float32 is the working precision, float64 the verification precision; ops
preserve the dtype of their inputs.

``checked_mode(True)`` makes every op validate that its result is finite.
"""

import contextlib
import threading

import numpy as np

from ..errors import NonFiniteError

_state = threading.local()


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


def is_checked():
    return getattr(_state, "checked", False)


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (inference mode)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def checked_mode(enabled=True):
    """Raise NonFiniteError on any non-finite intermediate inside the block."""
    prev = is_checked()
    _state.checked = enabled
    try:
        yield
    finally:
        _state.checked = prev


class Tensor:
    """An ndarray node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    # -- operator sugar (delegates to ops to keep the graph logic in one place)

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops

        return ops.div(other, self)

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops

        return ops.reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        from . import ops

        return ops.sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        from . import ops

        return ops.transpose(self)


class Parameter(Tensor):
    """A trainable leaf tensor with named identity and optimizer state slots.

    ``grad`` always holds an array of the parameter's shape. The optimizer
    slots (``momentum`` for SGD, ``m``/``v``/``step_count`` for Adam) are
    allocated lazily by the optimizer that first touches the parameter.
    """

    __slots__ = ("name", "momentum", "m", "v", "step_count")

    def __init__(self, data, name="param", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.momentum = None
        self.m = None
        self.v = None
        self.step_count = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.data.dtype.name})"


def make_node(data, parents, backward_fn):
    """Create an op result, wiring it into the tape when grad is enabled."""
    if is_checked() and not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value produced by an operation")
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    needs = _grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data)
    if needs:
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(root):
    """Reverse-mode accumulation from a scalar root.

    Populates ``grad`` on every reachable tensor with ``requires_grad``.
    Unreachable parameters keep whatever gradient they already hold (zeros
    after ``zero_grad``).
    """
    if not isinstance(root, Tensor):
        raise TypeError("backward() expects a Tensor root")
    if root.size != 1:
        raise ValueError(f"backward() root must be scalar, got shape {root.shape}")

    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node._backward is None:
            # leaf: accumulate into the public grad slot
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            # out-of-place: pg may alias g or another parent's gradient
            grads[id(parent)] = pg if acc is None else acc + pg


def zero_grad(params):
    for p in params:
        p.grad = np.zeros_like(p.data)


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=dtype)
