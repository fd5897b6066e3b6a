# src/mrkd/autodiff/tensor.py
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import NumericError, ShapeError

# флаг построения графа свой у каждого потока (ветви обучаются в разных потоках)
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _as_float_array(data) -> np.ndarray:
    array = np.asarray(data)
    if not np.issubdtype(array.dtype, np.floating):
        array = array.astype(np.float32)
    return array


class Tensor:
    """
    Плотный тензор на numpy с обратным режимом дифференцирования.
    grad накапливается (+=) при каждом backward, обнуляется оптимизатором.
    """

    __slots__ = ("data", "requires_grad", "grad", "_ctx", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "") -> None:
        self.data = _as_float_array(data)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional[Function] = None
        self.name = name

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # ---------- арифметика ----------

    def __add__(self, other) -> "Tensor":
        return Add.apply(self, as_tensor(other, self.dtype))

    def __radd__(self, other) -> "Tensor":
        return Add.apply(as_tensor(other, self.dtype), self)

    def __sub__(self, other) -> "Tensor":
        return Add.apply(self, Neg.apply(as_tensor(other, self.dtype)))

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __mul__(self, other) -> "Tensor":
        return Mul.apply(self, as_tensor(other, self.dtype))

    def __rmul__(self, other) -> "Tensor":
        return Mul.apply(as_tensor(other, self.dtype), self)

    def __matmul__(self, other) -> "Tensor":
        return MatMul.apply(self, as_tensor(other, self.dtype))

    def sum(self) -> "Tensor":
        return Sum.apply(self)

    def mean(self) -> "Tensor":
        return Sum.apply(self) * (1.0 / self.data.size)

    def reshape(self, *shape: int) -> "Tensor":
        return Reshape.apply(self, shape=shape)

    # ---------- обратный проход ----------

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward", self.shape, ())
            grad = np.ones_like(self.data)

        order = _toposort(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            node_grad = grads.pop(id(node), None)
            if node_grad is None:
                continue
            if node._ctx is None:
                node.grad = node_grad if node.grad is None else node.grad + node_grad
                continue
            parent_grads = node._ctx.backward(node_grad)
            for parent, g in zip(node._ctx.parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = g if key not in grads else grads[key] + g


def _toposort(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    array = np.asarray(value, dtype=dtype) if dtype is not None else _as_float_array(value)
    return Tensor(array)


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str = "") -> None:
        super().__init__(data, requires_grad=True, name=name)


class Function:
    """
    Узел графа: forward считает numpy-массив, backward возвращает градиенты
    по каждому тензорному аргументу (None, если не нужен).
    """

    def __init__(self) -> None:
        self.parents: Tuple[Tensor, ...] = ()

    @classmethod
    def apply(cls, *tensors: Tensor, **params) -> Tensor:
        ctx = cls()
        ctx.parents = tensors
        out = ctx.forward(*(t.data for t in tensors), **params)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{cls.__name__}: forward produced non-finite values")
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        result = Tensor(out, requires_grad=requires_grad)
        if requires_grad:
            result._ctx = ctx
        return result

    def forward(self, *arrays: np.ndarray, **params) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Сворачивает градиент обратно к форме операнда после broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        try:
            return a + b
        except ValueError:
            raise ShapeError("add", a.shape, b.shape) from None

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        try:
            return a * b
        except ValueError:
            raise ShapeError("mul", a.shape, b.shape) from None

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class Sum(Function):
    def forward(self, a):
        self.shape = a.shape
        return np.asarray(a.sum(), dtype=a.dtype)

    def backward(self, grad):
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape):
        self.shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", a.shape, shape) from None

    def backward(self, grad):
        return (grad.reshape(self.shape),)
