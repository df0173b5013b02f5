""" Tensor and gradient tape.

A Tensor wraps a contiguous numpy buffer. Operations are Function subclasses;
while a GradientTape is active every Function applied to a tensor that
requires a gradient is appended to the tape, and GradientTape.backward walks
the recorded entries in reverse order exactly once.
"""
from __future__ import annotations

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np

from errors import UsageError

logger = logging.getLogger(__name__)

# Tapes and the default dtype are per thread so independent models can run
# side by side without sharing mutable state.
_local = threading.local()

Scalar = Union[int, float]


def get_default_dtype() -> type:
    return getattr(_local, "dtype", np.float32)


@contextmanager
def default_dtype(dtype: type) -> Iterator[None]:
    """
    Temporarily change the dtype new tensors are created with.

    The gradient checker runs under float64; model code never changes it.
    """
    previous = get_default_dtype()
    _local.dtype = dtype
    try:
        yield
    finally:
        _local.dtype = previous


def active_tape() -> GradientTape | None:
    return getattr(_local, "tape", None)


class Tensor:
    """
    Dense float array that may take part in a gradient tape.

    Attributes:
        data (np.ndarray): the values, C-contiguous, default dtype.
        requires_grad (bool): whether operations on it are recorded.
        grad (np.ndarray | None): gradient written by the last backward pass.
        grad_node (int | None): index of the tape entry that produced it.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None) -> None:
        self.data = np.ascontiguousarray(np.asarray(data, dtype=get_default_dtype()))
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.grad_node: int | None = None
        self.name = name

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> Tensor:
        return cls(np.zeros(tuple(shape), dtype=get_default_dtype()))

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
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        """Same values, cut off from any tape."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.grad_node = None
        out.name = self.name
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic. Broadcasting follows numpy and is undone in backward.

    def __add__(self, other: Tensor | Scalar) -> Tensor:
        return Add.apply(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other: Tensor | Scalar) -> Tensor:
        return Add.apply(self, Neg.apply(as_tensor(other)))

    def __rsub__(self, other: Tensor | Scalar) -> Tensor:
        return Add.apply(as_tensor(other), Neg.apply(self))

    def __mul__(self, other: Tensor | Scalar) -> Tensor:
        if isinstance(other, Tensor):
            return Mul.apply(self, other)
        return Scale.apply(self, factor=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: Scalar) -> Tensor:
        return Scale.apply(self, factor=1.0 / float(other))

    def __neg__(self) -> Tensor:
        return Neg.apply(self)

    def square(self) -> Tensor:
        return Square.apply(self)

    def sqrt(self) -> Tensor:
        return Sqrt.apply(self)

    def sum(self) -> Tensor:
        return Sum.apply(self)

    def mean(self) -> Tensor:
        return Scale.apply(Sum.apply(self), factor=1.0 / self.size)


def as_tensor(value: Tensor | Scalar | np.ndarray) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Function:
    """
    Base class for a recorded operation.

    forward receives the raw arrays of the input tensors (plus keyword
    options) and returns the output array; backward receives the gradient of
    the output and returns one gradient array (or None) per input tensor.
    apply stores the output in the default dtype.
    """

    def forward(self, *arrays: np.ndarray, **options) -> np.ndarray:
        raise NotImplementedError()

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError()

    @classmethod
    def apply(cls, *tensors: Tensor, **options) -> Tensor:
        function = cls()
        out = Tensor.__new__(Tensor)
        out.data = np.ascontiguousarray(function.forward(*(t.data for t in tensors), **options),
                                        dtype=get_default_dtype())
        out.requires_grad = False
        out.grad = None
        out.grad_node = None
        out.name = None
        tape = active_tape()
        if tape is not None and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            tape.record(function, tensors, out)
        return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out the axes numpy broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

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
        return a * b

    def backward(self, grad):
        return (unbroadcast(grad * self.b, self.a.shape),
                unbroadcast(grad * self.a, self.b.shape))


class Scale(Function):
    def forward(self, a, factor: float):
        self.factor = factor
        return a * a.dtype.type(factor)

    def backward(self, grad):
        return (grad * grad.dtype.type(self.factor),)


class Square(Function):
    def forward(self, a):
        self.a = a
        return a * a

    def backward(self, grad):
        return (2 * self.a * grad,)


class Sqrt(Function):
    def forward(self, a):
        self.out = np.sqrt(a)
        return self.out

    def backward(self, grad):
        return (grad / (2 * self.out),)


class Sum(Function):
    def forward(self, a):
        self.shape = a.shape
        return np.asarray(a.sum(dtype=a.dtype), dtype=a.dtype).reshape(())

    def backward(self, grad):
        return (np.broadcast_to(grad, self.shape).copy(),)


@dataclass
class TapeEntry:
    function: Function
    inputs: tuple[Tensor, ...]
    output: Tensor


class GradientTape:
    """
    Records operations and replays them backwards.

    Usage:
        with GradientTape() as tape:
            tape.watch_all(params)
            loss = model(...)
        grads = tape.backward(loss)
    """

    def __init__(self) -> None:
        self.entries: list[TapeEntry] = []
        self.params: dict[str, Tensor] = {}
        self._previous: list[GradientTape | None] = []

    def __enter__(self) -> GradientTape:
        self._previous.append(active_tape())
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._previous.pop()

    def watch(self, name: str, tensor: Tensor) -> Tensor:
        tensor.requires_grad = True
        self.params[name] = tensor
        return tensor

    def watch_all(self, params) -> None:
        for name, tensor in params.items():
            self.watch(name, tensor)

    def record(self, function: Function, inputs: tuple[Tensor, ...], output: Tensor) -> None:
        output.grad_node = len(self.entries)
        self.entries.append(TapeEntry(function, inputs, output))

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """
        Back-propagate from a scalar loss into every watched tensor.

        Watched tensors the loss does not depend on receive exact zeros.

        :raises UsageError: if loss is not a scalar or was not produced on this tape.
        :complexity: O(E) tape entries, each visited once in reverse order.
        """
        if loss.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        node = loss.grad_node
        if node is None or node >= len(self.entries) or self.entries[node].output is not loss:
            raise UsageError("loss is not connected to this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries[: node + 1]):
            grad = grads.pop(id(entry.output), None)
            if grad is None:
                continue
            for tensor, input_grad in zip(entry.inputs, entry.function.backward(grad)):
                if input_grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + input_grad
                else:
                    grads[key] = input_grad

        result = {}
        for name, tensor in self.params.items():
            grad = grads.get(id(tensor))
            if grad is None:
                grad = np.zeros_like(tensor.data)
            tensor.grad = np.ascontiguousarray(grad, dtype=tensor.data.dtype)
            result[name] = tensor.grad
        logger.debug("backward over %d tape entries, %d watched tensors",
                     node + 1, len(result))
        return result


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Back-propagate through the tape that is currently active."""
    tape = active_tape()
    if tape is None:
        raise UsageError("backward called with no active GradientTape")
    return tape.backward(loss)
