""" Elementwise non-linearities. """
from __future__ import annotations

import numpy as np

from constants import Activation, LEAKY_SLOPE
from tensor_engine.tensor import Function, Tensor


class LeakyRelu(Function):
    def forward(self, x, slope: float):
        self.negative = x < 0
        self.slope = x.dtype.type(slope)
        return np.where(self.negative, x * self.slope, x)

    def backward(self, grad):
        return (np.where(self.negative, grad * self.slope, grad),)


class Sigmoid(Function):
    def forward(self, x):
        # Split by sign so exp never overflows.
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1 / (1 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1 + e)
        self.out = out
        return out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1 - self.out * self.out),)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    return LeakyRelu.apply(x, slope=slope)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def activation(x: Tensor, kind: Activation, slope: float = LEAKY_SLOPE) -> Tensor:
    if kind is Activation.LEAKY_RELU:
        return leaky_relu(x, slope)
    if kind is Activation.SIGMOID:
        return sigmoid(x)
    return tanh(x)
