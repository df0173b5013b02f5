""" Convolution and pooling. """
from __future__ import annotations

import numpy as np

from errors import ConfigurationError
from tensor_engine.tensor import Function, Tensor


def _output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


class Conv2d(Function):
    """
    Cross-correlation computed one kernel tap at a time.

    Each tap is a (C_out, C_in) matrix applied to a shifted view of the padded
    input, so memory stays at one input-sized buffer instead of an im2col
    matrix k*k times larger. Taps are summed in row-major order.
    """

    def forward(self, x, weight, bias, stride: int, padding: int):
        b, c, h, w = x.shape
        out_ch, _, k, _ = weight.shape
        ho = _output_extent(h, k, stride, padding)
        wo = _output_extent(w, k, stride, padding)
        if padding:
            x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        self.xp, self.weight = x, weight
        self.stride, self.padding, self.out_hw = stride, padding, (ho, wo)

        out = np.zeros((b, out_ch, ho * wo), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                patch = self._tap(x, i, j).reshape(b, c, ho * wo)
                out += np.matmul(weight[:, :, i, j], patch)
        out += bias[None, :, None]
        return out.reshape(b, out_ch, ho, wo)

    def _tap(self, xp: np.ndarray, i: int, j: int) -> np.ndarray:
        ho, wo = self.out_hw
        s = self.stride
        return xp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]

    def backward(self, grad):
        xp, weight = self.xp, self.weight
        b, c = xp.shape[:2]
        out_ch, _, k, _ = weight.shape
        ho, wo = self.out_hw
        s = self.stride
        g = grad.reshape(b, out_ch, ho * wo)

        grad_xp = np.zeros_like(xp)
        grad_w = np.zeros_like(weight)
        for i in range(k):
            for j in range(k):
                patch = self._tap(xp, i, j).reshape(b, c, ho * wo)
                grad_w[:, :, i, j] = np.matmul(g, patch.transpose(0, 2, 1)).sum(axis=0)
                back = np.matmul(weight[:, :, i, j].T, g).reshape(b, c, ho, wo)
                grad_xp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += back
        grad_b = grad.sum(axis=(0, 2, 3))

        p = self.padding
        if p:
            grad_xp = grad_xp[:, :, p:-p, p:-p]
        return grad_xp, grad_w, grad_b


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 1) -> Tensor:
    """
    2-D cross-correlation of a (B, C_in, H, W) input with a (C_out, C_in, k, k)
    kernel. Output extent is floor((H + 2*padding - k) / stride) + 1.

    :raises ConfigurationError: on channel mismatch or invalid stride/padding.
    """
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ConfigurationError(f"weight must be (out, in, k, k), got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ConfigurationError(
            f"input has {x.shape[1]} channels but weight expects {weight.shape[1]}")
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"invalid stride {stride} / padding {padding}")
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding)


class AvgPool2(Function):
    def forward(self, x):
        b, c, h, w = x.shape
        return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5), dtype=x.dtype)

    def backward(self, grad):
        up = np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3)
        return (up * grad.dtype.type(0.25),)


def avg_pool2(x: Tensor) -> Tensor:
    """
    Non-overlapping 2x2 mean.

    :raises ConfigurationError: on odd spatial extents.
    """
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ConfigurationError(f"avg_pool2 needs even spatial dims, got {x.shape[2:]}")
    return AvgPool2.apply(x)
