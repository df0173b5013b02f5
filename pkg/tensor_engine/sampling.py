""" Resampling operators: separable resizes, flow warping and the
shared-offset deformable convolution. """
from __future__ import annotations

from fractions import Fraction

import numpy as np

from algorithms.resample import Rational, bicubic_matrix, bilinear_matrix
from errors import ConfigurationError
from tensor_engine.conv import conv2d
from tensor_engine.tensor import Function, Tensor


class SeparableResize(Function):
    """out = rows @ x @ cols.T over the last two axes."""

    def forward(self, x, rows: np.ndarray, cols: np.ndarray):
        self.rows = rows.astype(x.dtype)
        self.cols = cols.astype(x.dtype)
        return np.matmul(np.matmul(self.rows, x), self.cols.T)

    def backward(self, grad):
        return (np.matmul(np.matmul(self.rows.T, grad), self.cols),)


def _resize(x: Tensor, scale: Rational, build) -> Tensor:
    scale = Fraction(scale)
    if scale <= 0:
        raise ConfigurationError(f"resize scale must be positive, got {scale}")
    rows = build(x.shape[-2], scale)
    cols = build(x.shape[-1], scale)
    return SeparableResize.apply(x, rows=rows, cols=cols)


def bilinear_resize(x: Tensor, scale: Rational) -> Tensor:
    """
    Bilinear resize to round(H*scale) x round(W*scale).

    Source coordinate = (dst + 0.5) / scale - 0.5, reads clamped to the border.
    """
    return _resize(x, scale, bilinear_matrix)


def bicubic_resize(x: Tensor, scale: Rational) -> Tensor:
    """
    Bicubic resize (a = -0.5). When shrinking, the kernel is stretched by
    1/scale so the result is antialiased.
    """
    return _resize(x, scale, bicubic_matrix)


def upsample_flow(flow: Tensor, factor: int) -> Tensor:
    """Bilinear x factor resize of a flow field, vectors rescaled to the new pixel grid."""
    if factor == 1:
        return flow
    return bilinear_resize(flow, factor) * float(factor)


class WarpBilinear(Function):
    """
    output(p) = bilinear sample of x at p + flow(p).

    Each of the four corner reads that falls outside the frame contributes 0.
    """

    def forward(self, x, flow):
        b, c, h, w = x.shape
        gy, gx = np.meshgrid(np.arange(h, dtype=x.dtype), np.arange(w, dtype=x.dtype),
                             indexing="ij")
        sx = gx[None] + flow[:, 0]
        sy = gy[None] + flow[:, 1]
        x0 = np.floor(sx)
        y0 = np.floor(sy)
        fx = sx - x0
        fy = sy - y0
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)

        self.shape = x.shape
        self.fx, self.fy = fx, fy
        self.corners = []
        values = []
        flat_x = x.reshape(b, c, h * w)
        for dy in (0, 1):
            for dx in (0, 1):
                cy, cx = y0 + dy, x0 + dx
                valid = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
                index = np.where(valid, cy * w + cx, 0)
                v = np.take_along_axis(flat_x, index.reshape(b, 1, h * w).repeat(c, axis=1),
                                       axis=2).reshape(b, c, h, w)
                v *= valid[:, None]
                self.corners.append((index, valid))
                values.append(v)
        self.values = values
        w00, w01, w10, w11 = self._weights()
        v00, v01, v10, v11 = values
        return (w00[:, None] * v00 + w01[:, None] * v01) + (w10[:, None] * v10 + w11[:, None] * v11)

    def _weights(self):
        fx, fy = self.fx, self.fy
        return (1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx

    def backward(self, grad):
        b, c, h, w = self.shape
        fx, fy = self.fx, self.fy
        v00, v01, v10, v11 = self.values

        grad_x = np.zeros((b, c, h * w), dtype=grad.dtype)
        for (index, valid), weight in zip(self.corners, self._weights()):
            contrib = (grad * (weight * valid)[:, None]).reshape(b, c, h * w)
            for i in range(b):
                idx = index[i].reshape(-1)
                for j in range(c):
                    grad_x[i, j] += np.bincount(idx, weights=contrib[i, j], minlength=h * w)

        d_sx = (1 - fy)[:, None] * (v01 - v00) + fy[:, None] * (v11 - v10)
        d_sy = (1 - fx)[:, None] * (v10 - v00) + fx[:, None] * (v11 - v01)
        grad_flow = np.stack([(grad * d_sx).sum(axis=1), (grad * d_sy).sum(axis=1)], axis=1)
        return grad_x.reshape(self.shape), grad_flow.astype(grad.dtype)


def warp_bilinear(x: Tensor, flow: Tensor) -> Tensor:
    """
    Backward-warp x by a (B, 2, H, W) flow whose channels are (dx, dy) in
    pixels of x's grid.

    :raises ConfigurationError: if flow is not (B, 2, H, W) matching x.
    """
    if flow.ndim != 4 or flow.shape[1] != 2:
        raise ConfigurationError(f"flow must be (B, 2, H, W), got {flow.shape}")
    if flow.shape[0] != x.shape[0] or flow.shape[2:] != x.shape[2:]:
        raise ConfigurationError(f"flow {flow.shape} does not match input {x.shape}")
    return WarpBilinear.apply(x, flow)


# Standard 3x3 grid positions p_k in row-major order, as (dx, dy).
_TAPS = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]


def dcn_lite(x: Tensor, offsets: Tensor, masks: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """
    Deformable 3x3 convolution with one offset and one mask per position:

        out(p) = sum_k w_k . x(p + p_k + O(p)) . M(p) + bias

    Fractional positions are read bilinearly and out-of-frame reads are 0.
    With O = 0 and M = 1 this is conv2d(x, weight, bias, stride 1, padding 1).

    :raises ConfigurationError: on offset/mask/weight shape mismatches.
    """
    b, c, h, w = x.shape
    if offsets.shape != (b, 2, h, w):
        raise ConfigurationError(f"offsets {offsets.shape} do not match input {x.shape}")
    if masks.shape != (b, 1, h, w):
        raise ConfigurationError(f"masks {masks.shape} do not match input {x.shape}")
    if weight.shape[1:] != (c, 3, 3):
        raise ConfigurationError(f"dcn weight must be (out, {c}, 3, 3), got {weight.shape}")

    total = None
    for k, (dx, dy) in enumerate(_TAPS):
        shift = np.zeros((1, 2, 1, 1), dtype=offsets.data.dtype)
        shift[0, 0], shift[0, 1] = dx, dy
        sampled = warp_bilinear(x, offsets + Tensor(shift))
        tap = weight_tap(weight, k // 3, k % 3)
        term = conv2d(sampled, tap, _zero_bias(weight), stride=1, padding=0)
        total = term if total is None else total + term
    return total * masks + bias_map(bias)


class WeightTap(Function):
    def forward(self, weight, i: int, j: int):
        self.shape, self.ij = weight.shape, (i, j)
        return weight[:, :, i:i + 1, j:j + 1]

    def backward(self, grad):
        i, j = self.ij
        out = np.zeros(self.shape, dtype=grad.dtype)
        out[:, :, i:i + 1, j:j + 1] = grad
        return (out,)


def weight_tap(weight: Tensor, i: int, j: int) -> Tensor:
    """The (out, in, 1, 1) slice of a kernel at tap (i, j)."""
    return WeightTap.apply(weight, i=i, j=j)


def _zero_bias(weight: Tensor) -> Tensor:
    return Tensor(np.zeros(weight.shape[0], dtype=weight.data.dtype))


class BiasMap(Function):
    def forward(self, bias):
        return bias.reshape(1, -1, 1, 1)

    def backward(self, grad):
        return (grad.reshape(-1),)


def bias_map(bias: Tensor) -> Tensor:
    """View a (C,) bias as (1, C, 1, 1) for broadcasting."""
    return BiasMap.apply(bias)
