""" Operations that only move values around: concatenation, slicing,
placement, padding and the pixel-shuffle pair. """
from __future__ import annotations

import numpy as np

from errors import ConfigurationError
from tensor_engine.tensor import Function, Tensor


class ChannelConcat(Function):
    def forward(self, *arrays):
        self.splits = np.cumsum([a.shape[1] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=1)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=1))


def channel_concat(xs: list[Tensor]) -> Tensor:
    """
    Stack tensors along the channel axis in argument order.

    :raises ConfigurationError: if batch or spatial extents differ.
    """
    if not xs:
        raise ConfigurationError("channel_concat needs at least one tensor")
    reference = (xs[0].shape[0],) + xs[0].shape[2:]
    for x in xs[1:]:
        if (x.shape[0],) + x.shape[2:] != reference:
            raise ConfigurationError(
                f"channel_concat shape mismatch: {xs[0].shape} vs {x.shape}")
    if len(xs) == 1:
        return xs[0]
    return ChannelConcat.apply(*xs)


class ChannelSlice(Function):
    def forward(self, x, start: int, stop: int):
        self.shape, self.start, self.stop = x.shape, start, stop
        return x[:, start:stop]

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        out[:, self.start:self.stop] = grad
        return (out,)


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    return ChannelSlice.apply(x, start=start, stop=stop)


class Crop(Function):
    def forward(self, x, y0: int, x0: int, height: int, width: int):
        self.shape, self.window = x.shape, (y0, x0, height, width)
        return x[:, :, y0:y0 + height, x0:x0 + width]

    def backward(self, grad):
        y0, x0, height, width = self.window
        out = np.zeros(self.shape, dtype=grad.dtype)
        out[:, :, y0:y0 + height, x0:x0 + width] = grad
        return (out,)


def crop(x: Tensor, y0: int, x0: int, height: int, width: int) -> Tensor:
    """
    Spatial window of a (B, C, H, W) tensor.

    :raises ConfigurationError: if the window leaves the frame.
    """
    _, _, h, w = x.shape
    if y0 < 0 or x0 < 0 or y0 + height > h or x0 + width > w:
        raise ConfigurationError(
            f"crop window ({y0}, {x0}, {height}, {width}) outside frame {h}x{w}")
    return Crop.apply(x, y0=y0, x0=x0, height=height, width=width)


class Paste(Function):
    def forward(self, x, y0: int, x0: int, height: int, width: int):
        self.window = (y0, x0) + x.shape[2:]
        out = np.zeros(x.shape[:2] + (height, width), dtype=x.dtype)
        out[:, :, y0:y0 + x.shape[2], x0:x0 + x.shape[3]] = x
        return out

    def backward(self, grad):
        y0, x0, h, w = self.window
        return (grad[:, :, y0:y0 + h, x0:x0 + w],)


def paste(x: Tensor, y0: int, x0: int, height: int, width: int) -> Tensor:
    """
    Place x at (y0, x0) on a zero canvas of the given size.

    :raises ConfigurationError: if x does not fit at that position.
    """
    if y0 < 0 or x0 < 0 or y0 + x.shape[2] > height or x0 + x.shape[3] > width:
        raise ConfigurationError(
            f"cannot paste {x.shape[2]}x{x.shape[3]} at ({y0}, {x0}) on {height}x{width}")
    return Paste.apply(x, y0=y0, x0=x0, height=height, width=width)


class ReflectPad(Function):
    def forward(self, x, bottom: int, right: int):
        h, w = x.shape[2:]
        # Index maps let backward fold the mirrored border back in.
        self.rows = np.pad(np.arange(h), (0, bottom), mode="reflect")
        self.cols = np.pad(np.arange(w), (0, right), mode="reflect")
        self.shape = x.shape
        return x[:, :, self.rows[:, None], self.cols[None, :]]

    def backward(self, grad):
        b, c, h, w = self.shape
        flat = (self.rows[:, None] * w + self.cols[None, :]).reshape(-1)
        out = np.empty((b, c, h * w), dtype=grad.dtype)
        g = grad.reshape(b, c, -1)
        for i in range(b):
            for j in range(c):
                out[i, j] = np.bincount(flat, weights=g[i, j], minlength=h * w)
        return (out.reshape(self.shape),)


def pad_reflect(x: Tensor, bottom: int, right: int) -> Tensor:
    """Mirror-pad the bottom and right borders."""
    if bottom == 0 and right == 0:
        return x
    return ReflectPad.apply(x, bottom=bottom, right=right)


class PixelShuffleUp(Function):
    def forward(self, x, r: int):
        b, c, h, w = x.shape
        self.r, self.shape = r, x.shape
        out = x.reshape(b, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
        return out.reshape(b, c // (r * r), h * r, w * r)

    def backward(self, grad):
        return (_unshuffle(grad, self.r),)


class PixelUnshuffleDown(Function):
    def forward(self, x, r: int):
        self.r = r
        return _unshuffle(x, r)

    def backward(self, grad):
        b, c, h, w = grad.shape
        r = self.r
        out = grad.reshape(b, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
        return (out.reshape(b, c // (r * r), h * r, w * r),)


def _unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    b, c, h, w = x.shape
    out = x.reshape(b, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return out.reshape(b, c * r * r, h // r, w // r)


def pixel_shuffle_up(x: Tensor, r: int) -> Tensor:
    """
    (B, C, H, W) -> (B, C/r^2, rH, rW).

    Input channel c_out*r^2 + r*dy + dx lands at output (r*y + dy, r*x + dx).

    :raises ConfigurationError: if C is not divisible by r^2.
    """
    if x.shape[1] % (r * r):
        raise ConfigurationError(f"{x.shape[1]} channels not divisible by r^2 = {r * r}")
    return PixelShuffleUp.apply(x, r=r)


def pixel_unshuffle_down(x: Tensor, r: int) -> Tensor:
    """
    Exact inverse of pixel_shuffle_up.

    :raises ConfigurationError: if H or W is not divisible by r.
    """
    if x.shape[2] % r or x.shape[3] % r:
        raise ConfigurationError(f"spatial dims {x.shape[2:]} not divisible by {r}")
    return PixelUnshuffleDown.apply(x, r=r)


class CropBoxes(Function):
    """One (side_h, side_w) window per batch element."""

    def forward(self, x, origins: tuple, height: int, width: int):
        self.shape, self.origins, self.hw = x.shape, origins, (height, width)
        return np.stack([x[i, :, y0:y0 + height, x0:x0 + width]
                         for i, (y0, x0) in enumerate(origins)])

    def backward(self, grad):
        height, width = self.hw
        out = np.zeros(self.shape, dtype=grad.dtype)
        for i, (y0, x0) in enumerate(self.origins):
            out[i, :, y0:y0 + height, x0:x0 + width] = grad[i]
        return (out,)


class PasteBoxes(Function):
    def forward(self, x, origins: tuple, height: int, width: int):
        self.origins, self.hw = origins, x.shape[2:]
        out = np.zeros(x.shape[:2] + (height, width), dtype=x.dtype)
        for i, (y0, x0) in enumerate(origins):
            out[i, :, y0:y0 + x.shape[2], x0:x0 + x.shape[3]] = x[i]
        return out

    def backward(self, grad):
        h, w = self.hw
        return (np.stack([grad[i, :, y0:y0 + h, x0:x0 + w]
                          for i, (y0, x0) in enumerate(self.origins)]),)


def _check_origins(origins, batch: int, inner: tuple[int, int], outer: tuple[int, int]) -> None:
    if len(origins) != batch:
        raise ConfigurationError(f"{len(origins)} windows for a batch of {batch}")
    for y0, x0 in origins:
        if y0 < 0 or x0 < 0 or y0 + inner[0] > outer[0] or x0 + inner[1] > outer[1]:
            raise ConfigurationError(
                f"window {inner[0]}x{inner[1]} at ({y0}, {x0}) outside frame {outer[0]}x{outer[1]}")


def crop_boxes(x: Tensor, origins, height: int, width: int) -> Tensor:
    """
    Batched crop: element i is cut at origins[i] = (y0, x0).

    :raises ConfigurationError: if a window leaves the frame.
    """
    origins = tuple((int(y0), int(x0)) for y0, x0 in origins)
    _check_origins(origins, x.shape[0], (height, width), x.shape[2:])
    return CropBoxes.apply(x, origins=origins, height=height, width=width)


def paste_boxes(x: Tensor, origins, height: int, width: int) -> Tensor:
    """
    Batched paste onto a zero (height, width) canvas, element i at origins[i].

    :raises ConfigurationError: if a patch does not fit.
    """
    origins = tuple((int(y0), int(x0)) for y0, x0 in origins)
    _check_origins(origins, x.shape[0], x.shape[2:], (height, width))
    return PasteBoxes.apply(x, origins=origins, height=height, width=width)
