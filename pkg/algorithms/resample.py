"""
Separable resampling matrices.

A resize of one axis from n_in to n_out samples is a dense (n_out, n_in)
matrix; a 2-D resize is rows @ image @ cols.T. Sample positions follow the
align-corners-false convention and reads past the border are clamped onto
the edge sample.
"""
from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Union

import numpy as np

Rational = Union[int, float, Fraction]

CUBIC_A = -0.5


def scaled_extent(n: int, scale: Rational) -> int:
    """round(n * scale), halves rounded up."""
    return int(math.floor(Fraction(scale) * n + Fraction(1, 2)))


def linear_weight(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < 1.0, 1.0 - ax, 0.0)


def cubic_weight(x: np.ndarray) -> np.ndarray:
    """Keys cubic convolution kernel with a = -0.5 (Catmull-Rom)."""
    ax = np.abs(x)
    a = CUBIC_A
    near = ((a + 2) * ax - (a + 3)) * ax * ax + 1
    far = ((a * ax - 5 * a) * ax + 8 * a) * ax - 4 * a
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def _matrix(n_in: int, scale: Fraction, kernel: Callable, radius: float,
            antialias: bool) -> np.ndarray:
    n_out = scaled_extent(n_in, scale)
    s = float(scale)
    # Widening the support by 1/scale when shrinking turns the kernel into a
    # low-pass filter matched to the new sampling rate.
    stretch = s if (antialias and s < 1.0) else 1.0
    support = radius / stretch

    centers = (np.arange(n_out) + 0.5) / s - 0.5
    first = np.floor(centers - support).astype(np.int64) + 1
    taps = int(math.ceil(2 * support)) + 1
    idx = first[:, None] + np.arange(taps)[None, :]
    weights = kernel((centers[:, None] - idx) * stretch)
    weights /= weights.sum(axis=1, keepdims=True)

    matrix = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(matrix, (rows, np.clip(idx, 0, n_in - 1).reshape(-1)), weights.reshape(-1))
    return matrix


@lru_cache(maxsize=64)
def bilinear_matrix(n_in: int, scale: Fraction) -> np.ndarray:
    m = _matrix(n_in, scale, linear_weight, 1.0, antialias=False)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def bicubic_matrix(n_in: int, scale: Fraction) -> np.ndarray:
    m = _matrix(n_in, scale, cubic_weight, 2.0, antialias=True)
    m.setflags(write=False)
    return m
