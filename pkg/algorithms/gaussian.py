"""
Normal deviates by the Marsaglia polar method.

Draws uniforms from a PCG64 stream and turns accepted pairs into two
independent N(0, 1) values; the second value of each pair is kept for the
next call. Given the seed, the sequence depends only on PCG64 and this
algorithm, which makes gaze traces replayable outside numpy's own normal
sampler.
"""
from __future__ import annotations

import math

import numpy as np


class PolarGaussian:

    def __init__(self, seed: int) -> None:
        self.seed = seed
        self._uniform = np.random.Generator(np.random.PCG64(seed))
        self._spare: float | None = None

    def standard(self) -> float:
        """
        One N(0, 1) deviate.

        :complexity: expected 4/pi uniform pairs per accepted pair.
        """
        if self._spare is not None:
            value, self._spare = self._spare, None
            return value
        while True:
            u = 2.0 * self._uniform.random() - 1.0
            v = 2.0 * self._uniform.random() - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                break
        factor = math.sqrt(-2.0 * math.log(s) / s)
        self._spare = v * factor
        return u * factor

    def normal(self, mean: float, sigma: float) -> float:
        return mean + sigma * self.standard()
