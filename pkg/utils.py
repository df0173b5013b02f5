from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Square fovea window in HR pixels; covers [x0, x0 + side) x [y0, y0 + side)."""
    x0: int
    y0: int
    side: int

    @property
    def x1(self) -> int:
        return self.x0 + self.side

    @property
    def y1(self) -> int:
        return self.y0 + self.side

    @property
    def origin(self) -> tuple[int, int]:
        """(y0, x0), the order crop/paste take."""
        return self.y0, self.x0

    def inside(self, height: int, width: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def centered_window(height: int, width: int, side: int) -> tuple[int, int, int, int]:
    """(y0, x0, h, w) of a side x side square centered in the frame, clipped to it."""
    h = min(side, height)
    w = min(side, width)
    return (height - h) // 2, (width - w) // 2, h, w
