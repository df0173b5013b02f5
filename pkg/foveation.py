"""
Gaze simulation and fovea geometry.

All coordinates are HR pixels; points are (x, y), frame dims are
(height, width). A realized fovea box is always fully inside the frame.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from algorithms.gaussian import PolarGaussian
from errors import ConfigurationError, UsageError
from utils import Box

logger = logging.getLogger(__name__)

Point = tuple[float, float]
FrameDims = tuple[int, int]


@dataclass
class GazeTrace:
    """
    Attributes:
        frame_dims: (height, width) of the HR frame.
        side: fovea side for every box.
        centers: intended gaze point per frame.
        boxes: realized (clamped) box per frame.
        sigma: tracker noise in HR pixels (0 for scripted trajectories).
        seed: seed of the noise stream.
    """
    frame_dims: FrameDims
    side: int
    centers: list[Point] = field(default_factory=list)
    boxes: list[Box] = field(default_factory=list)
    sigma: float = 0.0
    seed: int = 0

    def __len__(self) -> int:
        return len(self.boxes)

    def box(self, t: int) -> Box:
        return self.boxes[t]


def _round(value: float) -> int:
    return int(math.floor(value + 0.5))


def sample_gaze(mu: Point, sigma: float, rng: PolarGaussian) -> tuple[int, int]:
    """
    mu + N(0, sigma^2) independently per axis, rounded to whole pixels.

    :raises ConfigurationError: if sigma is negative.
    """
    if sigma < 0:
        raise ConfigurationError(f"gaze sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return _round(mu[0]), _round(mu[1])
    return _round(rng.normal(mu[0], sigma)), _round(rng.normal(mu[1], sigma))


def clamp_crop(frame_dims: FrameDims, p: Point, side: int) -> Box:
    """
    Box of the given side centered at p, shifted the least amount that puts it inside the frame.

    :raises ConfigurationError: if side exceeds a frame dimension.
    """
    height, width = frame_dims
    if side < 1 or side > height or side > width:
        raise ConfigurationError(f"fovea side {side} does not fit a {height}x{width} frame")
    x0 = min(max(_round(p[0]) - side // 2, 0), width - side)
    y0 = min(max(_round(p[1]) - side // 2, 0), height - side)
    return Box(x0, y0, side)


def _axis_positions(extent: int, side: int) -> list[int]:
    # Whole steps of one side, plus a clamped last position when the leftover
    # strip is at least half a fovea wide.
    positions = [k * side for k in range(extent // side)]
    if extent - len(positions) * side >= side / 2:
        positions.append(extent - side)
    return positions


def raster_trajectory(frame_dims: FrameDims, side: int, n_frames: int) -> GazeTrace:
    """
    Non-overlapping raster sweep: left to right, then one side down; wraps
    back to the top-left after the last position.

    :raises UsageError: if n_frames < 1.
    """
    if n_frames < 1:
        raise UsageError(f"trajectory needs at least one frame, got {n_frames}")
    clamp_crop(frame_dims, (0, 0), side)
    height, width = frame_dims
    grid = [(x0, y0) for y0 in _axis_positions(height, side)
            for x0 in _axis_positions(width, side)]
    trace = GazeTrace(frame_dims, side)
    for t in range(n_frames):
        x0, y0 = grid[t % len(grid)]
        trace.boxes.append(Box(x0, y0, side))
        trace.centers.append((x0 + side / 2, y0 + side / 2))
    return trace


def horizontal_trajectory(frame_dims: FrameDims, side: int, n_frames: int,
                          y: int | None = None) -> GazeTrace:
    """
    Straight left-to-right slide at row y (the frame center when None):
    equally spaced box origins from the leftmost to the rightmost valid position.

    :raises UsageError: if n_frames < 1 or y is outside the frame.
    """
    height, width = frame_dims
    if n_frames < 1:
        raise UsageError(f"trajectory needs at least one frame, got {n_frames}")
    if y is None:
        y = height // 2
    if not 0 <= y < height:
        raise UsageError(f"row {y} outside a frame of height {height}")
    clamp_crop(frame_dims, (0, 0), side)
    travel = width - side
    trace = GazeTrace(frame_dims, side)
    for t in range(n_frames):
        x0 = _round(travel * t / (n_frames - 1)) if n_frames > 1 else 0
        center = (x0 + side // 2, y)
        trace.centers.append(center)
        trace.boxes.append(clamp_crop(frame_dims, center, side))
    return trace


def tracker_trajectory(frame_dims: FrameDims, side: int, n_frames: int, mu: Point | None,
                       sigma: float, seed: int) -> GazeTrace:
    """
    Fixed intended gaze mu (the frame center when None) jittered per frame
    by eye-tracker noise.
    """
    height, width = frame_dims
    if mu is None:
        mu = (width / 2, height / 2)
    rng = PolarGaussian(seed)
    trace = GazeTrace(frame_dims, side, sigma=sigma, seed=seed)
    for _ in range(n_frames):
        p = sample_gaze(mu, sigma, rng)
        trace.centers.append(mu)
        trace.boxes.append(clamp_crop(frame_dims, p, side))
    logger.debug("tracker trace: %d frames, sigma %.1f, seed %d", n_frames, sigma, seed)
    return trace


def write_trace(trace: GazeTrace, path: Path) -> None:
    """One "frame_index x0 y0 side" line per frame."""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{t} {b.x0} {b.y0} {b.side}" for t, b in enumerate(trace.boxes)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path: Path, frame_dims: FrameDims) -> GazeTrace:
    """
    Replay a trace file.

    :raises UsageError: on malformed lines, out-of-order indices, mixed sides
        or boxes outside the frame.
    """
    height, width = frame_dims
    boxes: list[Box] = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            t, x0, y0, side = (int(v) for v in line.split())
        except ValueError:
            raise UsageError(f"{path}:{number}: expected 'frame_index x0 y0 side'") from None
        if t != len(boxes):
            raise UsageError(f"{path}:{number}: frame index {t}, expected {len(boxes)}")
        box = Box(x0, y0, side)
        if not box.inside(height, width) or (boxes and side != boxes[0].side):
            raise UsageError(f"{path}:{number}: box {box} invalid for a {height}x{width} frame")
        boxes.append(box)
    if not boxes:
        raise UsageError(f"{path}: empty trace")
    trace = GazeTrace(frame_dims, boxes[0].side, boxes=boxes)
    trace.centers = [(b.x0 + b.side / 2, b.y0 + b.side / 2) for b in boxes]
    return trace
