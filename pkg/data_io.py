"""
Clip loading, x8 bicubic degradation, training patch sampling and output
writers.

Frames are float32 arrays shaped (3, H, W) with values in [0, 1].
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from errors import ConfigurationError, DataError
from metrics import MetricReport
from serialize import MetricRowSerializer
from tensor_engine import Tensor, bicubic_resize
from utils import Box

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".bmp", ".tif", ".tiff", ".ppm")
REPORT_HEADER = ["clip", "frame", "region", "psnr", "ssim"]
SCALE = 8


@dataclass
class FrameSequence:
    clip_id: str
    hr: list[np.ndarray]
    lr: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.hr)

    @property
    def hr_dims(self) -> tuple[int, int]:
        return self.hr[0].shape[1:]

    @property
    def lr_dims(self) -> tuple[int, int]:
        return self.lr[0].shape[1:]


@dataclass
class TrainingSample:
    """
    One temporal window cut from a clip.

    Attributes:
        hr: (T, 3, P, P) HR patches.
        lr: (T, 3, P/8, P/8) bicubic x1/8 of the HR patches.
        fovea: (T, 3, F, F) HR crops at the fovea boxes.
        boxes: per-frame fovea box in patch coordinates.
    """
    hr: np.ndarray
    lr: np.ndarray
    fovea: np.ndarray
    boxes: list[Box]
    start: int


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def read_frame(path: Path) -> np.ndarray:
    """
    :raises DataError: if the file cannot be decoded.
    """
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise DataError(f"cannot decode frame {path}: {e}") from e
    return (rgb.transpose(2, 0, 1).astype(np.float32) / 255.0).astype(np.float32)


def quantize(frame: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8, rounding halves away from zero."""
    return np.floor(np.clip(frame, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_frame(frame: np.ndarray, path: Path) -> None:
    frame = np.asarray(getattr(frame, "data", frame))
    if frame.ndim == 4:
        frame = frame[0]
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(quantize(frame).transpose(1, 2, 0))).save(path)


def load_sequence(directory: Path, max_frames: int = 0) -> FrameSequence:
    """
    Frames of one clip in lexicographic filename order.

    :raises DataError: if the directory is missing or empty, a file does not
        decode, or frame dimensions differ.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"clip directory {directory} does not exist")
    files = _image_files(directory)
    if max_frames:
        files = files[:max_frames]
    if not files:
        raise DataError(f"no frames in {directory}")
    frames = []
    for path in files:
        frame = read_frame(path)
        if frames and frame.shape != frames[0].shape:
            raise DataError(f"{path} is {frame.shape[2]}x{frame.shape[1]}, "
                            f"expected {frames[0].shape[2]}x{frames[0].shape[1]}")
        frames.append(frame)
    logger.debug("loaded %s: %d frames of %dx%d", directory.name, len(frames),
                 frames[0].shape[2], frames[0].shape[1])
    return FrameSequence(directory.name, frames)


def load_clips(directory: Path, max_frames: int = 0) -> list[FrameSequence]:
    """
    A directory of frames is one clip; otherwise every sub-directory is a clip,
    in name order.

    :raises DataError: if nothing loadable is found.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory {directory} does not exist")
    if _image_files(directory):
        return [load_sequence(directory, max_frames)]
    clips = [load_sequence(d, max_frames) for d in sorted(directory.iterdir()) if d.is_dir()]
    if not clips:
        raise DataError(f"no clips in {directory}")
    return clips


def degrade_frame(frame: np.ndarray, scale: int = SCALE) -> np.ndarray:
    """
    Bicubic x1/scale of one (3, H, W) frame, clipped to [0, 1].

    :raises ConfigurationError: if H or W is not divisible by scale.
    """
    h, w = frame.shape[-2:]
    if h % scale or w % scale:
        raise ConfigurationError(f"frame {w}x{h} not divisible by {scale}")
    low = bicubic_resize(Tensor(frame), Fraction(1, scale)).data
    return np.clip(low, 0.0, 1.0).astype(np.float32)


def degrade_sequence(seq: FrameSequence, scale: int = SCALE) -> FrameSequence:
    """Copy of seq with lr filled in."""
    return FrameSequence(seq.clip_id, seq.hr, [degrade_frame(f, scale) for f in seq.hr])


def sample_training_patch(seq: FrameSequence, t: int, rng: np.random.Generator,
                          patch: int = 256, fovea: int = 128, window: int = 10,
                          scale: int = SCALE) -> TrainingSample:
    """
    Random patch x patch HR crop shared by frames t .. t+window-1, with an
    independent uniformly placed fovea box per frame.

    :raises ConfigurationError: if the frames are smaller than the patch, the
        patch is not divisible by scale, or the window runs past the clip.
    """
    height, width = seq.hr_dims
    if height < patch or width < patch:
        raise ConfigurationError(f"frames {width}x{height} smaller than the {patch}px patch")
    if patch % scale or fovea > patch:
        raise ConfigurationError(f"patch {patch} / fovea {fovea} incompatible with scale {scale}")
    if not 0 <= t <= len(seq) - window:
        raise ConfigurationError(f"window {t}..{t + window - 1} outside a {len(seq)}-frame clip")

    y0 = int(rng.integers(0, height - patch + 1))
    x0 = int(rng.integers(0, width - patch + 1))
    hr = np.stack([f[:, y0:y0 + patch, x0:x0 + patch] for f in seq.hr[t:t + window]])
    lr = np.stack([degrade_frame(f, scale) for f in hr])
    boxes, crops = [], []
    for frame in hr:
        box = Box(int(rng.integers(0, patch - fovea + 1)),
                  int(rng.integers(0, patch - fovea + 1)), fovea)
        boxes.append(box)
        crops.append(frame[:, box.y0:box.y1, box.x0:box.x1])
    return TrainingSample(hr, lr, np.stack(crops), boxes, t)


class TrainingSampler:
    """
    Deterministic stream of TrainingSamples. Sample i depends only on the
    seed and i, so a resumed run sees the same stream as an uninterrupted one.
    """

    def __init__(self, sequences: Sequence[FrameSequence], seed: int, patch: int, fovea: int,
                 window: int, scale: int = SCALE) -> None:
        usable = [s for s in sequences if len(s) >= window]
        if not usable:
            raise ConfigurationError(f"no clip has the {window} frames a training window needs")
        self.sequences = usable
        self.seed = seed
        self.patch, self.fovea, self.window, self.scale = patch, fovea, window, scale

    def sample(self, index: int) -> TrainingSample:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, index])))
        seq = self.sequences[int(rng.integers(0, len(self.sequences)))]
        t = int(rng.integers(0, len(seq) - self.window + 1))
        return sample_training_patch(seq, t, rng, self.patch, self.fovea, self.window, self.scale)

    def batch(self, iteration: int, batch_size: int) -> list[TrainingSample]:
        return [self.sample(iteration * batch_size + i) for i in range(batch_size)]


def write_report(report: MetricReport, path: Path) -> None:
    """CSV with one row per frame and region, then the per-clip aggregates."""
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = MetricRowSerializer(report.rows + report.aggregates(), many=True).data
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "psnr": f"{row['psnr']:.6f}", "ssim": f"{row['ssim']:.6f}"})


def write_loss_curve(losses: Sequence[float], path: Path, start: int = 0) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss"])
        for i, loss in enumerate(losses, start=start):
            writer.writerow([i, f"{loss:.8f}"])
