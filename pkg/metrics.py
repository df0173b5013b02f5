"""
Region-masked PSNR and SSIM and the three-region evaluation protocol.

Images are float arrays in [0, 1] shaped (3, H, W) (a leading batch axis of
one is accepted). Masks are boolean (H, W).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from skimage.metrics import structural_similarity

from constants import PSNR_CAP_DB, Region
from errors import UndefinedRegion, UsageError
from foveation import GazeTrace

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
HIGH_SSIM = 0.9


def _image(x) -> np.ndarray:
    a = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if a.ndim == 4 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 3:
        raise UsageError(f"expected a (C, H, W) image, got shape {a.shape}")
    return a


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _image(a), _image(b)
    if a.shape != b.shape:
        raise UsageError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def masked_psnr(a, b, mask: np.ndarray) -> float:
    """
    10 log10(1 / MSE) over the masked pixels of every channel, capped at 99 dB.

    :raises UndefinedRegion: if the mask is empty.
    """
    a, b = _pair(a, b)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise UndefinedRegion("PSNR over an empty region")
    diff = (a - b)[:, mask]
    mse = float(np.square(diff).sum() / diff.size)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def ssim_map(a, b) -> np.ndarray:
    """
    Per-pixel SSIM (channel mean), shaped (H, W), with 11x11 Gaussian
    windows (sigma 1.5). Pixels whose window does not fit inside the frame
    are NaN.
    """
    a, b = _pair(a, b)
    h, w = a.shape[1:]
    out = np.full((h, w), np.nan)
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        return out
    _, score = structural_similarity(a, b, gaussian_weights=True, sigma=SSIM_SIGMA,
                                     use_sample_covariance=False, data_range=1.0,
                                     channel_axis=0, full=True)
    r = SSIM_WINDOW // 2
    out[r:h - r, r:w - r] = score.mean(axis=0)[r:h - r, r:w - r]
    return out


def _ssim_over(score: np.ndarray, mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise UndefinedRegion("SSIM over an empty region")
    if rows[-1] - rows[0] + 1 < SSIM_WINDOW or cols[-1] - cols[0] + 1 < SSIM_WINDOW:
        raise UndefinedRegion(f"region thinner than the {SSIM_WINDOW}px SSIM window")
    values = score[mask]
    values = values[~np.isnan(values)]
    if values.size == 0:
        raise UndefinedRegion("no full SSIM window is centered in the region")
    return float(values.mean())


def masked_ssim(a, b, mask: np.ndarray) -> float:
    """
    Mean SSIM over windows centered on masked pixels. Windows are full
    11x11 Gaussian windows (sigma 1.5) and may reach outside the mask.

    :raises UndefinedRegion: if the region is empty or thinner than the window.
    """
    return _ssim_over(ssim_map(a, b), mask)


def high_ssim_area(a, b, threshold: float = HIGH_SSIM) -> int:
    """Number of pixels whose SSIM exceeds threshold."""
    score = ssim_map(a, b)
    return int(np.count_nonzero(np.nan_to_num(score, nan=-1.0) > threshold))


@dataclass
class RegionMasks:
    fovea: np.ndarray
    past_fovea: np.ndarray
    whole: np.ndarray

    def get(self, region: Region) -> np.ndarray:
        return getattr(self, region.value)


def build_region_masks(trace: GazeTrace, t: int, dims: tuple[int, int]) -> RegionMasks:
    """
    fovea = box t; past_fovea = union of boxes 0..t-1 minus box t; whole = every pixel.

    :raises UsageError: if t is outside the trace.
    """
    if not 0 <= t < len(trace):
        raise UsageError(f"frame {t} outside a trace of {len(trace)} frames")
    height, width = dims
    fovea = np.zeros((height, width), dtype=bool)
    box = trace.box(t)
    fovea[box.y0:box.y1, box.x0:box.x1] = True
    past = np.zeros_like(fovea)
    for earlier in trace.boxes[:t]:
        past[earlier.y0:earlier.y1, earlier.x0:earlier.x1] = True
    past &= ~fovea
    return RegionMasks(fovea, past, np.ones_like(fovea))


@dataclass
class MetricRow:
    clip: str
    frame: str
    region: str
    psnr: float
    ssim: float


@dataclass
class MetricReport:
    """
    Per-frame rows; aggregate rows (frame = "mean") are the arithmetic mean
    over the frames where the region was defined.
    """
    rows: list[MetricRow] = field(default_factory=list)

    def aggregates(self) -> list[MetricRow]:
        grouped: dict[tuple[str, str], list[MetricRow]] = {}
        for row in self.rows:
            grouped.setdefault((row.clip, row.region), []).append(row)
        out = []
        for (clip, region), rows in grouped.items():
            out.append(MetricRow(clip, "mean", region,
                                 float(np.mean([r.psnr for r in rows])),
                                 float(np.mean([r.ssim for r in rows]))))
        return out

    def extend(self, other: MetricReport) -> None:
        self.rows.extend(other.rows)

    def select(self, region: Region, clip: str | None = None) -> list[MetricRow]:
        return [r for r in self.rows
                if r.region == region.value and (clip is None or r.clip == clip)]

    def mean(self, region: Region, metric: str = "psnr") -> float:
        """Mean over every clip's frames for one region."""
        rows = self.select(region)
        if not rows:
            raise UndefinedRegion(f"no {region.value} rows in the report")
        return float(np.mean([getattr(r, metric) for r in rows]))


def evaluate_clip(outputs: Sequence, ground_truth: Sequence, trace: GazeTrace,
                  clip: str = "clip") -> MetricReport:
    """
    Rows for fovea, past_fovea and whole on every frame; regions that are
    undefined on a frame (e.g. past_fovea at t = 0) are skipped.

    :raises UsageError: if the sequences and the trace differ in length.
    """
    if not len(outputs) == len(ground_truth) == len(trace):
        raise UsageError(f"length mismatch: {len(outputs)} outputs, "
                         f"{len(ground_truth)} ground-truth frames, {len(trace)} boxes")
    report = MetricReport()
    for t, (out, truth) in enumerate(zip(outputs, ground_truth)):
        out, truth = _pair(out, truth)
        masks = build_region_masks(trace, t, truth.shape[1:])
        score = ssim_map(out, truth)
        for region in Region:
            mask = masks.get(region)
            try:
                psnr = masked_psnr(out, truth, mask)
                ssim = _ssim_over(score, mask)
            except UndefinedRegion as e:
                logger.debug("%s frame %d %s skipped: %s", clip, t, region.value, e)
                continue
            report.rows.append(MetricRow(clip, str(t), region.value, psnr, ssim))
    return report
