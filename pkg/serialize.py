"""
On-disk formats: the binary checkpoint, JSON echoes of configs and report
summaries, and serpy serializers for the objects that go into them.

Checkpoint layout (all integers little-endian uint32):
    magic (8 bytes) | version | header length | header (UTF-8 JSON)
    | record count | records...
    record = name length | name (UTF-8) | rank | extents[rank] | float32 payload
"""
from __future__ import annotations

import dataclasses
import json
import logging
import struct
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import serpy

from errors import ConfigurationError

logger = logging.getLogger(__name__)

MAGIC = b"CRFPCKPT"
VERSION = 1


class EnhancedJSONEncoder(json.JSONEncoder):
    """json.dumps support for dataclasses, enums, paths and numpy scalars."""

    def default(self, o):
        if dataclasses.is_dataclass(o):
            return dataclasses.asdict(o)
        if isinstance(o, Enum):
            return o.value
        if isinstance(o, Path):
            return str(o)
        if isinstance(o, np.generic):
            return o.item()
        return super().default(o)


def serialize(obj: Any) -> str:
    return json.dumps(obj, cls=EnhancedJSONEncoder, sort_keys=True)


def config_echo(config: Any) -> dict:
    """Plain-JSON view of a (nested) config dataclass."""
    return json.loads(serialize(config))


class BoxSerializer(serpy.Serializer):
    x0 = serpy.IntField()
    y0 = serpy.IntField()
    side = serpy.IntField()


class MetricRowSerializer(serpy.Serializer):
    clip = serpy.StrField()
    frame = serpy.StrField()
    region = serpy.StrField()
    psnr = serpy.FloatField()
    ssim = serpy.FloatField()


class GazeTraceSerializer(serpy.Serializer):
    side = serpy.IntField()
    sigma = serpy.FloatField()
    seed = serpy.IntField()
    boxes = BoxSerializer(many=True)


class ReportSummarySerializer(serpy.Serializer):
    """Aggregates of a MetricReport, grouped per clip."""
    clips = serpy.MethodField()
    frames = serpy.MethodField()

    def get_clips(self, report) -> dict:
        out: dict[str, dict] = {}
        for row in report.aggregates():
            out.setdefault(row.clip, {})[row.region] = {"psnr": row.psnr, "ssim": row.ssim}
        return out

    def get_frames(self, report) -> int:
        return len({(row.clip, row.frame) for row in report.rows})


def write_summary(report, path: Path, extra: dict | None = None) -> None:
    """Report aggregates (plus optional run metadata) as JSON."""
    data = ReportSummarySerializer(report).data
    if extra:
        data.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, cls=EnhancedJSONEncoder, indent=2, sort_keys=True),
                    encoding="utf-8")


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def save_checkpoint(path: Path, arrays: dict[str, np.ndarray], header: dict) -> None:
    """
    Write named float arrays in insertion order, with a JSON header.

    :raises OSError: if the file cannot be written.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    header_bytes = json.dumps(header, cls=EnhancedJSONEncoder, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_u32(VERSION))
        f.write(_u32(len(header_bytes)))
        f.write(header_bytes)
        f.write(_u32(len(arrays)))
        for name, array in arrays.items():
            encoded = name.encode("utf-8")
            f.write(_u32(len(encoded)))
            f.write(encoded)
            f.write(_u32(array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
    logger.debug("checkpoint %s: %d arrays", path, len(arrays))


class _Reader:
    def __init__(self, data: bytes, path: Path) -> None:
        self.data, self.offset, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise ConfigurationError(f"checkpoint {self.path} is truncated")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: Path) -> tuple[dict[str, np.ndarray], dict]:
    """
    Read a checkpoint back as (arrays, header).

    :raises ConfigurationError: on a bad magic, unknown version or truncated file.
    :raises OSError: if the file cannot be read.
    """
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise ConfigurationError(f"{path} is not a checkpoint")
    version = reader.u32()
    if version != VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(reader.take(reader.u32()).decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape).astype(
            np.float32)
    return arrays, header
