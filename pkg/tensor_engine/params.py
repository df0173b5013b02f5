""" Named parameter registry and the convolution layer built on it. """
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from constants import LEAKY_SLOPE
from errors import ConfigurationError
from tensor_engine.conv import conv2d
from tensor_engine.tensor import Tensor, get_default_dtype

logger = logging.getLogger(__name__)


@dataclass
class ConvLayer:
    """A registered (weight, bias) pair. Calling it runs conv2d."""
    name: str
    weight: Tensor
    bias: Tensor

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor, stride: int = 1, padding: int | None = None) -> Tensor:
        if padding is None:
            padding = self.weight.shape[2] // 2
        return conv2d(x, self.weight, self.bias, stride=stride, padding=padding)


class ParameterSet:
    """
    Ordered name -> Tensor mapping.

    Names are dotted ("crfp.fa0.in.weight"); the first component is the
    parameter group. Registration order is the initialisation order, so a
    seed fully determines every value.
    """

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.tensors: dict[str, Tensor] = {}

    def __len__(self) -> int:
        return len(self.tensors)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def add(self, name: str, data: np.ndarray) -> Tensor:
        """
        :raises ConfigurationError: if the name is already registered.
        """
        if name in self.tensors:
            raise ConfigurationError(f"parameter {name!r} registered twice")
        tensor = Tensor(data, requires_grad=True, name=name)
        self.tensors[name] = tensor
        return tensor

    def conv(self, name: str, in_channels: int, out_channels: int, kernel: int = 3,
             gain: float = 1.0) -> ConvLayer:
        """
        Register a conv layer: fan-in scaled uniform weights, zero bias.

        The bound sqrt(6 / ((1 + slope^2) * fan_in)) keeps activations at unit
        scale through LeakyReLU stacks; gain shrinks it for residual branches.
        """
        fan_in = in_channels * kernel * kernel
        bound = gain * math.sqrt(6.0 / ((1.0 + LEAKY_SLOPE ** 2) * fan_in))
        weight = self.rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel, kernel))
        return ConvLayer(
            name,
            self.add(f"{name}.weight", weight.astype(get_default_dtype())),
            self.add(f"{name}.bias", np.zeros(out_channels, dtype=get_default_dtype())),
        )

    def group(self, prefix: str) -> dict[str, Tensor]:
        """Every parameter whose name starts with prefix + '.'."""
        return {name: t for name, t in self.tensors.items() if name.startswith(prefix + ".")}

    def count(self, prefix: str | None = None) -> int:
        tensors = self.tensors.values() if prefix is None else self.group(prefix).values()
        return sum(t.size for t in tensors)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        """
        Overwrite every parameter in place.

        :raises ConfigurationError: on missing, unexpected or reshaped entries.
        """
        missing = set(self.tensors) - set(arrays)
        unexpected = set(arrays) - set(self.tensors)
        if missing or unexpected:
            raise ConfigurationError(
                f"checkpoint does not match model: missing {sorted(missing)[:5]}, "
                f"unexpected {sorted(unexpected)[:5]}")
        for name, tensor in self.tensors.items():
            value = arrays[name]
            if value.shape != tensor.shape:
                raise ConfigurationError(
                    f"parameter {name!r} has shape {value.shape}, model expects {tensor.shape}")
            tensor.data = np.ascontiguousarray(value, dtype=tensor.data.dtype)
        logger.debug("loaded %d parameters", len(self.tensors))
