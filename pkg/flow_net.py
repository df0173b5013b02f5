"""
Encoder-decoder optical flow estimator.

Three encoder blocks (two conv + LeakyReLU, then 2x2 average pooling), three
decoder blocks (bilinear x2 up-sampling, concatenation with the encoder
feature of the same resolution, two conv + LeakyReLU) and a head
conv -> LeakyReLU -> conv -> tanh scaled by flow_range.

The returned flow F_t satisfies x_t(p) ~ x_prev(p + F_t(p)): channel 0 is dx,
channel 1 is dy, both in LR pixels.
"""
from __future__ import annotations

import logging

from errors import ConfigurationError
from tensor_engine import (ConvLayer, ParameterSet, Tensor, avg_pool2, bilinear_resize,
                           channel_concat, crop, leaky_relu, pad_reflect, tanh)

logger = logging.getLogger(__name__)

FLOW_GROUP = "flow"
DEPTH = 3
POOLING = 2 ** DEPTH


class FlowNet:
    """
    Attributes:
        params (ParameterSet): registry holding the "flow.*" tensors (possibly
            shared with a larger model).
        channels (int): hidden width of every block.
        flow_range (float): bound on |F| in LR pixels.
    """

    def __init__(self, params: ParameterSet, channels: int, flow_range: float) -> None:
        if channels < 1 or flow_range <= 0:
            raise ConfigurationError(
                f"flow net needs channels > 0 and flow_range > 0, got {channels}, {flow_range}")
        self.params = params
        self.channels = channels
        self.flow_range = flow_range

        k = channels
        self.encoder: list[tuple[ConvLayer, ConvLayer]] = []
        in_ch = 6
        for i in range(DEPTH):
            self.encoder.append((params.conv(f"{FLOW_GROUP}.enc{i}.0", in_ch, k),
                                 params.conv(f"{FLOW_GROUP}.enc{i}.1", k, k)))
            in_ch = k
        self.decoder: list[tuple[ConvLayer, ConvLayer]] = []
        for i in reversed(range(DEPTH)):
            self.decoder.append((params.conv(f"{FLOW_GROUP}.dec{i}.0", 2 * k, k),
                                 params.conv(f"{FLOW_GROUP}.dec{i}.1", k, k)))
        self.head = (params.conv(f"{FLOW_GROUP}.head.0", k, k),
                     params.conv(f"{FLOW_GROUP}.head.1", k, 2))
        logger.debug("flow net: %d parameters", self.param_count())

    def param_count(self) -> int:
        return self.params.count(FLOW_GROUP)

    def __call__(self, x_t: Tensor, x_prev: Tensor) -> Tensor:
        return flow_forward(self, x_t, x_prev)


def build_flow_net(channels: int = 16, flow_range: float = 10.0, seed: int = 0) -> FlowNet:
    """Standalone flow net with its own parameter registry."""
    return FlowNet(ParameterSet(seed), channels, flow_range)


def _block(layers: tuple[ConvLayer, ConvLayer], x: Tensor) -> Tensor:
    first, second = layers
    return leaky_relu(second(leaky_relu(first(x))))


def flow_forward(net: FlowNet, x_t: Tensor, x_prev: Tensor) -> Tensor:
    """
    Flow from the current LR frame to the previous one, shape (B, 2, H, W).

    :pre: both frames (B, 3, H, W) with H and W divisible by 8.
    :raises ConfigurationError: if the frames disagree or are not divisible by 8.
    """
    if x_t.shape != x_prev.shape or x_t.ndim != 4 or x_t.shape[1] != 3:
        raise ConfigurationError(f"flow_forward needs two (B, 3, H, W) frames, "
                                 f"got {x_t.shape} and {x_prev.shape}")
    if x_t.shape[2] % POOLING or x_t.shape[3] % POOLING:
        raise ConfigurationError(
            f"flow_forward needs spatial dims divisible by {POOLING}, got {x_t.shape[2:]}")

    x = channel_concat([x_t, x_prev])
    skips = []
    for layers in net.encoder:
        x = _block(layers, x)
        skips.append(x)
        x = avg_pool2(x)
    for layers, skip in zip(net.decoder, reversed(skips)):
        x = bilinear_resize(x, 2)
        x = _block(layers, channel_concat([x, skip]))
    first, second = net.head
    return tanh(second(leaky_relu(first(x)))) * net.flow_range


def padded_flow(net: FlowNet, x_t: Tensor, x_prev: Tensor) -> Tensor:
    """
    flow_forward on frames of any size: reflect-pad bottom/right up to a
    multiple of 8, then crop the flow back to the input extent.
    """
    h, w = x_t.shape[2:]
    bottom = -h % POOLING
    right = -w % POOLING
    if not bottom and not right:
        return flow_forward(net, x_t, x_prev)
    flow = flow_forward(net, pad_reflect(x_t, bottom, right), pad_reflect(x_prev, bottom, right))
    return crop(flow, 0, 0, h, w)
