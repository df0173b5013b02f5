"""
The CRFP network: LR and fovea encoders, feature aggregators with
flow-guided deformable alignment and DCN state vectors, the output block and
the per-frame recurrent step.

Resolution bookkeeping for scale 8 and L aggregators:
    x_lr (h, w) -> h^0 at (2h, 2w) -> FA 0 .. L-2 at (2h, 2w)
    -> x4 up-sampler -> FA L-1 at (8h, 8w) -> output block at (8h, 8w)
The HR feedback and its flow-warped copy reach the low-resolution
aggregators through one shared (tied) x4 down-sampler and reach the final
aggregator unchanged.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence, Union

from config import CrfpConfig
from errors import ConfigurationError, UsageError
from flow_net import FlowNet, padded_flow
from tensor_engine import (ConvLayer, ParameterSet, Tensor, bilinear_resize, channel_concat,
                           channel_slice, crop, crop_boxes, dcn_lite, leaky_relu, paste,
                           paste_boxes, pixel_shuffle_up, pixel_unshuffle_down, sigmoid, tanh,
                           upsample_flow, warp_bilinear)
from utils import Box, centered_window

logger = logging.getLogger(__name__)

CRFP_GROUP = "crfp"
LR_UPSCALE = 2
HR_UPSCALE = 4

Boxes = Union[Box, Sequence[Box]]


@dataclass
class RecurrentState:
    """
    Attributes:
        feedback: fovea-fused HR feature of the previous frame, (B, hr, 8h, 8w).
        dsv: one DCN state vector per aggregator at that aggregator's resolution.
        prev_lr: previous LR frame.
        boxes: realized fovea boxes so far, one tuple (per batch element) per frame.
    """
    feedback: Tensor
    dsv: list[Tensor]
    prev_lr: Tensor
    boxes: list[tuple[Box, ...]] = field(default_factory=list)

    def detach(self) -> RecurrentState:
        """Same values with the gradient history cut (truncated backpropagation)."""
        return RecurrentState(self.feedback.detach(), [z.detach() for z in self.dsv],
                              self.prev_lr.detach(), list(self.boxes))

    def shapes(self) -> list[tuple[int, ...]]:
        return [self.feedback.shape] + [z.shape for z in self.dsv] + [self.prev_lr.shape]


@dataclass
class Aggregator:
    """Layers of one feature aggregator."""
    level: int
    width: int
    pass_channels: int
    dsv_channels: int
    hr_ratio: float
    inp: ConvLayer
    agg: ConvLayer
    mask: ConvLayer
    offset: ConvLayer
    dcn: ConvLayer
    res: list[tuple[ConvLayer, ConvLayer]]
    head: ConvLayer


def _as_boxes(boxes: Boxes) -> tuple[Box, ...]:
    if isinstance(boxes, Box):
        return (boxes,)
    return tuple(boxes)


class CrfpModel:
    """
    Parameters live in one ParameterSet: "crfp.*" for the network and "flow.*"
    for the flow estimator.
    """

    def __init__(self, config: CrfpConfig, params: ParameterSet | None = None) -> None:
        config.validate()
        self.config = config
        self.params = params if params is not None else ParameterSet(config.seed)
        p = self.params
        c, hr = config.base_channels, config.hr_channels

        self.flow = FlowNet(p, config.flow_channels, config.flow_range)
        self.enc_lr = (p.conv(f"{CRFP_GROUP}.enc_lr.0", 3, c),
                       p.conv(f"{CRFP_GROUP}.enc_lr.1", c, c))
        self.up2 = p.conv(f"{CRFP_GROUP}.up2", c, c * LR_UPSCALE ** 2)
        self.enc_fv = (p.conv(f"{CRFP_GROUP}.enc_fv.0", 6, c),
                       p.conv(f"{CRFP_GROUP}.enc_fv.1", c, hr))
        self.down4 = p.conv(f"{CRFP_GROUP}.down4", hr * HR_UPSCALE ** 2, c)

        ratio = LR_UPSCALE / config.scale
        self.aggregators = [
            self._aggregator(level, c, config.pass_channels, config.dsv_channels, ratio)
            for level in range(config.levels - 1)
        ]
        self.up4_h = p.conv(f"{CRFP_GROUP}.up4_h", c, hr * HR_UPSCALE ** 2)
        self.up4_d = (p.conv(f"{CRFP_GROUP}.up4_d", c, hr * HR_UPSCALE ** 2)
                      if config.flow_propagation else None)
        hr_pass, hr_dsv = config.hr_split
        self.aggregators.append(self._aggregator(config.levels - 1, hr, hr_pass, hr_dsv, 1.0))

        self.fb = p.conv(f"{CRFP_GROUP}.fb", 2 * hr, hr)
        self.out = p.conv(f"{CRFP_GROUP}.out", hr, 3)
        logger.debug("CRFP model: %d parameters (%d in flow net)",
                     self.param_count(), self.flow.param_count())

    def _aggregator(self, level: int, width: int, pass_channels: int, dsv_channels: int,
                    hr_ratio: float) -> Aggregator:
        p = self.params
        name = f"{CRFP_GROUP}.fa{level}"
        res = [(p.conv(f"{name}.res0.0", 3 * width, width),
                p.conv(f"{name}.res0.1", width, width, gain=0.1))]
        for i in range(1, self.config.res_blocks):
            res.append((p.conv(f"{name}.res{i}.0", width, width),
                        p.conv(f"{name}.res{i}.1", width, width, gain=0.1)))
        return Aggregator(
            level=level, width=width, pass_channels=pass_channels, dsv_channels=dsv_channels,
            hr_ratio=hr_ratio,
            inp=p.conv(f"{name}.in", 2 * width + 2 + dsv_channels, width),
            agg=p.conv(f"{name}.agg", 2 * width if self.config.flow_propagation else width, width),
            mask=p.conv(f"{name}.mask", width, 1),
            offset=p.conv(f"{name}.offset", width, 2),
            dcn=p.conv(f"{name}.dcn", width, width),
            res=res,
            head=p.conv(f"{name}.head", pass_channels, width),
        )

    # Encoders and resamplers

    def encode_lr(self, x_lr: Tensor) -> Tensor:
        """h^0 = S_up2(E_LR(x_lr)), (B, 3, h, w) -> (B, C, 2h, 2w)."""
        first, second = self.enc_lr
        x = leaky_relu(second(leaky_relu(first(x_lr))))
        return leaky_relu(pixel_shuffle_up(self.up2(x), LR_UPSCALE))

    def encode_fovea(self, x_fov: Tensor, x_lr: Tensor, boxes: Boxes) -> Tensor:
        """
        E_Fv(x_fov ++ crop(bilinear x8 of x_lr, box)), (B, hr, side, side).

        :raises UsageError: if a box leaves the HR frame or does not match the crop size.
        """
        boxes = _as_boxes(boxes)
        up = bilinear_resize(x_lr, self.config.scale)
        height, width = up.shape[2:]
        side = x_fov.shape[2]
        for box in boxes:
            if box.side != side or not box.inside(height, width):
                raise UsageError(f"fovea box {box} invalid for {side}px crops "
                                 f"on a {height}x{width} frame")
        lr_crop = crop_boxes(up, [b.origin for b in boxes], side, side)
        first, second = self.enc_fv
        x = channel_concat([x_fov, lr_crop])
        return leaky_relu(second(leaky_relu(first(x))))

    def downsample(self, x_hr: Tensor) -> Tensor:
        """Tied S_down4 block: pixel unshuffle then conv to the base width."""
        return leaky_relu(self.down4(pixel_unshuffle_down(x_hr, HR_UPSCALE)))

    def _upsample(self, layer: ConvLayer, x: Tensor) -> Tensor:
        return leaky_relu(pixel_shuffle_up(layer(x), HR_UPSCALE))

    # Feature aggregation

    def aligned_feature(self, level: int, feedback: Tensor, d_next: Tensor) -> Tensor:
        """
        h-dot: DCN over the (down-sampled) feedback with masks and offsets
        predicted from D^{l+1}. In fast mode only a centered window is
        computed and h-dot is zero elsewhere.
        """
        fa = self.aggregators[level]
        masks = sigmoid(fa.mask(d_next))
        offsets = tanh(fa.offset(d_next)) * self.config.offset_range
        if self.config.fast_region is None:
            return dcn_lite(feedback, offsets, masks, fa.dcn.weight, fa.dcn.bias)

        height, width = feedback.shape[2:]
        side = max(1, round(self.config.fast_region * fa.hr_ratio))
        y0, x0, h, w = centered_window(height, width, side)
        inner = dcn_lite(crop(feedback, y0, x0, h, w), crop(offsets, y0, x0, h, w),
                         crop(masks, y0, x0, h, w), fa.dcn.weight, fa.dcn.bias)
        return paste(inner, y0, x0, height, width)

    def feature_aggregate(self, level: int, h_l: Tensor, feedback_ds: Tensor, warped_ds: Tensor,
                          flow_up: Tensor, d_prev: Tensor, dsv: Tensor,
                          probe: dict | None = None) -> tuple[Tensor, Tensor, Tensor]:
        """
        One feature aggregator. Returns (h^{l+1}, D^{l+1}, z^{l+1}).

            D = C_FA(C_in(warped ++ h ++ flow ++ W(z, flow)) ++ D_prev)
            h-dot = DCN(feedback; tanh(C_O(D)) * range, sigmoid(C_M(D)))
            y = Res(h-dot ++ warped ++ h), split into pass and DSV channels
            h^{l+1} = C_h(pass)

        With crfp.flow_propagation off, D_prev is not an input and D is
        C_FA(C_in(...)) alone.

        :raises ConfigurationError: if the inputs are not at one resolution.
        """
        fa = self.aggregators[level]
        extent = h_l.shape[2:]
        for tensor in (feedback_ds, warped_ds, flow_up, d_prev, dsv):
            if tensor.shape[2:] != extent:
                raise ConfigurationError(
                    f"aggregator {level}: input {tensor.shape} not at resolution {extent}")

        parts = [warped_ds, h_l, flow_up]
        if fa.dsv_channels:
            parts.append(warp_bilinear(dsv, flow_up))
        fused = leaky_relu(fa.inp(channel_concat(parts)))
        if self.config.flow_propagation:
            fused = channel_concat([fused, d_prev])
        d_next = leaky_relu(fa.agg(fused))

        h_dot = self.aligned_feature(level, feedback_ds, d_next)
        if probe is not None:
            probe.setdefault("h_dot", []).append(h_dot)

        (conv1, conv2), rest = fa.res[0], fa.res[1:]
        y = h_l + conv2(leaky_relu(conv1(channel_concat([h_dot, warped_ds, h_l]))))
        for conv1, conv2 in rest:
            y = y + conv2(leaky_relu(conv1(y)))

        if fa.dsv_channels:
            pass_part = channel_slice(y, 0, fa.pass_channels)
            dsv_next = channel_slice(y, fa.pass_channels, fa.width)
        else:
            pass_part = y
            dsv_next = Tensor.zeros((y.shape[0], 0) + extent)
        return leaky_relu(fa.head(pass_part)), d_next, dsv_next

    # Output

    def output_block(self, h_last: Tensor, h_fovea: Tensor | None, boxes: Boxes,
                     x_lr: Tensor) -> tuple[Tensor, Tensor]:
        """
        feedback = C_fb(h_last ++ fovea plane); x_hat = C_out(feedback) + bilinear x8 of x_lr.

        The fovea plane holds h_fovea at its box and zeros elsewhere (all zeros
        when h_fovea is None).

        :raises UsageError: if a box leaves the frame.
        """
        height, width = h_last.shape[2:]
        if h_fovea is None:
            plane = Tensor.zeros(h_last.shape)
        else:
            boxes = _as_boxes(boxes)
            for box in boxes:
                if not box.inside(height, width):
                    raise UsageError(f"fovea box {box} outside the {height}x{width} frame")
            plane = paste_boxes(h_fovea, [b.origin for b in boxes], height, width)
        feedback = self.fb(channel_concat([h_last, plane]))
        x_hat = self.out(feedback) + bilinear_resize(x_lr, self.config.scale)
        return x_hat, feedback

    def step(self, state: RecurrentState, x_lr: Tensor, x_fov: Tensor | None, boxes: Boxes,
             probe: dict | None = None) -> tuple[Tensor, RecurrentState]:
        """
        Super-resolve one frame and advance the recurrent state.

        probe, when given, collects intermediates: "flow", "d0" and "h_dot"
        (one entry per aggregator).
        """
        cfg = self.config
        boxes = _as_boxes(boxes)
        flow = padded_flow(self.flow, x_lr, state.prev_lr)
        flow_hr = upsample_flow(flow, cfg.scale)
        flow_lr2 = upsample_flow(flow, LR_UPSCALE)
        warped = warp_bilinear(state.feedback, flow_hr)
        feedback_ds = self.downsample(state.feedback)
        warped_ds = self.downsample(warped)

        h = self.encode_lr(x_lr)
        # D^0 is zero at every time step.
        d = Tensor.zeros(h.shape)
        if probe is not None:
            probe["flow"] = flow
            probe["d0"] = d
        dsv_next = []
        last = cfg.levels - 1
        for level in range(last):
            h, d, z = self.feature_aggregate(level, h, feedback_ds, warped_ds, flow_lr2, d,
                                             state.dsv[level], probe)
            dsv_next.append(z)
            if not cfg.flow_propagation:
                d = Tensor.zeros(h.shape)
        h = self._upsample(self.up4_h, h)
        if cfg.flow_propagation:
            d = self._upsample(self.up4_d, d)
        else:
            d = Tensor.zeros(h.shape)
        h, d, z = self.feature_aggregate(last, h, state.feedback, warped, flow_hr, d,
                                         state.dsv[last], probe)
        dsv_next.append(z)

        h_fovea = None
        if cfg.use_fovea:
            if x_fov is None:
                raise UsageError("fovea crop required unless crfp.use_fovea is false")
            h_fovea = self.encode_fovea(x_fov, x_lr, boxes)
        x_hat, feedback = self.output_block(h, h_fovea, boxes, x_lr)
        return x_hat, RecurrentState(feedback, dsv_next, x_lr, state.boxes + [boxes])

    def reset_state(self, first_lr: Tensor) -> RecurrentState:
        return reset_state(self.config, first_lr)

    def param_count(self) -> int:
        return param_count(self)

    def forward_path_count(self) -> int:
        """Parameters of the aggregator heads that carry pass channels forward."""
        return sum(self.params.count(f"{CRFP_GROUP}.fa{fa.level}.head") for fa in self.aggregators)


def reset_state(config: CrfpConfig, first_lr: Tensor) -> RecurrentState:
    """
    Zero state for the first frame of a clip. prev_lr is the first frame
    itself, so the first flow is a self-flow.
    """
    b, _, h, w = first_lr.shape
    lr2 = (LR_UPSCALE * h, LR_UPSCALE * w)
    hr = (config.scale * h, config.scale * w)
    _, hr_dsv = config.hr_split
    dsv = [Tensor.zeros((b, config.dsv_channels) + lr2) for _ in range(config.levels - 1)]
    dsv.append(Tensor.zeros((b, hr_dsv) + hr))
    return RecurrentState(Tensor.zeros((b, config.hr_channels) + hr), dsv, first_lr.detach())


def param_count(model: CrfpModel) -> int:
    """Scalar parameters across every group, flow net included."""
    return model.params.count()
