from tensor_engine.tensor import GradientTape, Tensor, backward, default_dtype, get_default_dtype
from tensor_engine.conv import avg_pool2, conv2d
from tensor_engine.activations import activation, leaky_relu, sigmoid, tanh
from tensor_engine.layout import (channel_concat, channel_slice, crop, crop_boxes, pad_reflect,
                                  paste, paste_boxes, pixel_shuffle_up, pixel_unshuffle_down)
from tensor_engine.sampling import (bicubic_resize, bilinear_resize, dcn_lite, upsample_flow,
                                    warp_bilinear)
from tensor_engine.gradcheck import finite_diff_check
from tensor_engine.params import ConvLayer, ParameterSet

__all__ = [
    "GradientTape", "Tensor", "backward", "default_dtype", "get_default_dtype",
    "avg_pool2", "conv2d",
    "activation", "leaky_relu", "sigmoid", "tanh",
    "channel_concat", "channel_slice", "crop", "crop_boxes", "pad_reflect", "paste",
    "paste_boxes", "pixel_shuffle_up", "pixel_unshuffle_down",
    "bicubic_resize", "bilinear_resize", "dcn_lite", "upsample_flow", "warp_bilinear",
    "finite_diff_check",
    "ConvLayer", "ParameterSet",
]
