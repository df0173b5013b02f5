from enum import Enum


class TraceKind(Enum):
    RASTER = "raster"
    HORIZONTAL = "horizontal"
    TRACKER = "tracker"


class Region(Enum):
    FOVEA = "fovea"
    PAST_FOVEA = "past_fovea"
    WHOLE = "whole"


class Activation(Enum):
    LEAKY_RELU = "leaky_relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"


# Slope shared by every LeakyReLU in the network.
LEAKY_SLOPE = 0.1

# Gaze noise presets exposed on the command line.
TRACKER_SIGMAS = (10.0, 50.0, 100.0)

PSNR_CAP_DB = 99.0
