from .checkpoint import load_checkpoint, save_checkpoint
from .kernels import BACKEND
from .layers import Conv2d, MaxPool2d, ReLU, SkipAdd, SoftmaxPerPixel, TransposedConv2d, is_conv
from .model import (
    ModelGraph,
    backward,
    forward,
    loss_value,
    predict,
    reference_fcn,
    vgg16_fcn_descriptor,
)
from .train import Dataset, TrainConfig, TrainResult, evaluate_accuracy, train

__all__ = [
    "BACKEND",
    "Conv2d",
    "Dataset",
    "MaxPool2d",
    "ModelGraph",
    "ReLU",
    "SkipAdd",
    "SoftmaxPerPixel",
    "TrainConfig",
    "TrainResult",
    "TransposedConv2d",
    "backward",
    "evaluate_accuracy",
    "forward",
    "is_conv",
    "load_checkpoint",
    "loss_value",
    "predict",
    "reference_fcn",
    "save_checkpoint",
    "train",
    "vgg16_fcn_descriptor",
]
