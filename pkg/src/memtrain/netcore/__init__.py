"""Dense numpy network engine used for the digital half of training."""

from .io import CheckpointError, load_tensors, save_tensors
from .layers import (Add, AvgPool, BatchNorm, Conv2d, GlobalAvgPool, LabelOutOfRange, Layer,
                     Linear, MaxPool, ReLU, ShapeError, cross_entropy)
from .model import (INPUT, PRESETS, Context, ModelSpec, backward_ref, build_model, forward_ref,
                    init_buffers, init_params, lenet, resnet18, vgg8)
from .optim import AdamW, PlateauScheduler, lr_on_plateau
from .quant import fake_quantize, fake_quantize_grad, quant_step

__all__ = [
    "INPUT", "PRESETS", "AdamW", "Add", "AvgPool", "BatchNorm", "CheckpointError", "Context",
    "Conv2d", "GlobalAvgPool", "LabelOutOfRange", "Layer", "Linear", "MaxPool", "ModelSpec",
    "PlateauScheduler", "ReLU", "ShapeError", "backward_ref", "build_model", "cross_entropy",
    "fake_quantize", "fake_quantize_grad", "forward_ref", "init_buffers", "init_params", "lenet",
    "load_tensors", "lr_on_plateau", "quant_step", "resnet18", "save_tensors", "vgg8",
]
