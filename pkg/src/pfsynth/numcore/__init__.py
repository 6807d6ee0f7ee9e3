"""Minimal tensor library: reverse-mode autodiff, conv/pool/dense layers,
binary cross-entropy, Adam, seeded Gaussian sampling and checkpoint files."""

from .checkpoint import CheckpointError, ModelCheckpoint, pack, restore_optimizer
from .layers import (
    LEAKY_SLOPE,
    activation_apply,
    conv2d,
    conv2d_transpose,
    dense,
    leaky_relu,
    maxpool2d,
    relu,
    sigmoid,
    tanh,
)
from .losses import BCE_EPS, bce_loss
from .model import Act, Conv, ConvT, Dense, Flatten, LayerSpec, MaxPool, Reshape, Sequential, output_shape
from .optim import AdamState, MissingGradientError, adam_step
from .rng import Rng, gaussian_sample
from .tensor import GraphError, ShapeError, Tensor, backward, clip, flatten, log, no_grad, reshape

__all__ = [name for name in dir() if not name.startswith("_")]
