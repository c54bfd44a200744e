"""Road extraction from satellite imagery on a small numpy autograd core.

Layers: a 4-D tensor type with reverse-mode differentiation, dilated and
depthwise-separable convolutions, a densely connected dilated pyramid (with
a parallel-branch pyramid as baseline), channel attention, an encoder-decoder
segmentation model, training with Adam and exponential learning-rate decay,
overlap-free tiling of large imagery, and closed-form operation counting.
"""

from .checkpoint import load_model, save_model
from .data import synth_roads
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DomainError,
    GradError,
    ShapeError,
)
from .metrics import ConfusionCounts, confusion, f1, iou, precision, recall
from .model import BackboneConfig, Model, ModelConfig, toy_config
from .optim import Adam, DecaySchedule
from .profiler import ops_separable, ops_standard, profile_model
from .pyramid import DenseCascadeConfig, ParallelPyramidConfig
from .tensor import (
    BatchNormParams,
    Tensor,
    batch_norm,
    bilinear_upsample,
    broadcast_spatial,
    concat_channels,
    global_avg_pool,
    he_uniform,
    init_batch_norm,
    no_grad,
    relu,
    set_default_dtype,
    sigmoid,
)
from .training import evaluate, train_model

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BackboneConfig",
    "BatchNormParams",
    "CheckpointError",
    "ConfigError",
    "ConfusionCounts",
    "DataError",
    "DecaySchedule",
    "DenseCascadeConfig",
    "DomainError",
    "GradError",
    "Model",
    "ModelConfig",
    "ParallelPyramidConfig",
    "ShapeError",
    "Tensor",
    "batch_norm",
    "bilinear_upsample",
    "broadcast_spatial",
    "concat_channels",
    "confusion",
    "evaluate",
    "f1",
    "global_avg_pool",
    "he_uniform",
    "init_batch_norm",
    "iou",
    "load_model",
    "no_grad",
    "ops_separable",
    "ops_standard",
    "precision",
    "profile_model",
    "recall",
    "relu",
    "save_model",
    "set_default_dtype",
    "sigmoid",
    "synth_roads",
    "toy_config",
    "train_model",
    "__version__",
]
