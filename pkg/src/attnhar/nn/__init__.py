"""Small float64 reverse-mode tensor core used by the HAR models."""

from .checkpoint import CheckpointError, dumps_checkpoint, load_state, read_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check
from .layers import BatchNorm, Conv2d, Dense, Module, cross_entropy_l2, same_padding
from .optim import sgd_step
from .tensor import Parameter, Tensor, enable_grad, no_grad

__all__ = [
    "BatchNorm", "CheckpointError", "Conv2d", "Dense", "Module", "Parameter", "Tensor",
    "cross_entropy_l2", "dumps_checkpoint", "finite_diff_check", "load_state", "enable_grad", "no_grad",
    "read_checkpoint", "same_padding", "save_checkpoint", "sgd_step",
]
