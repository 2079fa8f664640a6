from . import ops
from .nn import Conv2d, Dense, GroupNorm, LayerNorm, Module, Parameter
from .optim import Adam, adam_step
from .tensor import Tensor, as_tensor, default_dtype, is_grad_enabled, no_grad, shadow_precision

__all__ = [
    "Adam", "Conv2d", "Dense", "GroupNorm", "LayerNorm", "Module", "Parameter", "Tensor",
    "adam_step", "as_tensor", "default_dtype", "is_grad_enabled", "no_grad", "ops",
    "shadow_precision",
]
