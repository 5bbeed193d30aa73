from .core import DEFAULT_DTYPE, Tensor, as_tensor, no_grad, set_debug, stack_sum
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    BatchNormState,
    ConvParams,
    batch_norm,
    conv2d,
    linear,
    nll_from_probs,
    relu,
    softmax,
    softmax_cross_entropy,
    softmax_t,
    transpose,
)

__all__ = [
    "DEFAULT_DTYPE", "Tensor", "as_tensor", "no_grad", "set_debug", "stack_sum",
    "GradCheckReport", "grad_check",
    "BatchNormState", "ConvParams", "batch_norm", "conv2d", "linear", "nll_from_probs",
    "relu", "softmax", "softmax_cross_entropy", "softmax_t", "transpose",
]
