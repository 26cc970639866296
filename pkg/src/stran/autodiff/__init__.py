"""Minimal NCHW tensor library with reverse-mode differentiation."""
from .gradcheck import GradCheckReport, directional_check, grad_check, numerical_grad
from .ops import (
    absolute,
    add,
    add_scalar,
    block_map,
    concat_channels,
    conv2d,
    elementwise,
    leaky_relu,
    mul,
    pixel_shuffle,
    pixel_unshuffle,
    power,
    reduce,
    sample_norm,
    scale,
    separable_map,
    slice_channels,
    square,
    sub,
)
from .tensor import (
    CHECK_DTYPE,
    COMPUTE_DTYPE,
    Function,
    Parameter,
    ShapeError,
    Tensor,
    backward,
    input_gradient,
    is_grad_enabled,
    no_grad,
    set_grad_enabled,
    zero_grads,
)
