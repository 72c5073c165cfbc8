"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .conv import conv2d, transposed_conv2d
from .ops import (
    abs,
    add,
    clamp_max,
    clamp_min,
    concat,
    getitem,
    leaky_relu,
    mean,
    mul,
    neg,
    relu,
    reshape,
    scale,
    space_to_depth,
    split,
    sub,
    sum,
    transpose,
    upsample_nearest,
    where,
)
from .params import AdamState, MissingGradientError, ParameterStore, adam_step
from .sampling import masked_maxpool2d, maxpool2d, sample_linear_x
from .tensor import (
    NonFiniteError,
    Tape,
    TapeError,
    Tensor,
    as_tensor,
    backward,
    from_op,
    get_dtype,
    precision,
    set_dtype,
)
