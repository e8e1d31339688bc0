from .conv import (
    col2im,
    conv2d,
    conv2d_grad_input,
    conv2d_grad_weight,
    global_avg_pool2d,
    im2col,
    output_extent,
    pool2d,
)
from .elementwise import (
    add,
    div,
    ew_binary,
    ew_unary,
    exp,
    greater_equal,
    log,
    maximum,
    mul,
    neg,
    relu,
    sigmoid,
    sqrt,
    square,
    step,
    sub,
    tanh,
)
from .embedding import gather_rows, scatter_add
from .linalg import batch_matmul, matmul
from .losses import softmax_xent, softmax_xent_grad
from .primitive import Primitive, Traced, get_primitive, registered_primitives
from .recurrent import lstm_scan, lstm_scan_grad
from .reduction import reduce, reduce_max, reduce_mean, reduce_sum
from .rng import RngState, gaussian, noise_stream, permutation, shuffle_stream, uniform
from .shape_ops import (
    broadcast_to,
    concat,
    pad_axis,
    reshape,
    shift_right,
    slice_axis,
    sum_to_shape,
    transpose,
)
from .tensor import INDEX_DTYPE, Tensor, TensorSpec, as_tensor

__all__ = [
    "INDEX_DTYPE",
    "Primitive",
    "RngState",
    "Tensor",
    "TensorSpec",
    "Traced",
    "add",
    "as_tensor",
    "batch_matmul",
    "broadcast_to",
    "col2im",
    "concat",
    "conv2d",
    "conv2d_grad_input",
    "conv2d_grad_weight",
    "div",
    "ew_binary",
    "ew_unary",
    "exp",
    "gather_rows",
    "gaussian",
    "get_primitive",
    "global_avg_pool2d",
    "greater_equal",
    "im2col",
    "log",
    "lstm_scan",
    "lstm_scan_grad",
    "matmul",
    "maximum",
    "mul",
    "neg",
    "noise_stream",
    "output_extent",
    "pad_axis",
    "permutation",
    "pool2d",
    "reduce",
    "reduce_max",
    "reduce_mean",
    "reduce_sum",
    "registered_primitives",
    "relu",
    "reshape",
    "scatter_add",
    "shift_right",
    "shuffle_stream",
    "sigmoid",
    "slice_axis",
    "softmax_xent",
    "softmax_xent_grad",
    "sqrt",
    "square",
    "step",
    "sub",
    "sum_to_shape",
    "tanh",
    "transpose",
    "uniform",
]
