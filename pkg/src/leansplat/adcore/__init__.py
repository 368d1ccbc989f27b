"""Numpy arrays with tape-based reverse-mode differentiation."""

from .nnops import (
    bilinear_sample,
    conv2d,
    conv_output_size,
    interp_matrix,
    layer_norm,
    matmul,
    pad2d,
    softmax,
    upsample_bilinear,
)
from .tensor import (
    Array,
    NonFiniteError,
    Tape,
    TapeError,
    add,
    as_array,
    backward,
    check_finite,
    clamp,
    clamp_max,
    clamp_min,
    concat,
    cumsum,
    current_tape,
    div,
    exp,
    gelu,
    get_default_dtype,
    getitem,
    log,
    maximum,
    mean,
    mul,
    neg,
    no_grad,
    power,
    record,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    softplus,
    sqrt,
    stack,
    sub,
    sum_,
    take,
    tanh,
    transpose,
    unbroadcast,
    where,
)

ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": exp,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "tanh": tanh,
    "relu": relu,
    "clamp-min": clamp_min,
}


def elementwise(op_name: str, a, b=None) -> Array:
    """Dispatch by name; ``b`` is the second operand or the clamp bound."""
    try:
        fn = ELEMENTWISE[op_name]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_name!r}; choose from {sorted(ELEMENTWISE)}") from None
    return fn(a) if b is None else fn(a, b)


__all__ = [name for name in dir() if not name.startswith("_")]
