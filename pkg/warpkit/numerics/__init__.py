from .gradcheck import finite_diff_check
from .io import (
    decode_tensor,
    encode_tensor,
    load_tensor_dir,
    read_tensor,
    save_tensor_dir,
    write_tensor,
)
from .rng import SeededRng
from .tensor import (
    GradTape,
    Precision,
    Tensor,
    add,
    argmax,
    as_tensor,
    backward,
    concat,
    default_precision,
    matmul,
    mean,
    mse,
    mul,
    narrow,
    neg,
    ones,
    precision_of,
    reshape,
    resolve_dtype,
    rms_norm,
    rotate_pairs,
    scale,
    softmax,
    sub,
    sum_,
    take,
    tanh,
    transpose,
    where,
    zeros,
)

__all__ = [
    "Tensor",
    "GradTape",
    "Precision",
    "SeededRng",
    "backward",
    "finite_diff_check",
    "default_precision",
    "resolve_dtype",
    "precision_of",
    "as_tensor",
    "zeros",
    "ones",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "narrow",
    "take",
    "where",
    "tanh",
    "softmax",
    "rms_norm",
    "rotate_pairs",
    "sum_",
    "mean",
    "mse",
    "argmax",
    "encode_tensor",
    "decode_tensor",
    "write_tensor",
    "read_tensor",
    "save_tensor_dir",
    "load_tensor_dir",
]
