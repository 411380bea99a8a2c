from .adam import AdamState, adam_step
from .autodiff import (
    NumericError,
    ShapeError,
    Tensor,
    affine,
    as_tensor,
    batch_normalize,
    constant,
    convex_combination,
    forward_backward,
    mse,
    normalize,
    parameter,
    relu,
    softmax,
    squared_distance,
)
from .sampling import Rng, gumbel_from_uniform, sample_dirichlet, sample_gumbel

__all__ = [
    "AdamState", "adam_step", "NumericError", "ShapeError", "Tensor", "affine", "as_tensor",
    "batch_normalize", "constant", "convex_combination", "forward_backward", "mse",
    "normalize", "parameter", "relu", "softmax", "squared_distance", "Rng",
    "gumbel_from_uniform", "sample_dirichlet", "sample_gumbel",
]
