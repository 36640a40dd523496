from .tensor import (
    Tensor,
    ShapeError,
    NonDifferentiableError,
    as_tensor,
    gated_attention,
)
from .graph import Graph, evaluate, gradient
from .gradcheck import finite_difference_check, register_block, check_registered
from .checkpoint import save_arrays, load_arrays, CheckpointError
from .optim import Adam
from .rng import derive_seed, rng_for

__all__ = [
    "Tensor",
    "ShapeError",
    "NonDifferentiableError",
    "as_tensor",
    "gated_attention",
    "Graph",
    "evaluate",
    "gradient",
    "finite_difference_check",
    "register_block",
    "check_registered",
    "save_arrays",
    "load_arrays",
    "CheckpointError",
    "Adam",
    "derive_seed",
    "rng_for",
]
