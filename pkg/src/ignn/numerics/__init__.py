from .adam import AdamState, adam_step
from .gradcheck import check_gradients, finite_difference_gradient, relative_error
from .params import CheckpointError, ParameterStore, config_hash, param_rng
from .tensor import (
    PRIMITIVES,
    ComputationTape,
    ShapeError,
    Tensor,
    backward,
    current_tape,
    forward_primitive,
    new_tape,
    no_grad,
)

__all__ = [
    "AdamState", "adam_step", "check_gradients", "finite_difference_gradient",
    "relative_error", "CheckpointError", "ParameterStore", "config_hash", "param_rng",
    "PRIMITIVES", "ComputationTape", "ShapeError", "Tensor", "backward",
    "current_tape", "forward_primitive", "new_tape", "no_grad",
]
