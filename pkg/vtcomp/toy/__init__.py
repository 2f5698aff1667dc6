from .training import (
    SyntheticTask,
    gradient_check,
    loss_curves,
    memorization_task,
    relative_error,
    train_steps,
)
from .transformer import (
    ForwardTrace,
    Parameters,
    ToyConfig,
    backward,
    check_params,
    evaluate_loss,
    forward,
    init_params,
    loss_and_backward,
    mse_loss,
    parameter_shapes,
)

__all__ = [
    "ForwardTrace",
    "Parameters",
    "SyntheticTask",
    "ToyConfig",
    "backward",
    "check_params",
    "evaluate_loss",
    "forward",
    "gradient_check",
    "init_params",
    "loss_and_backward",
    "loss_curves",
    "memorization_task",
    "mse_loss",
    "parameter_shapes",
    "relative_error",
    "train_steps",
]
