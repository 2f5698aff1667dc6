"""Gradient descent, finite-difference checks and synthetic tasks for the toy model."""

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from loguru import logger

from ..errors import NumericError
from ..plan import DropPlan
from .transformer import Parameters, ToyConfig, check_params, evaluate_loss, loss_and_backward


@dataclass(frozen=True)
class SyntheticTask:
    """A fixed input -> target pair for memorization.

    Attributes:
        video_tokens: ``frames × N1 × width`` tokens.
        question_tokens: ``N_q × width`` tokens.
        target: Regression target of shape ``(output_width,)``.
    """

    video_tokens: np.ndarray
    question_tokens: np.ndarray
    target: np.ndarray

    @property
    def num_frames(self) -> int:
        return self.video_tokens.shape[0]

    @property
    def initial_tokens(self) -> int:
        return self.video_tokens.shape[1]


def memorization_task(
    config: ToyConfig,
    num_frames: int,
    initial_tokens: int,
    question_tokens: int,
    seed: int,
    *,
    target_scale: float = 1.0,
) -> SyntheticTask:
    """Standard-normal tokens with a standard-normal target times ``target_scale``."""
    rng = np.random.default_rng(seed)
    width = config.input_width or config.model_width
    dtype = config.np_dtype
    video = rng.standard_normal((num_frames, initial_tokens, width)).astype(dtype)
    question = rng.standard_normal((question_tokens, width)).astype(dtype)
    target = (target_scale * rng.standard_normal(config.output_width)).astype(dtype)
    return SyntheticTask(video, question, target)


def train_steps(
    params: Parameters,
    config: ToyConfig,
    plan: Optional[DropPlan],
    task: SyntheticTask,
    steps: int,
    learning_rate: float,
) -> Tuple[Parameters, List[float]]:
    """Plain gradient descent on ``task``.

    Args:
        params: Starting parameters; they are not modified.
        config: Model dimensions.
        plan: Drop plan applied in every forward pass, or None.
        task: Input/target pair.
        steps: Number of updates, at least 1.
        learning_rate: Step size.

    Returns:
        ``(updated_params, losses)`` where ``losses[i]`` is the loss before
        update ``i``.

    Raises:
        NumericError: If the loss or a parameter turns non-finite; ``step``
            names the offending update.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    check_params(params, config)
    current = {name: value.copy() for name, value in params.items()}
    losses: List[float] = []
    for step in range(steps):
        try:
            loss, grads = loss_and_backward(
                current, config, task.video_tokens, task.question_tokens, task.target, plan
            )
        except NumericError as exc:
            logger.error(f"Training diverged at step {step}")
            raise NumericError(f"training diverged at step {step}: {exc}", layer=exc.layer, step=step) from exc
        losses.append(loss)
        for name, grad in grads.items():
            current[name] -= learning_rate * grad
            if not np.all(np.isfinite(current[name])):
                logger.error(f"Parameter {name} non-finite after step {step}")
                raise NumericError(f"parameter {name} diverged at step {step}", step=step)
        if step % 50 == 0:
            logger.debug(f"step {step}: loss {loss:.6g}")
    logger.info(f"Trained {steps} steps, loss {losses[0]:.6g} -> {losses[-1]:.6g}")
    return current, losses


def loss_curves(
    params: Parameters,
    config: ToyConfig,
    plans: Mapping[str, Optional[DropPlan]],
    task: SyntheticTask,
    steps: int,
    learning_rate: float,
) -> Dict[str, List[float]]:
    """Train a copy of ``params`` under each named plan and collect the curves."""
    return {
        name: train_steps(params, config, plan, task, steps, learning_rate)[1]
        for name, plan in plans.items()
    }


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``max|a - n| / max(max|a|, max|n|, floor)``."""
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


def gradient_check(
    params: Parameters,
    config: ToyConfig,
    task: SyntheticTask,
    plan: Optional[DropPlan] = None,
    *,
    step: float = 1e-4,
) -> Dict[str, float]:
    """Compare analytic gradients with central finite differences.

    Every entry of every parameter is perturbed by ``±step``; run it in
    ``float64`` for meaningful errors.

    Returns:
        Relative error per parameter name.
    """
    _, grads = loss_and_backward(params, config, task.video_tokens, task.question_tokens, task.target, plan)
    errors: Dict[str, float] = {}
    for name, value in params.items():
        numeric = np.zeros_like(value, dtype=np.float64)
        flat = value.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + step
            plus = evaluate_loss(params, config, task.video_tokens, task.question_tokens, task.target, plan)
            flat[index] = original - step
            minus = evaluate_loss(params, config, task.video_tokens, task.question_tokens, task.target, plan)
            flat[index] = original
            numeric.reshape(-1)[index] = (plus - minus) / (2 * step)
        errors[name] = relative_error(grads[name].astype(np.float64), numeric)
    worst = max(errors, key=errors.get)
    logger.info(f"Gradient check: worst relative error {errors[worst]:.3g} on {worst}")
    if not math.isfinite(errors[worst]):
        raise NumericError(f"gradient check produced a non-finite error on {worst}")
    return errors
