"""Drop plans: which within-frame token slots survive each layer transition.

A plan is shared across frames: at transition ``ℓ -> ℓ+1`` every frame keeps
the same slot indices out of its ``tokens_at(ℓ)`` current slots.

Two strategies are provided:

- ``suffix`` keeps the last ``n_next`` slots. Under causal attention the later
  tokens of a frame can absorb the earlier ones, never the reverse, so the
  dropped tokens always precede the kept ones.
- ``uniform`` keeps ``floor(j·n_prev/n_next)`` for ``j = 0..n_next-1``.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .errors import ContractError, ValidationError
from .layout import global_slot
from .schedule import CompressionSchedule, parse_schedule_block


class DropStrategy(str, Enum):
    SUFFIX = "suffix"
    UNIFORM = "uniform"


def _check_counts(n_prev: int, n_next: int) -> None:
    if not 1 <= n_next <= n_prev:
        raise ValueError(f"need 1 <= n_next <= n_prev, got n_prev={n_prev}, n_next={n_next}")


def suffix_keep_slots(n_prev: int, n_next: int) -> Tuple[int, ...]:
    """Last ``n_next`` of ``n_prev`` slots."""
    _check_counts(n_prev, n_next)
    return tuple(range(n_prev - n_next, n_prev))


def uniform_keep_slots(n_prev: int, n_next: int) -> Tuple[int, ...]:
    """``n_next`` slots evenly spaced by position, starting at slot 0."""
    _check_counts(n_prev, n_next)
    return tuple((j * n_prev) // n_next for j in range(n_next))


_KEEP_RULES = {
    DropStrategy.SUFFIX: suffix_keep_slots,
    DropStrategy.UNIFORM: uniform_keep_slots,
}


@dataclass(frozen=True)
class Transition:
    """One layer transition ``layer -> layer + 1``."""

    layer: int
    n_prev: int
    n_next: int
    kept_slots: Tuple[int, ...]

    @property
    def is_identity(self) -> bool:
        return self.n_prev == self.n_next

    @property
    def dropped_slots(self) -> Tuple[int, ...]:
        kept = set(self.kept_slots)
        return tuple(s for s in range(self.n_prev) if s not in kept)


@dataclass(frozen=True)
class DropPlan:
    """Kept-slot lists for every transition of a schedule.

    Attributes:
        schedule: Source schedule.
        strategy: Keep rule.
        transitions: One entry per layer ``0..L-1``.
    """

    schedule: CompressionSchedule
    strategy: DropStrategy
    transitions: Tuple[Transition, ...]

    @property
    def initial_tokens(self) -> int:
        return self.schedule.initial_tokens

    @property
    def final_tokens(self) -> int:
        return self.schedule.tokens_at(self.schedule.num_layers)

    @property
    def num_layers(self) -> int:
        return self.schedule.num_layers

    def kept_counts(self) -> List[int]:
        return [len(t.kept_slots) for t in self.transitions]

    def to_block(self) -> str:
        return self.schedule.to_block() + f"strategy={self.strategy.value}\n"

    @classmethod
    def from_block(cls, text: str) -> "DropPlan":
        schedule, extras = parse_schedule_block(text)
        strategy = extras.pop("strategy", DropStrategy.SUFFIX.value)
        if extras:
            raise ValidationError(f"Unknown plan keys: {sorted(extras)}")
        try:
            return build_plan(schedule, DropStrategy(strategy))
        except ValueError as exc:
            raise ValidationError(f"unknown strategy {strategy!r}") from exc


def build_plan(
    schedule: CompressionSchedule,
    strategy: DropStrategy = DropStrategy.SUFFIX,
) -> DropPlan:
    """Compute the kept slots of every transition of ``schedule``.

    Identity transitions (nothing to compress) keep every slot.
    """
    strategy = DropStrategy(strategy)
    rule = _KEEP_RULES[strategy]
    transitions = []
    for layer in range(schedule.num_layers):
        n_prev = schedule.tokens_at(layer)
        n_next = schedule.tokens_at(layer + 1)
        if n_prev == n_next:
            kept = tuple(range(n_prev))
        else:
            kept = rule(n_prev, n_next)
        transitions.append(Transition(layer, n_prev, n_next, kept))
    logger.debug(
        f"Built {strategy.value} plan for {schedule.kind.value} "
        f"{schedule.initial_tokens}->{schedule.tokens_at(schedule.num_layers)} "
        f"over {schedule.num_layers} layers"
    )
    return DropPlan(schedule, strategy, tuple(transitions))


def kept_positions(transition: Transition, num_frames: int) -> np.ndarray:
    """Flattened video positions that survive ``transition`` for ``num_frames`` frames."""
    return np.array(
        [global_slot(frame, slot, transition.n_prev) for frame in range(num_frames) for slot in transition.kept_slots],
        dtype=np.int64,
    )


def apply_drop(tokens: np.ndarray, kept_slots: Sequence[int], n_prev: Optional[int] = None) -> np.ndarray:
    """Select ``kept_slots`` from every frame of a ``frames × n_prev × width`` array.

    Args:
        tokens: Layered token matrix; extra trailing axes are carried along.
        kept_slots: Strictly increasing slots inside ``[0, n_prev)``.
        n_prev: Expected slot count per frame, checked against ``tokens``.

    Returns:
        New array of shape ``frames × len(kept_slots) × …``; the input is not
        modified.

    Raises:
        ContractError: If the slot axis disagrees with ``n_prev`` or a kept
            slot is out of range.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim < 2:
        raise ContractError(f"tokens must be at least frames × slots, got shape {tokens.shape}")
    slots = tokens.shape[1]
    if n_prev is not None and slots != n_prev:
        raise ContractError(f"tokens carry {slots} slots per frame, plan expects n_prev={n_prev}")
    kept = np.asarray(kept_slots, dtype=np.int64)
    if kept.size and (kept.min() < 0 or kept.max() >= slots):
        raise ContractError(f"kept slots {tuple(kept_slots)} outside [0, {slots})")
    return tokens[:, kept].copy()


def apply_plan(
    tokens: np.ndarray,
    plan: DropPlan,
    *,
    track_provenance: bool = False,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Apply every transition of ``plan`` in order, with no model in between.

    Args:
        tokens: ``frames × N1 × …`` array.
        plan: Drop plan built for ``N1``.
        track_provenance: Also return the original slot of each survivor.

    Returns:
        ``(compressed, provenance)`` where provenance is ``frames × N(L)`` of
        original slot indices, or None.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim < 2 or tokens.shape[1] != plan.initial_tokens:
        raise ContractError(
            f"tokens carry {tokens.shape[1] if tokens.ndim > 1 else '?'} slots per frame, "
            f"plan expects initial_tokens={plan.initial_tokens}"
        )
    provenance = None
    if track_provenance:
        provenance = np.broadcast_to(
            np.arange(plan.initial_tokens, dtype=np.int64), tokens.shape[:2]
        ).copy()
    for transition in plan.transitions:
        if transition.is_identity:
            continue
        tokens = apply_drop(tokens, transition.kept_slots, transition.n_prev)
        if provenance is not None:
            provenance = apply_drop(provenance, transition.kept_slots, transition.n_prev)
    return tokens, provenance
