"""Per-layer token-per-frame schedules.

Three families are supported:

- ``cosine``: ``N(ℓ) = ceil((N1-1)/2 · cos(ℓπ/L) + (N1+1)/2)`` for ``ℓ`` in
  ``[0, L]``. Layer 0 names the input of the first transformer layer, so the
  drop between layer ``ℓ`` and ``ℓ+1`` reads ``N(ℓ) -> N(ℓ+1)``.
- ``stepwise``: abrupt plateaus ``(start_layer, count)``.
- ``constant``: ``N1`` everywhere (the no-compression baseline).
"""

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from loguru import logger

from .errors import ScheduleError, ValidationError

DEFAULT_INITIAL_TOKENS = 16
DEFAULT_NUM_LAYERS = 28
DEFAULT_NUM_STAGES = 4
STEPWISE_TOLERANCE = 0.5

# Cosine values this close to an integer are treated as that integer before ceil.
_CEIL_SNAP_DIGITS = 9


class ScheduleKind(str, Enum):
    COSINE = "cosine"
    STEPWISE = "stepwise"
    CONSTANT = "constant"


@dataclass(frozen=True)
class CompressionSchedule:
    """Target visual tokens per frame for each layer index in ``[0, L]``.

    Attributes:
        kind: Schedule family.
        initial_tokens: Tokens per frame entering the first layer (``N1``).
        num_layers: Number of transformer layers ``L``.
        stages: ``(start_layer, count)`` plateaus, only for ``stepwise``.
    """

    kind: ScheduleKind
    initial_tokens: int
    num_layers: int
    stages: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if self.initial_tokens < 1:
            raise ValueError(f"initial_tokens must be >= 1, got {self.initial_tokens}")
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        stages = tuple((int(s), int(c)) for s, c in self.stages)
        object.__setattr__(self, "stages", stages)
        if self.kind is ScheduleKind.STEPWISE:
            _validate_stages(stages, self.initial_tokens, self.num_layers)
        elif stages:
            raise ValueError(f"stages are only meaningful for stepwise, got kind={self.kind.value}")

    @classmethod
    def cosine(cls, initial_tokens: int = DEFAULT_INITIAL_TOKENS, num_layers: int = DEFAULT_NUM_LAYERS):
        return cls(ScheduleKind.COSINE, initial_tokens, num_layers)

    @classmethod
    def constant(cls, initial_tokens: int = DEFAULT_INITIAL_TOKENS, num_layers: int = DEFAULT_NUM_LAYERS):
        return cls(ScheduleKind.CONSTANT, initial_tokens, num_layers)

    @classmethod
    def stepwise(cls, initial_tokens: int, num_layers: int, stages: Iterable[Tuple[int, int]]):
        return cls(ScheduleKind.STEPWISE, initial_tokens, num_layers, tuple(stages))

    def tokens_at(self, layer: int) -> int:
        """Tokens per frame at ``layer`` (input of layer ``layer``, 0-based).

        Args:
            layer: Index in ``[0, num_layers]``.

        Returns:
            Token count in ``[1, initial_tokens]``.

        Raises:
            ValueError: If ``layer`` is out of range.
        """
        if not 0 <= layer <= self.num_layers:
            raise ValueError(f"layer {layer} outside [0, {self.num_layers}]")
        n1 = self.initial_tokens
        if self.kind is ScheduleKind.CONSTANT:
            return n1
        if self.kind is ScheduleKind.STEPWISE:
            count = n1
            for start, stage_count in self.stages:
                if start <= layer:
                    count = stage_count
            return count
        value = (n1 - 1) / 2 * math.cos(layer * math.pi / self.num_layers) + (n1 + 1) / 2
        count = math.ceil(round(value, _CEIL_SNAP_DIGITS))
        return min(max(count, 1), n1)

    def per_layer_counts(self) -> List[int]:
        """``[tokens_at(0), …, tokens_at(L)]``."""
        return [self.tokens_at(layer) for layer in range(self.num_layers + 1)]

    def average_tokens_processed(self) -> float:
        """Mean per-frame count over the inputs of layers ``1..L``.

        Compression happens after each layer's output, so layer ``i`` (1-based)
        processes ``tokens_at(i-1)`` tokens per frame.
        """
        counts = [self.tokens_at(layer) for layer in range(self.num_layers)]
        return sum(counts) / self.num_layers

    def compression_ratio(self) -> float:
        """How many times fewer tokens the layers see on average than ``N1``."""
        return self.initial_tokens / self.average_tokens_processed()

    def max_layer_drop(self) -> int:
        counts = self.per_layer_counts()
        return max((a - b for a, b in zip(counts, counts[1:])), default=0)

    def to_block(self) -> str:
        """Serialize as a ``key=value`` text block."""
        lines = [
            f"kind={self.kind.value}",
            f"initial_tokens={self.initial_tokens}",
            f"num_layers={self.num_layers}",
        ]
        if self.stages:
            lines.append("stages=" + ",".join(f"{s}:{c}" for s, c in self.stages))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_block(cls, text: str) -> "CompressionSchedule":
        schedule, extras = parse_schedule_block(text)
        if extras:
            raise ValidationError(f"Unknown schedule keys: {sorted(extras)}")
        return schedule


def _validate_stages(stages: Sequence[Tuple[int, int]], initial_tokens: int, num_layers: int) -> None:
    if not stages:
        raise ValueError("stepwise schedule needs at least one stage")
    if stages[0][0] != 0:
        raise ValueError(f"first stage must start at layer 0, got {stages[0][0]}")
    if stages[0][1] != initial_tokens:
        raise ValueError(f"first stage must keep initial_tokens={initial_tokens}, got {stages[0][1]}")
    previous_start, previous_count = -1, initial_tokens
    for start, count in stages:
        if start <= previous_start:
            raise ValueError(f"stage starts must be strictly increasing, got {start} after {previous_start}")
        if start > num_layers:
            raise ValueError(f"stage start {start} beyond num_layers={num_layers}")
        if not 1 <= count <= initial_tokens:
            raise ValueError(f"stage count {count} outside [1, {initial_tokens}]")
        if count > previous_count:
            raise ValueError(f"stage counts must be non-increasing, got {count} after {previous_count}")
        previous_start, previous_count = start, count


def parse_block(text: str) -> Dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped.

    Raises:
        ValidationError: On a line without ``=`` or a repeated key.
    """
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {number}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ValidationError(f"line {number}: duplicate key {key!r}")
        values[key] = value
    return values


def parse_stages(text: str) -> Tuple[Tuple[int, int], ...]:
    """Parse ``"0:16,15:1"`` into ``((0, 16), (15, 1))``."""
    stages = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            start, count = item.split(":")
            stages.append((int(start), int(count)))
        except ValueError as exc:
            raise ValidationError(f"malformed stage {item!r}; expected start:count") from exc
    return tuple(stages)


def parse_schedule_block(text: str) -> Tuple[CompressionSchedule, Dict[str, str]]:
    """Parse a schedule block, returning keys it does not own as extras.

    Returns:
        ``(schedule, extras)`` where extras holds keys other than
        ``kind``, ``initial_tokens``, ``num_layers`` and ``stages``.
    """
    values = parse_block(text)
    missing = [k for k in ("kind", "initial_tokens", "num_layers") if k not in values]
    if missing:
        raise ValidationError(f"schedule block missing keys: {missing}")
    try:
        kind = ScheduleKind(values.pop("kind"))
        initial_tokens = int(values.pop("initial_tokens"))
        num_layers = int(values.pop("num_layers"))
    except ValueError as exc:
        raise ValidationError(f"malformed schedule block: {exc}") from exc
    stages = parse_stages(values.pop("stages", ""))
    try:
        schedule = CompressionSchedule(kind, initial_tokens, num_layers, stages)
    except ValueError as exc:
        raise ValidationError(f"invalid schedule: {exc}") from exc
    return schedule, values


def _staircase_counts(initial_tokens: int, num_stages: int) -> List[int]:
    """Evenly spaced plateau counts from ``initial_tokens`` down to 1."""
    step = (initial_tokens - 1) / (num_stages - 1)
    return [int(math.floor(initial_tokens - j * step + 0.5)) for j in range(num_stages)]


def build_stepwise_matching(
    initial_tokens: int,
    num_layers: int,
    num_stages: int = DEFAULT_NUM_STAGES,
    target_avg: Optional[float] = None,
    tolerance: float = STEPWISE_TOLERANCE,
) -> CompressionSchedule:
    """Build a staircase whose average processed tokens matches ``target_avg``.

    Plateau counts are spaced evenly from ``initial_tokens`` to 1; the stage
    boundaries are found by exhaustive search over ``1 <= b1 < … < b(K-1) <= L-1``
    so that every plateau is processed by at least one layer. Ties keep the
    lexicographically first boundary tuple.

    Args:
        initial_tokens: ``N1``.
        num_layers: ``L``.
        num_stages: Number of plateaus ``K >= 2``.
        target_avg: Average to match; defaults to the cosine schedule's.
        tolerance: Maximum accepted ``|average - target_avg|``.

    Returns:
        Stepwise schedule.

    Raises:
        ValueError: On invalid arguments.
        ScheduleError: If no boundary placement reaches the tolerance.
    """
    if num_stages < 2:
        raise ValueError(f"num_stages must be >= 2, got {num_stages}")
    if target_avg is None:
        target_avg = CompressionSchedule.cosine(initial_tokens, num_layers).average_tokens_processed()
    if not 1 <= target_avg <= initial_tokens:
        raise ValueError(f"target_avg {target_avg} outside [1, {initial_tokens}]")

    counts = _staircase_counts(initial_tokens, num_stages)
    best: Optional[Tuple[float, Tuple[int, ...]]] = None
    for bounds in itertools.combinations(range(1, num_layers), num_stages - 1):
        starts = (0,) + bounds
        ends = bounds + (num_layers,)
        total = sum(c * (e - s) for c, s, e in zip(counts, starts, ends))
        error = abs(total / num_layers - target_avg)
        if best is None or error < best[0]:
            best = (error, starts)

    if best is None:
        raise ScheduleError(
            f"{num_stages} stages do not fit into {num_layers} layers",
            best_average=None,
        )
    error, starts = best
    schedule = CompressionSchedule.stepwise(initial_tokens, num_layers, zip(starts, counts))
    achieved = schedule.average_tokens_processed()
    if error > tolerance:
        logger.error(f"Best stepwise average {achieved:.4f} misses target {target_avg:.4f}")
        raise ScheduleError(
            f"no {num_stages}-stage staircase reaches average {target_avg:.4f} "
            f"within {tolerance}; best achievable is {achieved:.4f}",
            best_average=achieved,
        )
    logger.debug(f"Stepwise stages {schedule.stages} average {achieved:.4f} (target {target_avg:.4f})")
    return schedule
