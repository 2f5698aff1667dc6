"""Analytic prefill FLOPs of the language model, with and without layer-wise drops.

Only the LLM layers are counted: the visual encoder and projector cost the same
with and without compression. Decode steps, memory traffic and wall-clock
latency are not modeled.

Per layer with sequence length ``S``::

    flops = c · (S · P_lin + 2 · S² · H · d_h)

where ``P_lin`` is the layer's linear parameter count, ``H · d_h`` the
attention width and ``c`` the FLOPs per multiply-accumulate (2 by default).
The ``2 · S²`` term holds ``QKᵀ`` and ``AV``; ``causal=True`` halves it.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

from loguru import logger

from .schedule import CompressionSchedule

LVBENCH_QUERY_TOKENS = 863
REPORT_FRAMES = (1024, 2048, 4096)

CHARGE_INPUT = "input"
CHARGE_OUTPUT = "output"
FLOPS_PER_MAC = 2


@dataclass(frozen=True)
class ModelDims:
    """Decoder dimensions; defaults are Qwen2-1.5B's published configuration.

    Attributes:
        num_layers: Decoder layers.
        model_width: Hidden size.
        num_attention_heads: Query heads.
        num_kv_heads: Key/value heads (grouped-query attention).
        head_width: Per-head width.
        mlp_width: Intermediate size of the gated MLP (three matrices).
    """

    num_layers: int = 28
    model_width: int = 1536
    num_attention_heads: int = 12
    num_kv_heads: int = 2
    head_width: int = 128
    mlp_width: int = 8960

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")

    @property
    def attention_width(self) -> int:
        return self.num_attention_heads * self.head_width

    @property
    def linear_params(self) -> int:
        """Weights multiplied by every token in one layer."""
        d = self.model_width
        kv = self.num_kv_heads * self.head_width
        q_and_o = 2 * d * self.attention_width
        k_and_v = 2 * d * kv
        mlp = 3 * d * self.mlp_width
        return q_and_o + k_and_v + mlp


def layer_flops(
    seq_len: int,
    dims: ModelDims = ModelDims(),
    *,
    flops_per_mac: int = FLOPS_PER_MAC,
    causal: bool = False,
) -> int:
    """Prefill FLOPs of one layer over ``seq_len`` tokens."""
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    linear = seq_len * dims.linear_params
    quadratic = 2 * seq_len * seq_len * dims.attention_width
    if causal:
        return flops_per_mac * linear + flops_per_mac * quadratic // 2
    return flops_per_mac * (linear + quadratic)


@dataclass(frozen=True)
class ScenarioCost:
    frames: int
    query_tokens: int
    baseline_flops: int
    compressed_flops: int

    @property
    def reduction(self) -> float:
        return 1.0 - self.compressed_flops / self.baseline_flops


@dataclass(frozen=True)
class CostReport:
    """Baseline vs. compressed prefill FLOPs for one or more frame counts.

    Attributes:
        scenarios: One entry per frame count.
        dims: Model dimensions used.
        schedule: Compression schedule used.
        charge: ``"input"`` or ``"output"`` layer charge rule.
        flops_per_mac: Counting convention.
        causal: Whether the quadratic term was halved.
    """

    scenarios: Tuple[ScenarioCost, ...]
    dims: ModelDims
    schedule: CompressionSchedule
    charge: str
    flops_per_mac: int
    causal: bool

    HEADER = ("frames", "query_tokens", "baseline_tflops", "compressed_tflops", "reduction")

    def notes(self) -> List[str]:
        unit = "FLOPs" if self.flops_per_mac == 2 else "MACs"
        rule = "tokens_at(i-1)" if self.charge == CHARGE_INPUT else "tokens_at(i)"
        return [
            f"dims: layers={self.dims.num_layers} width={self.dims.model_width} "
            f"heads={self.dims.num_attention_heads} kv_heads={self.dims.num_kv_heads} "
            f"head_width={self.dims.head_width} mlp={self.dims.mlp_width}",
            f"schedule: {self.schedule.kind.value} {self.schedule.initial_tokens}->"
            f"{self.schedule.tokens_at(self.schedule.num_layers)} over {self.schedule.num_layers} layers",
            f"convention: {unit}, layer i charged at {rule}, "
            f"{'causal-halved' if self.causal else 'full'} attention term",
            "LLM layers only; visual encoder, decode and latency not modeled",
        ]

    def rows(self) -> List[Tuple[int, int, float, float, float]]:
        return [
            (s.frames, s.query_tokens, s.baseline_flops / 1e12, s.compressed_flops / 1e12, s.reduction)
            for s in self.scenarios
        ]


def _layer_tokens(schedule: CompressionSchedule, charge: str) -> List[int]:
    if charge == CHARGE_INPUT:
        return [schedule.tokens_at(i - 1) for i in range(1, schedule.num_layers + 1)]
    if charge == CHARGE_OUTPUT:
        return [schedule.tokens_at(i) for i in range(1, schedule.num_layers + 1)]
    raise ValueError(f"charge must be {CHARGE_INPUT!r} or {CHARGE_OUTPUT!r}, got {charge!r}")


def prefill_flops(
    frames: int,
    query_tokens: int,
    schedule: CompressionSchedule,
    dims: ModelDims = ModelDims(),
    *,
    charge: str = CHARGE_INPUT,
    flops_per_mac: int = FLOPS_PER_MAC,
    causal: bool = False,
) -> int:
    """Total prefill FLOPs over all layers under ``schedule``."""
    if schedule.num_layers != dims.num_layers:
        raise ValueError(f"schedule covers {schedule.num_layers} layers, model has {dims.num_layers}")
    return sum(
        layer_flops(frames * n + query_tokens, dims, flops_per_mac=flops_per_mac, causal=causal)
        for n in _layer_tokens(schedule, charge)
    )


def prefill_report(
    frames: Union[int, Sequence[int]],
    query_tokens: int,
    schedule: CompressionSchedule,
    dims: ModelDims = ModelDims(),
    *,
    charge: str = CHARGE_INPUT,
    flops_per_mac: int = FLOPS_PER_MAC,
    causal: bool = False,
) -> CostReport:
    """Compare ``schedule`` against the constant ``N1`` baseline.

    Args:
        frames: One frame count or several.
        query_tokens: Question tokens ``N_q``.
        schedule: Compression schedule over ``dims.num_layers`` layers.
        dims: Model dimensions.
        charge: ``"input"`` charges layer ``i`` at ``tokens_at(i-1)``, the
            count it actually receives; ``"output"`` charges it at
            ``tokens_at(i)``.
        flops_per_mac: 2 for FLOPs, 1 for MACs.
        causal: Halve the quadratic attention term.

    Returns:
        The cost report.
    """
    if query_tokens < 0:
        raise ValueError(f"query_tokens must be >= 0, got {query_tokens}")
    counts = [frames] if isinstance(frames, int) else list(frames)
    if not counts or min(counts) < 1:
        raise ValueError(f"frame counts must be >= 1, got {counts}")
    baseline_schedule = CompressionSchedule.constant(schedule.initial_tokens, schedule.num_layers)
    options = dict(charge=charge, flops_per_mac=flops_per_mac, causal=causal)
    scenarios = []
    for t in counts:
        baseline = prefill_flops(t, query_tokens, baseline_schedule, dims, **options)
        compressed = prefill_flops(t, query_tokens, schedule, dims, **options)
        scenarios.append(ScenarioCost(t, query_tokens, baseline, compressed))
        logger.debug(f"{t} frames: baseline {baseline:.4g}, compressed {compressed:.4g}")
    return CostReport(tuple(scenarios), dims, schedule, charge, flops_per_mac, causal)


def frames_for_budget(
    reference_frames: int,
    query_tokens: int,
    schedule: CompressionSchedule,
    dims: ModelDims = ModelDims(),
    *,
    charge: str = CHARGE_INPUT,
    max_frames: Optional[int] = None,
) -> int:
    """Largest frame count whose compressed prefill fits the baseline cost of ``reference_frames``."""
    if reference_frames < 1:
        raise ValueError(f"reference_frames must be >= 1, got {reference_frames}")
    constant = CompressionSchedule.constant(schedule.initial_tokens, schedule.num_layers)
    budget = prefill_flops(reference_frames, query_tokens, constant, dims, charge=charge)

    def fits(t: int) -> bool:
        return prefill_flops(t, query_tokens, schedule, dims, charge=charge) <= budget

    low, high = reference_frames, reference_frames
    while fits(high * 2) and (max_frames is None or high * 2 <= max_frames):
        high *= 2
    high = high * 2 if max_frames is None else min(high * 2, max_frames)
    while low < high:
        mid = (low + high + 1) // 2
        if fits(mid):
            low = mid
        else:
            high = mid - 1
    return low
