"""Synthetic question-to-video attention with a controllable position bias.

For a context holding frames ``start .. start+length-1`` followed by the
question, the logit of question row ``q`` on a video column of the frame at
local position ``p`` is::

    noise[col] + begin_bias · exp(-p / τ) + end_bias · exp(-(length-1-p) / τ)
        + signal[frame]

Question columns carry logit 0 and are visible causally. Rows are softmax
normalized over the visible columns. The noise is drawn once per video and
indexed by global column, so overlapping windows see the same content while
the positional terms follow each window's own boundaries.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ..errors import ContractError
from ..scoring import ChunkConfig, FrameScoreTable, QuestionAttention, SegmentConfig, global_score, segmented_scores
from ..utils import render_csv

DEFAULT_DECAY_FRAMES = 64.0


@dataclass(frozen=True)
class BiasOracleConfig:
    """Parameters of one synthetic video.

    Attributes:
        total_frames: Frames ``T``.
        tokens_per_frame: Video tokens per frame.
        question_tokens: Question tokens ``N_q``.
        begin_bias: Weight of the decay from the context start.
        end_bias: Weight of the decay from the context end.
        needle_frame: Frame receiving ``needle_signal``; defaults to ``T // 2``.
        needle_signal: Logit boost on the needle frame's columns.
        noise_scale: Standard deviation of the per-column noise.
        seed: Noise seed.
        num_layers: Layers in the generated attention.
        num_heads: Heads in the generated attention.
        decay_frames: Decay length ``τ`` in frames.
    """

    total_frames: int
    tokens_per_frame: int = 1
    question_tokens: int = 1
    begin_bias: float = 0.0
    end_bias: float = 0.0
    needle_frame: Optional[int] = None
    needle_signal: float = 0.0
    noise_scale: float = 0.0
    seed: int = 0
    num_layers: int = 1
    num_heads: int = 1
    decay_frames: float = DEFAULT_DECAY_FRAMES

    def __post_init__(self):
        for name in ("total_frames", "tokens_per_frame", "question_tokens", "num_layers", "num_heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("begin_bias", "end_bias", "needle_signal", "noise_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.decay_frames <= 0:
            raise ValueError(f"decay_frames must be > 0, got {self.decay_frames}")
        if self.needle_frame is None:
            object.__setattr__(self, "needle_frame", self.total_frames // 2)
        if not 0 <= self.needle_frame < self.total_frames:
            raise ValueError(f"needle_frame {self.needle_frame} outside [0, {self.total_frames})")


class BiasOracle:
    """Attention source for every window of one synthetic video.

    Args:
        cfg: Video parameters.
        signals: Frame -> logit boost; defaults to the needle of ``cfg``.
        noise: Pre-drawn ``layers × heads × N_q × (T·m)`` noise; drawn from
            ``cfg.seed`` when omitted.
    """

    def __init__(
        self,
        cfg: BiasOracleConfig,
        signals: Optional[Mapping[int, float]] = None,
        noise: Optional[np.ndarray] = None,
    ):
        self.cfg = cfg
        self.signals = dict(signals) if signals is not None else {cfg.needle_frame: cfg.needle_signal}
        shape = (cfg.num_layers, cfg.num_heads, cfg.question_tokens, cfg.total_frames * cfg.tokens_per_frame)
        if noise is None:
            noise = cfg.noise_scale * np.random.default_rng(cfg.seed).standard_normal(shape)
        if noise.shape != shape:
            raise ContractError(f"noise shape {noise.shape}, expected {shape}")
        self.noise = noise
        frame_signal = np.zeros(cfg.total_frames)
        for frame, value in self.signals.items():
            frame_signal[frame] = value
        self._column_signal = np.repeat(frame_signal, cfg.tokens_per_frame)

    def logits(self, start: int, length: int) -> np.ndarray:
        """Video-column logits of the context, ``layers × heads × N_q × (length·m)``."""
        cfg = self.cfg
        if start < 0 or length < 1 or start + length > cfg.total_frames:
            raise ContractError(f"window ({start}, {length}) outside {cfg.total_frames} frames")
        m = cfg.tokens_per_frame
        p = np.arange(length, dtype=np.float64)
        positional = (
            cfg.begin_bias * np.exp(-p / cfg.decay_frames)
            + cfg.end_bias * np.exp(-(length - 1 - p) / cfg.decay_frames)
        )
        columns = slice(start * m, (start + length) * m)
        return self.noise[..., columns] + np.repeat(positional, m) + self._column_signal[columns]

    def rows(self, start: int, length: int) -> Tuple[np.ndarray, np.ndarray]:
        """Softmax rows split into the video block and the question block.

        Returns:
            ``(video, question)`` weights; question row ``q`` has weight only
            on question columns ``0..q``.
        """
        video_logits = self.logits(start, length)
        n_q = self.cfg.question_tokens
        question_logits = np.where(np.tril(np.ones((n_q, n_q), dtype=bool)), 0.0, -np.inf)
        question_logits = np.broadcast_to(question_logits, video_logits.shape[:2] + (n_q, n_q))
        full = np.concatenate([video_logits, question_logits], axis=-1)
        full = full - full.max(axis=-1, keepdims=True)
        weights = np.exp(full)
        weights /= weights.sum(axis=-1, keepdims=True)
        split = video_logits.shape[-1]
        return weights[..., :split], weights[..., split:]

    def __call__(self, start: int, length: int) -> QuestionAttention:
        video, _ = self.rows(start, length)
        return QuestionAttention(
            tuple(video[layer] for layer in range(self.cfg.num_layers)),
            length,
            (self.cfg.tokens_per_frame,) * self.cfg.num_layers,
        )

    def full(self) -> QuestionAttention:
        """Attention of the whole video as one context."""
        return self(0, self.cfg.total_frames)


def gen_bias_attention(cfg: BiasOracleConfig) -> BiasOracle:
    """Attention source for ``cfg``, deterministic per seed."""
    return BiasOracle(cfg)


@dataclass(frozen=True)
class BiasResult:
    global_rank: int
    segmented_rank: int
    global_table: FrameScoreTable = field(repr=False)
    segmented_table: FrameScoreTable = field(repr=False)


def bias_experiment(
    cfg: BiasOracleConfig,
    segment_cfg: SegmentConfig = SegmentConfig(clip_size=1),
    chunk_cfg: Optional[ChunkConfig] = None,
) -> BiasResult:
    """Rank of the needle under global and under segmented scoring of the same video."""
    oracle = gen_bias_attention(cfg)
    global_table = global_score(oracle.full(), segment_cfg)
    segmented_table = segmented_scores(oracle, cfg.total_frames, segment_cfg, chunk_cfg)
    result = BiasResult(
        global_table.rank_of(cfg.needle_frame),
        segmented_table.rank_of(cfg.needle_frame),
        global_table,
        segmented_table,
    )
    logger.debug(
        f"needle {cfg.needle_frame} end_bias={cfg.end_bias}: "
        f"global rank {result.global_rank}, segmented rank {result.segmented_rank}"
    )
    return result


BIAS_HEADER = (
    "experiment",
    "seed",
    "total_frames",
    "begin_bias",
    "end_bias",
    "needle_frame",
    "needle_signal",
    "global_rank",
    "segmented_rank",
)


def bias_sweep(
    base: BiasOracleConfig,
    end_biases: Sequence[float],
    seeds: Sequence[int],
    segment_cfg: SegmentConfig = SegmentConfig(clip_size=1),
    chunk_cfg: Optional[ChunkConfig] = None,
) -> List[Tuple]:
    """One :data:`BIAS_HEADER` row per ``(seed, end_bias)``."""
    rows = []
    for seed in seeds:
        for end_bias in end_biases:
            cfg = replace(base, end_bias=float(end_bias), seed=int(seed))
            result = bias_experiment(cfg, segment_cfg, chunk_cfg)
            rows.append((
                "bias", cfg.seed, cfg.total_frames, cfg.begin_bias, cfg.end_bias,
                cfg.needle_frame, cfg.needle_signal, result.global_rank, result.segmented_rank,
            ))
    logger.info(f"Bias sweep: {len(rows)} runs")
    return rows


def bias_report(rows: Sequence[Tuple]) -> str:
    return render_csv(BIAS_HEADER, rows)


def frozen_bias_fixture() -> BiasOracleConfig:
    """Mid-video needle against a strong end-of-context bias.

    Under global scoring the eight frames closest to the video end outrank the
    needle; every local window containing the needle still ranks it first.
    """
    return BiasOracleConfig(
        total_frames=256,
        begin_bias=0.0,
        end_bias=4.0,
        needle_frame=128,
        needle_signal=3.0,
    )
