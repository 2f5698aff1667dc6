"""Question-conditioned frame relevance and top-k frame selection.

A frame's relevance is the attention its video tokens receive from the
question tokens, averaged over heads, question rows, the frame's columns and
the scoring layers. Scores are computed inside short local windows (segmented
scoring) so that the position bias of long-context attention toward the start
and end of the sequence cannot drown out mid-video frames. Videos longer than
one chunk are covered by overlapping, shifted chunks, each frame being scored
in several of them; the per-frame observations are averaged.

Attention is supplied by an :data:`AttentionSource`: a callable returning the
question-to-video attention of a context made of ``length`` frames starting at
frame ``start`` followed by the question.
"""

import heapq
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .errors import ContractError, CoverageError, ValidationError
from .layout import DEFAULT_CLIP_SIZE, ClipPartition, FrameGrid, clip_of_frame, global_slot, sequence_positions

DEFAULT_WINDOW_FRAMES = 64
DEFAULT_STRIDE_FRAMES = 32
DEFAULT_CHUNK_FRAMES = 512
DEFAULT_N_REPEAT = 2
DEFAULT_SELECTED_FRAMES = 512
LONG_VIDEO_SELECTED_FRAMES = 2048
LONG_VIDEO_SECONDS = 3600.0

# Frames selected per benchmark family in the reference evaluation setup.
SELECTED_FRAMES_PRESETS = {
    "longvideobench": 256,
    "videomme": 512,
    "mlvu": 1024,
    "lvbench": 2048,
}

ROW_SUM_CAP = 1.0 + 1e-4
FULL_ROW_TOLERANCE = 1e-5
CAUSAL_TOLERANCE = 1e-12

Window = Tuple[int, int]


@dataclass(frozen=True)
class SegmentConfig:
    """Local-window scoring parameters.

    Attributes:
        window_frames: Frames per window ``w``.
        stride_frames: Window advance.
        clip_size: Frames per clip; observations are averaged per clip.
        scoring_layers: Layers averaged into a frame observation; None means all.
    """

    window_frames: int = DEFAULT_WINDOW_FRAMES
    stride_frames: int = DEFAULT_STRIDE_FRAMES
    clip_size: int = DEFAULT_CLIP_SIZE
    scoring_layers: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.window_frames < 1:
            raise ValueError(f"window_frames must be >= 1, got {self.window_frames}")
        if not 1 <= self.stride_frames <= self.window_frames:
            raise ValueError(
                f"stride_frames must be in [1, {self.window_frames}], got {self.stride_frames}"
            )
        if self.clip_size < 1:
            raise ValueError(f"clip_size must be >= 1, got {self.clip_size}")
        if self.scoring_layers is not None:
            layers = tuple(int(layer) for layer in self.scoring_layers)
            if not layers:
                raise ValueError("scoring_layers must not be empty")
            object.__setattr__(self, "scoring_layers", layers)


@dataclass(frozen=True)
class ChunkConfig:
    """Overlapping-chunk parameters for long videos.

    Attributes:
        chunk_frames: Frames per chunk.
        n_repeat: Chunks covering each interior frame.
        n_selected_frames: Frames kept by the selection step.
    """

    chunk_frames: int = DEFAULT_CHUNK_FRAMES
    n_repeat: int = DEFAULT_N_REPEAT
    n_selected_frames: int = DEFAULT_SELECTED_FRAMES

    def __post_init__(self):
        if self.chunk_frames < 1:
            raise ValueError(f"chunk_frames must be >= 1, got {self.chunk_frames}")
        if self.n_repeat < 1:
            raise ValueError(f"n_repeat must be >= 1, got {self.n_repeat}")
        if self.chunk_frames % self.n_repeat:
            raise ValueError(
                f"chunk_frames {self.chunk_frames} is not divisible by n_repeat {self.n_repeat}"
            )
        if self.n_selected_frames < 1:
            raise ValueError(f"n_selected_frames must be >= 1, got {self.n_selected_frames}")

    @property
    def chunk_stride(self) -> int:
        return self.chunk_frames // self.n_repeat


@dataclass(frozen=True)
class QuestionAttention:
    """Question-row × video-column attention of one context.

    Attributes:
        blocks: One ``heads × N_q × (T·n_layer)`` array per layer. Rows may be
            sub-normalized: the mass on question columns is not stored.
        num_frames: Frames ``T`` in the context.
        tokens_per_frame: Per-layer video tokens per frame.
    """

    blocks: Tuple[np.ndarray, ...]
    num_frames: int
    tokens_per_frame: Tuple[int, ...]

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=np.float64) for b in self.blocks)
        tokens = tuple(int(n) for n in self.tokens_per_frame)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "tokens_per_frame", tokens)
        if not blocks:
            raise ValidationError("attention needs at least one layer")
        if len(blocks) != len(tokens):
            raise ValidationError(f"{len(blocks)} attention blocks but {len(tokens)} tokens_per_frame entries")
        heads, rows = blocks[0].shape[:2]
        for layer, (block, n) in enumerate(zip(blocks, tokens)):
            expected = (heads, rows, self.num_frames * n)
            if block.shape != expected:
                raise ValidationError(f"layer {layer}: attention block shape {block.shape}, expected {expected}")
            if not np.all(np.isfinite(block)):
                raise ValidationError(f"layer {layer}: attention holds non-finite values")
            if np.any(block < 0):
                raise ValidationError(f"layer {layer}: attention holds negative weights")
            if np.any(block.sum(axis=-1) > ROW_SUM_CAP):
                raise ValidationError(f"layer {layer}: attention rows sum above {ROW_SUM_CAP}")

    @property
    def num_layers(self) -> int:
        return len(self.blocks)

    @property
    def num_heads(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def question_tokens(self) -> int:
        return self.blocks[0].shape[1]

    @classmethod
    def from_full_maps(
        cls,
        maps: Sequence[np.ndarray],
        num_frames: int,
        tokens_per_frame: Sequence[int],
    ) -> "QuestionAttention":
        """Extract the question-to-video blocks from full ``heads × S × S`` maps.

        Raises:
            ValidationError: If a map is not causal or its rows do not sum to 1.
        """
        blocks = []
        for layer, (weights, n) in enumerate(zip(maps, tokens_per_frame)):
            weights = np.asarray(weights, dtype=np.float64)
            try:
                grid = FrameGrid(num_frames, n)
            except ValueError as exc:
                raise ValidationError(f"layer {layer}: {exc}") from exc
            seq = weights.shape[-1]
            if weights.ndim != 3 or weights.shape[1] != seq or seq <= grid.video_length:
                raise ValidationError(
                    f"layer {layer}: map shape {weights.shape} does not fit {num_frames} frames × {n} tokens"
                )
            video, question = sequence_positions(FrameGrid(num_frames, n, seq - grid.video_length))
            if np.max(np.abs(np.triu(weights, k=1)), initial=0.0) > CAUSAL_TOLERANCE:
                raise ValidationError(f"layer {layer}: attention attends to future positions")
            if np.max(np.abs(weights.sum(axis=-1) - 1.0)) > FULL_ROW_TOLERANCE:
                raise ValidationError(f"layer {layer}: attention rows are not normalized")
            blocks.append(weights[:, question.start:question.stop, video.start:video.stop])
        return cls(tuple(blocks), num_frames, tuple(tokens_per_frame))

    def restrict(self, start: int, length: int) -> "QuestionAttention":
        """Attention of a window, derived from this full-context attention.

        Each question row keeps the window's video columns and is renormalized
        against their mass plus the row's question-column mass, which equals
        the local softmax when logits do not depend on the context.
        """
        if start < 0 or length < 1 or start + length > self.num_frames:
            raise ContractError(f"window ({start}, {length}) outside {self.num_frames} frames")
        blocks = []
        for block, n in zip(self.blocks, self.tokens_per_frame):
            question_mass = np.clip(1.0 - block.sum(axis=-1, keepdims=True), 0.0, None)
            local = block[..., global_slot(start, 0, n):global_slot(start + length - 1, n - 1, n) + 1]
            denominator = local.sum(axis=-1, keepdims=True) + question_mass
            blocks.append(np.divide(local, denominator, out=np.zeros_like(local), where=denominator > 0))
        return QuestionAttention(tuple(blocks), length, self.tokens_per_frame)


AttentionSource = Callable[[int, int], QuestionAttention]


def restricted_source(attention: QuestionAttention) -> AttentionSource:
    """Window attention source backed by one full-context attention dump."""

    def source(start: int, length: int) -> QuestionAttention:
        if start == 0 and length == attention.num_frames:
            return attention
        return attention.restrict(start, length)

    return source


@dataclass(frozen=True)
class SegmentScores:
    """Scores of one window.

    Attributes:
        start: First frame of the window (global index).
        frame_observations: Per-frame relevance before clip bucketing.
        clip_scores: Global clip index -> mean of its frames' observations.
        frame_scores: Clip score carried by each frame of the window.
    """

    start: int
    frame_observations: np.ndarray
    clip_scores: Dict[int, float]
    frame_scores: np.ndarray

    @property
    def frames(self) -> range:
        return range(self.start, self.start + len(self.frame_scores))


@dataclass(frozen=True)
class FrameScoreTable:
    """Per-frame relevance with the number of observations behind each score."""

    scores: np.ndarray
    coverage: np.ndarray

    @property
    def num_frames(self) -> int:
        return len(self.scores)

    def rank_of(self, frame: int) -> int:
        """1-based rank of ``frame`` under the selection order (score desc, index asc)."""
        score = self.scores[frame]
        higher = int(np.sum(self.scores > score))
        tied_before = int(np.sum(self.scores[:frame] == score))
        return 1 + higher + tied_before

    def rows(self, selected: Iterable[int] = ()) -> List[Tuple[int, float, int, int]]:
        """``(frame, score, coverage, selected)`` CSV rows."""
        chosen = set(selected)
        return [
            (f, float(self.scores[f]), int(self.coverage[f]), int(f in chosen))
            for f in range(self.num_frames)
        ]


SCORE_TABLE_HEADER = ("frame", "score", "coverage", "selected")


@dataclass(frozen=True)
class SelectionResult:
    """Selected frames in ascending temporal order and their scores."""

    frames: Tuple[int, ...]
    scores: Tuple[float, ...]


def segment_windows(total_frames: int, cfg: SegmentConfig = SegmentConfig()) -> List[Window]:
    """Local windows covering ``total_frames`` frames.

    Starts run ``0, stride, …`` up to ``T - w`` inclusive; when ``T - w`` is
    not a multiple of the stride a tail window starting at ``T - w`` is added.

    Returns:
        ``(start, length)`` pairs ordered by start.
    """
    if total_frames < 1:
        raise ValueError(f"total_frames must be >= 1, got {total_frames}")
    w = cfg.window_frames
    if total_frames <= w:
        return [(0, total_frames)]
    last = total_frames - w
    starts = list(range(0, last + 1, cfg.stride_frames))
    if starts[-1] != last:
        starts.append(last)
    return [(s, w) for s in starts]


def chunk_plan(total_frames: int, cfg: ChunkConfig = ChunkConfig()) -> List[Window]:
    """Overlapping chunks of ``chunk_frames`` frames shifted by ``chunk_frames / n_repeat``.

    The final chunk is clamped to end exactly at ``total_frames``.
    """
    if total_frames < 1:
        raise ValueError(f"total_frames must be >= 1, got {total_frames}")
    size = cfg.chunk_frames
    if total_frames <= size:
        return [(0, total_frames)]
    last = total_frames - size
    starts = list(range(0, last + 1, cfg.chunk_stride))
    if starts[-1] != last:
        starts.append(last)
    return [(s, size) for s in starts]


def frame_coverage(windows: Sequence[Window], total_frames: int) -> np.ndarray:
    """How many of ``windows`` contain each frame."""
    counts = np.zeros(total_frames, dtype=np.int64)
    for start, length in windows:
        counts[start:start + length] += 1
    return counts


def frame_observations(attention: QuestionAttention, scoring_layers: Optional[Sequence[int]] = None) -> np.ndarray:
    """Per-frame mean attention from question rows, averaged over heads then layers."""
    layers = range(attention.num_layers) if scoring_layers is None else scoring_layers
    per_layer = []
    for layer in layers:
        if not 0 <= layer < attention.num_layers:
            raise ContractError(f"scoring layer {layer} outside [0, {attention.num_layers})")
        block = attention.blocks[layer]
        n = attention.tokens_per_frame[layer]
        heads, rows = block.shape[:2]
        per_layer.append(block.reshape(heads, rows, attention.num_frames, n).mean(axis=(0, 1, 3)))
    return np.mean(per_layer, axis=0)


def score_segment(attention: QuestionAttention, segment: Window, cfg: SegmentConfig = SegmentConfig()) -> SegmentScores:
    """Score the frames of one window and bucket them per clip.

    Args:
        attention: Attention of the context ``[window frames, question]``.
        segment: ``(start, length)`` of the window in global frames.
        cfg: Scoring parameters.

    Returns:
        Frame observations, clip means keyed by global clip index, and the
        clip mean carried by each frame.
    """
    start, length = segment
    if attention.num_frames != length:
        raise ContractError(f"attention covers {attention.num_frames} frames, window has {length}")
    observations = frame_observations(attention, cfg.scoring_layers)
    clips = np.array([clip_of_frame(start + i, cfg.clip_size) for i in range(length)], dtype=np.int64)
    local = clips - clips[0]
    sums = np.bincount(local, weights=observations)
    counts = np.bincount(local)
    means = sums / counts
    clip_scores = {int(clips[0]) + i: float(means[i]) for i in range(len(means))}
    return SegmentScores(start, observations, clip_scores, means[local])


def aggregate(observations: Iterable[Tuple[int, float]], num_frames: int) -> FrameScoreTable:
    """Average ``(frame, value)`` observations per frame.

    The mean uses exactly rounded summation, so the table does not depend on
    arrival order.

    Raises:
        CoverageError: If a frame received no observation.
    """
    buckets: Dict[int, List[float]] = defaultdict(list)
    for frame, value in observations:
        if not 0 <= frame < num_frames:
            raise ContractError(f"observation for frame {frame} outside [0, {num_frames})")
        buckets[frame].append(float(value))
    missing = [f for f in range(num_frames) if f not in buckets]
    if missing:
        logger.error(f"{len(missing)} frames without observations, first {missing[0]}")
        raise CoverageError(f"frames without observations: {missing[:10]}")
    scores = np.array([math.fsum(buckets[f]) / len(buckets[f]) for f in range(num_frames)])
    coverage = np.array([len(buckets[f]) for f in range(num_frames)], dtype=np.int64)
    return FrameScoreTable(scores, coverage)


def scoring_windows(
    total_frames: int,
    segment_cfg: SegmentConfig = SegmentConfig(),
    chunk_cfg: Optional[ChunkConfig] = None,
) -> List[Window]:
    """Every global window scored by the segmented pipeline, in reduction order."""
    chunks = [(0, total_frames)] if chunk_cfg is None else chunk_plan(total_frames, chunk_cfg)
    windows = []
    for chunk_start, chunk_length in chunks:
        for start, length in segment_windows(chunk_length, segment_cfg):
            windows.append((chunk_start + start, length))
    return windows


def segmented_scores(
    source: AttentionSource,
    total_frames: int,
    segment_cfg: SegmentConfig = SegmentConfig(),
    chunk_cfg: Optional[ChunkConfig] = None,
    *,
    workers: Optional[int] = None,
) -> FrameScoreTable:
    """Score a video window by window (and chunk by chunk) and average per frame.

    Args:
        source: Attention of each ``(start, length)`` context.
        total_frames: Frames in the video.
        segment_cfg: Window parameters.
        chunk_cfg: Chunk parameters, or None to treat the video as one chunk.
        workers: Thread count for scoring windows; results are reduced in
            window order regardless.

    Returns:
        The aggregated table.
    """
    windows = scoring_windows(total_frames, segment_cfg, chunk_cfg)
    logger.debug(f"Scoring {total_frames} frames over {len(windows)} windows")

    def run(window: Window) -> SegmentScores:
        return score_segment(source(*window), window, segment_cfg)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, windows))
    else:
        results = [run(window) for window in windows]

    observations = (
        (frame, value)
        for result in results
        for frame, value in zip(result.frames, result.frame_scores)
    )
    return aggregate(observations, total_frames)


def global_score(attention: QuestionAttention, cfg: SegmentConfig = SegmentConfig()) -> FrameScoreTable:
    """Score every frame from one window spanning the whole video."""
    result = score_segment(attention, (0, attention.num_frames), cfg)
    return aggregate(zip(result.frames, result.frame_scores), attention.num_frames)


def select_top_k(
    table: FrameScoreTable,
    k: int,
    *,
    granularity: str = "frame",
    clip_size: int = DEFAULT_CLIP_SIZE,
) -> SelectionResult:
    """Keep the ``min(k, T)`` highest-scoring frames, in temporal order.

    Args:
        table: Frame scores.
        k: Frames to keep, at least 1.
        granularity: ``"frame"`` ranks frames; ``"clip"`` ranks clips by their
            mean score and takes their frames in clip order until ``k`` frames
            are collected.
        clip_size: Frames per clip for ``granularity="clip"``.

    Returns:
        Selected frames sorted ascending with their scores.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    total = table.num_frames
    keep = min(k, total)
    if granularity == "frame":
        chosen = heapq.nsmallest(keep, range(total), key=lambda f: (-table.scores[f], f))
    elif granularity == "clip":
        partition = ClipPartition(total, clip_size)
        clip_means = [float(np.mean(table.scores[list(partition.frames_of_clip(c))])) for c in range(partition.num_clips)]
        order = sorted(range(partition.num_clips), key=lambda c: (-clip_means[c], c))
        chosen = [f for c in order for f in partition.frames_of_clip(c)][:keep]
    else:
        raise ValueError(f"granularity must be 'frame' or 'clip', got {granularity!r}")
    frames = tuple(sorted(int(f) for f in chosen))
    return SelectionResult(frames, tuple(float(table.scores[f]) for f in frames))


def select_frames_for_duration(duration_seconds: float) -> int:
    """Selection budget by video length: 512 under one hour, 2048 otherwise."""
    if duration_seconds < 0:
        raise ValueError(f"duration_seconds must be >= 0, got {duration_seconds}")
    return DEFAULT_SELECTED_FRAMES if duration_seconds < LONG_VIDEO_SECONDS else LONG_VIDEO_SELECTED_FRAMES
