"""Indexing between frames, clips, per-frame token slots and sequence positions.

Every index here is 0-based: frames, slots, clips and layers. The 1-based
frame loop of the drop algorithm (``(f-1)·N_prev + …``) becomes
``f·N_prev + …`` with ``f`` starting at 0.

The flattened LLM sequence is frame-major video tokens followed by the
question tokens::

    [f0 s0, f0 s1, …, f0 s(N-1), f1 s0, …, f(T-1) s(N-1), q0, …, q(Nq-1)]
"""

import math
from dataclasses import dataclass
from typing import List, Tuple

DEFAULT_CLIP_SIZE = 8


@dataclass(frozen=True)
class FrameGrid:
    """Token layout of one context at one layer.

    Attributes:
        num_frames: Number of sampled frames ``T``.
        tokens_per_frame: Visual tokens per frame ``N`` at this layer.
        question_tokens: Query tokens ``N_q`` appended after the video.
    """

    num_frames: int
    tokens_per_frame: int
    question_tokens: int = 0

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValueError(f"num_frames must be >= 1, got {self.num_frames}")
        if self.tokens_per_frame < 1:
            raise ValueError(
                f"tokens_per_frame must be >= 1, got {self.tokens_per_frame}"
            )
        if self.question_tokens < 0:
            raise ValueError(
                f"question_tokens must be >= 0, got {self.question_tokens}"
            )

    @property
    def video_length(self) -> int:
        return self.num_frames * self.tokens_per_frame

    @property
    def sequence_length(self) -> int:
        return self.video_length + self.question_tokens

    def frame_columns(self, frame: int) -> range:
        """Sequence positions holding ``frame``'s tokens."""
        start = global_slot(frame, 0, self.tokens_per_frame)
        return range(start, start + self.tokens_per_frame)

    def with_tokens_per_frame(self, tokens_per_frame: int) -> "FrameGrid":
        return FrameGrid(self.num_frames, tokens_per_frame, self.question_tokens)


@dataclass(frozen=True)
class ClipPartition:
    """Grouping of ``num_frames`` frames into clips of ``clip_size`` frames.

    The last clip holds ``num_frames % clip_size`` frames when the division is
    not exact.
    """

    num_frames: int
    clip_size: int = DEFAULT_CLIP_SIZE

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValueError(f"num_frames must be >= 1, got {self.num_frames}")
        if self.clip_size < 1:
            raise ValueError(f"clip_size must be >= 1, got {self.clip_size}")

    @property
    def num_clips(self) -> int:
        return math.ceil(self.num_frames / self.clip_size)

    def frames_of_clip(self, clip: int) -> range:
        if not 0 <= clip < self.num_clips:
            raise ValueError(f"clip {clip} outside [0, {self.num_clips})")
        start = clip * self.clip_size
        return range(start, min(start + self.clip_size, self.num_frames))

    def clip_sizes(self) -> List[int]:
        return [len(self.frames_of_clip(c)) for c in range(self.num_clips)]


def clip_of_frame(frame: int, clip_size: int = DEFAULT_CLIP_SIZE) -> int:
    """Clip index holding ``frame``.

    Args:
        frame: 0-based frame index.
        clip_size: Frames per clip.

    Returns:
        ``floor(frame / clip_size)``.
    """
    if frame < 0:
        raise ValueError(f"frame must be >= 0, got {frame}")
    if clip_size < 1:
        raise ValueError(f"clip_size must be >= 1, got {clip_size}")
    return frame // clip_size


def global_slot(frame: int, slot: int, tokens_per_frame: int) -> int:
    """Flattened video-token position of ``(frame, slot)``.

    Raises:
        ValueError: If ``slot`` is not inside ``[0, tokens_per_frame)``.
    """
    if not 0 <= slot < tokens_per_frame:
        raise ValueError(f"slot {slot} outside [0, {tokens_per_frame})")
    if frame < 0:
        raise ValueError(f"frame must be >= 0, got {frame}")
    return frame * tokens_per_frame + slot


def split_slot(position: int, tokens_per_frame: int) -> Tuple[int, int]:
    """Inverse of :func:`global_slot`: ``position -> (frame, slot)``."""
    if position < 0:
        raise ValueError(f"position must be >= 0, got {position}")
    if tokens_per_frame < 1:
        raise ValueError(f"tokens_per_frame must be >= 1, got {tokens_per_frame}")
    return divmod(position, tokens_per_frame)


def sequence_positions(grid: FrameGrid) -> Tuple[range, range]:
    """Video and question position ranges of the flattened sequence.

    Returns:
        ``(range(0, T·N), range(T·N, T·N + N_q))``.
    """
    video = range(0, grid.video_length)
    question = range(grid.video_length, grid.sequence_length)
    return video, question
