import numpy as np
import pytest

from vtcomp.layout import (
    ClipPartition,
    FrameGrid,
    clip_of_frame,
    global_slot,
    sequence_positions,
    split_slot,
)
from vtcomp.plan import build_plan, kept_positions
from vtcomp.schedule import CompressionSchedule
from vtcomp.scoring import QuestionAttention, SegmentConfig, score_segment
from vtcomp.toy import forward


class TestFrameGrid:
    def test_lengths(self):
        grid = FrameGrid(num_frames=3, tokens_per_frame=4, question_tokens=2)
        assert grid.video_length == 12
        assert grid.sequence_length == 14

    @pytest.mark.parametrize(
        "frames, tokens, question",
        [(0, 4, 0), (3, 0, 0), (3, 4, -1)],
    )
    def test_rejects_invalid_counts(self, frames, tokens, question):
        with pytest.raises(ValueError):
            FrameGrid(frames, tokens, question)

    def test_frame_columns(self):
        grid = FrameGrid(num_frames=3, tokens_per_frame=4)
        assert list(grid.frame_columns(1)) == [4, 5, 6, 7]

    def test_sequence_positions(self):
        video, question = sequence_positions(FrameGrid(2, 4, 3))
        assert video == range(0, 8)
        assert question == range(8, 11)

    def test_with_tokens_per_frame_keeps_question(self):
        grid = FrameGrid(5, 16, 7).with_tokens_per_frame(1)
        assert (grid.num_frames, grid.tokens_per_frame, grid.question_tokens) == (5, 1, 7)


class TestClips:
    @pytest.mark.parametrize(
        "frame, clip_size, expected",
        [(0, 8, 0), (7, 8, 0), (8, 8, 1), (17, 8, 2), (5, 1, 5)],
    )
    def test_clip_of_frame(self, frame, clip_size, expected):
        assert clip_of_frame(frame, clip_size) == expected

    def test_clip_of_frame_rejects_negative(self):
        with pytest.raises(ValueError):
            clip_of_frame(-1)
        with pytest.raises(ValueError):
            clip_of_frame(0, 0)

    def test_partition_covers_each_frame_once(self):
        partition = ClipPartition(num_frames=20, clip_size=8)
        assert partition.num_clips == 3
        assert partition.clip_sizes() == [8, 8, 4]
        frames = [f for c in range(partition.num_clips) for f in partition.frames_of_clip(c)]
        assert frames == list(range(20))
        for c in range(partition.num_clips):
            assert all(clip_of_frame(f, 8) == c for f in partition.frames_of_clip(c))


class TestSlots:
    def test_global_slot(self):
        assert global_slot(2, 3, 4) == 11
        assert global_slot(0, 0, 16) == 0

    def test_global_slot_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            global_slot(0, 4, 4)

    def test_split_slot_inverts_global_slot(self):
        for frame in range(5):
            for slot in range(3):
                assert split_slot(global_slot(frame, slot, 3), 3) == (frame, slot)


class TestSharedIndexing:
    def test_reference_context_positions(self):
        grid = FrameGrid(num_frames=1024, tokens_per_frame=16, question_tokens=863)
        video, question = sequence_positions(grid)
        assert video == range(0, 16384)
        assert question == range(16384, 17247)
        video, question = sequence_positions(grid.with_tokens_per_frame(1))
        assert video == range(0, 1024)
        assert question == range(1024, 1887)

    def test_kept_positions_follow_global_slot(self):
        plan = build_plan(CompressionSchedule.cosine(16, 28))
        transition = next(t for t in plan.transitions if not t.is_identity)
        expected = [global_slot(f, s, transition.n_prev) for f in range(5) for s in transition.kept_slots]
        assert kept_positions(transition, 5).tolist() == expected

    def test_segment_clips_follow_clip_of_frame(self):
        rng = np.random.default_rng(3)
        attention = QuestionAttention((rng.random((2, 3, 20)) / 40.0,), num_frames=10, tokens_per_frame=(2,))
        scores = score_segment(attention, (13, 10), SegmentConfig(window_frames=10, stride_frames=5, clip_size=4))
        assert sorted(scores.clip_scores) == sorted({clip_of_frame(f, 4) for f in range(13, 23)})

    def test_trace_layout_matches_sequence(self, toy_config, toy_params):
        rng = np.random.default_rng(0)
        video = rng.normal(size=(3, 4, toy_config.model_width))
        question = rng.normal(size=(2, toy_config.model_width))
        plan = build_plan(CompressionSchedule.cosine(4, toy_config.num_layers))
        trace = forward(toy_params, toy_config, video, question, plan, record_attention=True)
        for layer, block in enumerate(trace.question_attention()):
            grid = trace.grid(layer)
            assert grid.sequence_length == trace.sequence_lengths[layer]
            assert block.shape == (toy_config.num_heads, 2, grid.video_length)
