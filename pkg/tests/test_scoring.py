import numpy as np
import pytest

from vtcomp.errors import ContractError, CoverageError, ValidationError
from vtcomp.plan import build_plan
from vtcomp.schedule import CompressionSchedule
from vtcomp.scoring import (
    ChunkConfig,
    FrameScoreTable,
    QuestionAttention,
    SegmentConfig,
    aggregate,
    chunk_plan,
    frame_coverage,
    frame_observations,
    global_score,
    restricted_source,
    score_segment,
    scoring_windows,
    segment_windows,
    segmented_scores,
    select_frames_for_duration,
    select_top_k,
)
from vtcomp.toy import ToyConfig, forward, init_params


def _single(values, tokens_per_frame=1):
    """One layer, one head, one question row."""
    values = np.asarray(values, dtype=np.float64)
    frames = len(values) // tokens_per_frame
    return QuestionAttention((values.reshape(1, 1, -1),), frames, (tokens_per_frame,))


def _random_attention(rng, frames):
    layers = int(rng.integers(1, 3))
    heads = int(rng.integers(1, 3))
    rows = int(rng.integers(1, 3))
    counts = tuple(int(rng.integers(1, 4)) for _ in range(layers))
    blocks = tuple(
        rng.dirichlet(np.ones(frames * n + 1), size=(heads, rows))[..., :frames * n] for n in counts
    )
    return QuestionAttention(blocks, frames, counts)


def _brute_force_scores(attention, cfg):
    total = attention.num_frames
    w = cfg.window_frames
    if total <= w:
        windows = [(0, total)]
    else:
        starts = list(range(0, total - w + 1, cfg.stride_frames))
        if starts[-1] != total - w:
            starts.append(total - w)
        windows = [(s, w) for s in starts]
    observed = [[] for _ in range(total)]
    for start, length in windows:
        per_frame = []
        for f in range(length):
            layer_values = []
            for block, n in zip(attention.blocks, attention.tokens_per_frame):
                heads, rows, _ = block.shape
                acc = 0.0
                for h in range(heads):
                    for r in range(rows):
                        row = block[h, r]
                        question_mass = max(1.0 - row.sum(), 0.0)
                        local = row[start * n:(start + length) * n]
                        denominator = local.sum() + question_mass
                        acc += local[f * n:(f + 1) * n].sum() / denominator / n
                layer_values.append(acc / (heads * rows))
            per_frame.append(sum(layer_values) / len(layer_values))
        clips = [(start + f) // cfg.clip_size for f in range(length)]
        for f in range(length):
            members = [per_frame[g] for g in range(length) if clips[g] == clips[f]]
            observed[start + f].append(sum(members) / len(members))
    return np.array([sum(o) / len(o) for o in observed])


class TestWindows:
    def test_tail_window_added(self):
        assert segment_windows(200) == [(0, 64), (32, 64), (64, 64), (96, 64), (128, 64), (136, 64)]

    def test_exact_fit(self):
        assert segment_windows(128) == [(0, 64), (32, 64), (64, 64)]

    def test_short_video_single_window(self):
        assert segment_windows(50) == [(0, 50)]
        assert segment_windows(64) == [(0, 64)]

    def test_invalid(self):
        with pytest.raises(ValueError):
            segment_windows(0)
        with pytest.raises(ValueError):
            SegmentConfig(window_frames=8, stride_frames=9)
        with pytest.raises(ValueError):
            ChunkConfig(chunk_frames=512, n_repeat=3)

    def test_chunk_plan(self):
        assert chunk_plan(1200) == [(0, 512), (256, 512), (512, 512), (688, 512)]
        assert chunk_plan(300) == [(0, 300)]
        assert ChunkConfig(512, 8, 1).chunk_stride == 64

    def test_coverage(self):
        coverage = frame_coverage(segment_windows(128), 128)
        assert coverage[:32].tolist() == [1] * 32
        assert coverage[32:96].tolist() == [2] * 64
        assert coverage[96:].tolist() == [1] * 32

    def test_chunked_windows_cover_every_frame(self):
        windows = scoring_windows(1200, SegmentConfig(), ChunkConfig())
        assert np.all(frame_coverage(windows, 1200) >= 1)
        assert all(length == 64 for _, length in windows)


class TestScoreSegment:
    values = [0.1, 0.1, 0.2, 0.0, 0.05, 0.05, 0.3, 0.1]

    def test_frame_observations(self):
        np.testing.assert_allclose(frame_observations(_single(self.values, 2)), [0.1, 0.1, 0.05, 0.2])

    def test_clip_means_aligned(self):
        result = score_segment(_single(self.values, 2), (0, 4), SegmentConfig(clip_size=2))
        assert result.clip_scores == pytest.approx({0: 0.1, 1: 0.125})
        np.testing.assert_allclose(result.frame_scores, [0.1, 0.1, 0.125, 0.125])

    def test_clip_means_use_global_clip_index(self):
        result = score_segment(_single(self.values, 2), (1, 4), SegmentConfig(clip_size=2))
        assert result.clip_scores == pytest.approx({0: 0.1, 1: 0.075, 2: 0.2})
        assert list(result.frames) == [1, 2, 3, 4]

    def test_window_length_mismatch(self):
        with pytest.raises(ContractError):
            score_segment(_single(self.values, 2), (0, 5))

    def test_scoring_layers(self):
        attention = QuestionAttention(
            (np.array([[[0.4, 0.1]]]), np.array([[[0.0, 0.6]]])), 2, (1, 1)
        )
        np.testing.assert_allclose(frame_observations(attention), [0.2, 0.35])
        np.testing.assert_allclose(frame_observations(attention, (1,)), [0.0, 0.6])
        with pytest.raises(ContractError):
            frame_observations(attention, (2,))

    def test_global_score(self):
        table = global_score(_single(self.values, 2), SegmentConfig(clip_size=1))
        np.testing.assert_allclose(table.scores, [0.1, 0.1, 0.05, 0.2])
        assert table.coverage.tolist() == [1, 1, 1, 1]


class TestSegmentedScores:
    @pytest.mark.parametrize("seed", range(50))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        frames = int(rng.integers(1, 17))
        window = int(rng.integers(1, frames + 1))
        cfg = SegmentConfig(
            window_frames=window,
            stride_frames=int(rng.integers(1, window + 1)),
            clip_size=int(rng.integers(1, 4)),
        )
        attention = _random_attention(rng, frames)
        table = segmented_scores(restricted_source(attention), frames, cfg)
        np.testing.assert_allclose(table.scores, _brute_force_scores(attention, cfg), rtol=0, atol=1e-12)

    def test_short_video_equals_global(self, rng):
        attention = _random_attention(rng, 10)
        cfg = SegmentConfig(clip_size=1)
        segmented = segmented_scores(restricted_source(attention), 10, cfg)
        np.testing.assert_array_equal(segmented.scores, global_score(attention, cfg).scores)

    def test_workers_deterministic(self, rng):
        attention = _random_attention(rng, 16)
        cfg = SegmentConfig(window_frames=4, stride_frames=2, clip_size=1)
        serial = segmented_scores(restricted_source(attention), 16, cfg)
        threaded = segmented_scores(restricted_source(attention), 16, cfg, workers=4)
        np.testing.assert_array_equal(serial.scores, threaded.scores)
        np.testing.assert_array_equal(serial.coverage, threaded.coverage)

    def test_coverage_counts_windows(self):
        def uniform(start, length):
            return QuestionAttention((np.full((1, 1, length), 1.0 / (length + 1)),), length, (1,))

        segment, chunk = SegmentConfig(), ChunkConfig()
        table = segmented_scores(uniform, 1200, segment, chunk)
        expected = frame_coverage(scoring_windows(1200, segment, chunk), 1200)
        np.testing.assert_array_equal(table.coverage, expected)
        np.testing.assert_allclose(table.scores, 1.0 / 65)

    def test_raising_attention_on_a_frame_raises_its_score(self):
        base = [0.1, 0.1, 0.1, 0.1]
        bumped = [0.1, 0.1, 0.3, 0.1]
        cfg = SegmentConfig(clip_size=1)
        before = global_score(_single(base), cfg).scores
        after = global_score(_single(bumped), cfg).scores
        assert after[2] > before[2]
        np.testing.assert_array_equal(np.delete(after, 2), np.delete(before, 2))

    def test_uniform_scaling_keeps_selection(self, rng):
        attention = _random_attention(rng, 12)
        scaled = QuestionAttention(tuple(0.5 * b for b in attention.blocks), 12, attention.tokens_per_frame)
        cfg = SegmentConfig(clip_size=1)
        a, b = global_score(attention, cfg), global_score(scaled, cfg)
        np.testing.assert_allclose(b.scores, 0.5 * a.scores, rtol=1e-12)
        assert select_top_k(a, 4).frames == select_top_k(b, 4).frames

    def test_uncovered_frame(self):
        with pytest.raises(CoverageError):
            aggregate([(0, 1.0)], 2)

    def test_aggregate_is_order_independent(self):
        observations = [(0, 0.1), (0, 0.2), (0, 0.3), (1, 1e-17), (1, 1.0)]
        forward_order = aggregate(observations, 2)
        reverse_order = aggregate(list(reversed(observations)), 2)
        np.testing.assert_array_equal(forward_order.scores, reverse_order.scores)
        assert forward_order.coverage.tolist() == [3, 2]


class TestSelection:
    table = FrameScoreTable(np.array([0.1, 0.5, 0.5, 0.2, 0.9]), np.ones(5, dtype=np.int64))

    def test_top_k_ties_prefer_earlier(self):
        assert select_top_k(self.table, 2).frames == (1, 4)
        assert select_top_k(self.table, 3).frames == (1, 2, 4)
        assert select_top_k(self.table, 3).scores == (0.5, 0.5, 0.9)

    def test_k_larger_than_video(self):
        assert select_top_k(self.table, 10).frames == (0, 1, 2, 3, 4)

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            select_top_k(self.table, 0)
        with pytest.raises(ValueError):
            select_top_k(self.table, 1, granularity="scene")

    def test_rank_of(self):
        assert [self.table.rank_of(f) for f in range(5)] == [5, 2, 3, 4, 1]

    def test_clip_granularity(self):
        table = FrameScoreTable(np.array([0.1, 0.1, 0.9, 0.8, 0.5, 0.5]), np.ones(6, dtype=np.int64))
        assert select_top_k(table, 3, granularity="clip", clip_size=2).frames == (2, 3, 4)
        assert select_top_k(table, 2, granularity="clip", clip_size=2).frames == (2, 3)

    def test_rows(self):
        rows = self.table.rows(selected=[4])
        assert rows[4] == (4, 0.9, 1, 1)
        assert rows[0] == (0, 0.1, 1, 0)

    def test_duration_budget(self):
        assert select_frames_for_duration(600) == 512
        assert select_frames_for_duration(3600) == 2048
        with pytest.raises(ValueError):
            select_frames_for_duration(-1)


class TestQuestionAttention:
    full = np.array([[[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.2, 0.3, 0.5]]])

    def test_from_full_maps(self):
        attention = QuestionAttention.from_full_maps([self.full], 2, [1])
        np.testing.assert_allclose(attention.blocks[0], [[[0.2, 0.3]]])
        assert attention.question_tokens == 1

    def test_from_full_maps_rejects_future_attention(self):
        bad = self.full.copy()
        bad[0, 0] = [0.9, 0.1, 0.0]
        with pytest.raises(ValidationError):
            QuestionAttention.from_full_maps([bad], 2, [1])

    def test_from_full_maps_rejects_unnormalized_rows(self):
        with pytest.raises(ValidationError):
            QuestionAttention.from_full_maps([0.9 * self.full], 2, [1])

    def test_rejects_invalid_blocks(self):
        with pytest.raises(ValidationError):
            _single([0.5, -0.1])
        with pytest.raises(ValidationError):
            _single([0.6, 0.5])
        with pytest.raises(ValidationError):
            QuestionAttention((np.zeros((1, 1, 3)),), 2, (1,))

    def test_restrict_renormalizes(self):
        attention = QuestionAttention.from_full_maps([self.full], 2, [1])
        np.testing.assert_allclose(attention.restrict(1, 1).blocks[0], [[[0.375]]])
        with pytest.raises(ContractError):
            attention.restrict(1, 2)

    def test_from_toy_model(self):
        config = ToyConfig(num_layers=3, num_heads=2, model_width=16, mlp_width=32)
        rng = np.random.default_rng(0)
        video = rng.standard_normal((4, 4, 16))
        question = rng.standard_normal((2, 16))
        plan = build_plan(CompressionSchedule.cosine(4, 3))
        trace = forward(init_params(config, seed=0), config, video, question, plan, record_attention=True)
        attention = QuestionAttention.from_full_maps(trace.attention, 4, trace.video_tokens_per_frame[:-1])
        assert attention.tokens_per_frame == tuple(trace.video_tokens_per_frame[:3])
        table = segmented_scores(restricted_source(attention), 4, SegmentConfig(window_frames=2, stride_frames=1, clip_size=1))
        assert table.coverage.tolist() == [1, 2, 2, 1]
        assert np.all(table.scores > 0)
