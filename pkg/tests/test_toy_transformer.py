import numpy as np
import pytest

from vtcomp.errors import ContractError, NumericError
from vtcomp.plan import build_plan
from vtcomp.schedule import CompressionSchedule
from vtcomp.toy import (
    ToyConfig,
    evaluate_loss,
    forward,
    gradient_check,
    init_params,
    loss_and_backward,
    memorization_task,
    parameter_shapes,
)


def _inputs(config, frames, n1, question, seed=0):
    rng = np.random.default_rng(seed)
    width = config.input_width or config.model_width
    return rng.standard_normal((frames, n1, width)), rng.standard_normal((question, width))


class TestInit:
    def test_deterministic(self, toy_config):
        a = init_params(toy_config, seed=3)
        b = init_params(toy_config, seed=3)
        assert a.keys() == b.keys()
        for name in a:
            assert a[name].tobytes() == b[name].tobytes()

    def test_seeds_differ(self, toy_config):
        a = init_params(toy_config, seed=1)
        b = init_params(toy_config, seed=2)
        assert any(not np.array_equal(a[n], b[n]) for n in a)

    def test_shapes(self):
        config = ToyConfig(num_layers=1, num_heads=2, model_width=8, mlp_width=16)
        params = init_params(config, seed=1)
        assert params["layers.0.wq"].shape == (8, 8)
        assert params["layers.0.w1"].shape == (8, 16)
        assert {n: p.shape for n, p in params.items()} == parameter_shapes(config)

    def test_scale(self, toy_config, toy_params):
        bound = 1 / np.sqrt(toy_config.model_width)
        assert np.max(np.abs(toy_params["layers.0.wq"])) <= bound + 1e-6
        assert np.all(toy_params["layers.0.norm1"] == 1)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ToyConfig(num_heads=3, model_width=32)
        with pytest.raises(ValueError):
            ToyConfig(dtype="int32")


class TestForward:
    def test_no_plan_keeps_length(self, toy_config, toy_params):
        video, question = _inputs(toy_config, 2, 4, 3)
        trace = forward(toy_params, toy_config, video, question)
        assert trace.sequence_lengths == [2 * 4 + 3] * toy_config.num_layers
        assert trace.video_tokens_per_frame == [4] * (toy_config.num_layers + 1)

    def test_cosine_plan_shape_law(self, toy_config, toy_params):
        schedule = CompressionSchedule.cosine(4, toy_config.num_layers)
        video, question = _inputs(toy_config, 2, 4, 3)
        trace = forward(toy_params, toy_config, video, question, build_plan(schedule))
        assert trace.video_totals == [8, 8, 6, 4, 2]
        for layer in range(toy_config.num_layers):
            assert trace.sequence_lengths[layer] == 2 * schedule.tokens_at(layer) + 3
            assert trace.question_inputs[layer].shape == (3, toy_config.model_width)
            assert trace.video_inputs[layer].shape == (2, schedule.tokens_at(layer), toy_config.model_width)

    def test_positions_travel_with_tokens(self, toy_config, toy_params):
        video, question = _inputs(toy_config, 2, 4, 1)
        trace = forward(toy_params, toy_config, video, question, build_plan(CompressionSchedule.cosine(4, 4)))
        assert trace.positions[2].tolist() == [1, 2, 3, 5, 6, 7, 8]
        assert trace.positions[3].tolist() == [2, 3, 6, 7, 8]

    @pytest.mark.parametrize("seed", range(20))
    def test_attention_rows_normalized_and_causal(self, toy_config, seed):
        params = init_params(toy_config, seed=seed)
        video, question = _inputs(toy_config, 3, 4, 2, seed=seed)
        plan = build_plan(CompressionSchedule.cosine(4, toy_config.num_layers))
        trace = forward(params, toy_config, video, question, plan, record_attention=True)
        assert len(trace.attention) == toy_config.num_layers
        for weights in trace.attention:
            assert weights.dtype == np.float32
            np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-5)
            assert np.all(np.triu(weights, k=1) == 0)

    def test_question_attention_blocks(self, toy_config, toy_params):
        video, question = _inputs(toy_config, 2, 4, 3)
        plan = build_plan(CompressionSchedule.cosine(4, toy_config.num_layers))
        trace = forward(toy_params, toy_config, video, question, plan, record_attention=True)
        blocks = trace.question_attention()
        assert [b.shape for b in blocks] == [(2, 3, 8), (2, 3, 8), (2, 3, 6), (2, 3, 4)]

    def test_question_attention_needs_recording(self, toy_config, toy_params):
        video, question = _inputs(toy_config, 2, 4, 1)
        with pytest.raises(ContractError):
            forward(toy_params, toy_config, video, question).question_attention()

    def test_plan_mismatch(self, toy_config, toy_params):
        video, question = _inputs(toy_config, 2, 4, 1)
        with pytest.raises(ContractError):
            forward(toy_params, toy_config, video, question, build_plan(CompressionSchedule.cosine(4, 3)))
        with pytest.raises(ContractError):
            forward(toy_params, toy_config, video, question, build_plan(CompressionSchedule.cosine(8, 4)))

    def test_width_mismatch(self, toy_config, toy_params):
        with pytest.raises(ContractError):
            forward(toy_params, toy_config, np.zeros((2, 4, 5)), np.zeros((1, 5)))

    def test_non_finite_activation(self, toy_config, toy_params):
        video, question = _inputs(toy_config, 1, 2, 1)

        def poison(layer, hidden):
            if layer == 1:
                hidden = hidden.copy()
                hidden[0, 0] = np.nan
                return hidden
            return None

        with pytest.raises(NumericError) as info:
            forward(toy_params, toy_config, video, question, on_layer_output=poison)
        assert info.value.layer == 1


class TestBackward:
    def test_gradient_check_with_cosine_plan(self, grad_config, grad_task, cosine_plan_l2):
        params = init_params(grad_config, seed=11)
        errors = gradient_check(params, grad_config, grad_task, cosine_plan_l2)
        assert set(errors) == set(params)
        assert max(errors.values()) <= 1e-4

    def test_gradient_check_with_embedding(self):
        config = ToyConfig(num_layers=1, num_heads=2, model_width=8, mlp_width=16, input_width=5, dtype="float64")
        task = memorization_task(config, num_frames=2, initial_tokens=4, question_tokens=2, seed=3)
        errors = gradient_check(init_params(config, seed=5), config, task, build_plan(CompressionSchedule.cosine(4, 1)))
        assert max(errors.values()) <= 1e-4

    def test_zero_head_zero_target(self, grad_config, grad_task):
        params = init_params(grad_config, seed=2, zero_head=True)
        loss, grads = loss_and_backward(
            params, grad_config, grad_task.video_tokens, grad_task.question_tokens, np.zeros(1)
        )
        assert loss == 0.0
        assert all(np.all(g == 0) for g in grads.values())

    def test_unused_embedding_rows_get_zero_gradient(self):
        config = ToyConfig(num_layers=2, num_heads=2, model_width=8, mlp_width=16, input_width=4, dtype="float64")
        rng = np.random.default_rng(0)
        video = rng.standard_normal((2, 4, 4))
        question = rng.standard_normal((2, 4))
        video[..., 3] = 0.0
        question[..., 3] = 0.0
        params = init_params(config, seed=1)
        _, grads = loss_and_backward(params, config, video, question, np.ones(1))
        assert np.all(grads["embed"][3] == 0)
        assert np.any(grads["embed"][:3] != 0)

    def test_dropped_token_perturbation_has_no_effect(self, grad_config, grad_task, cosine_plan_l2):
        params = init_params(grad_config, seed=4)
        transition = cosine_plan_l2.transitions[0]
        assert transition.dropped_slots == (0,)
        frames = grad_task.num_frames

        def perturb(slots):
            def hook(layer, hidden):
                if layer != 0:
                    return None
                hidden = hidden.copy()
                for f in range(frames):
                    for s in slots:
                        hidden[f * transition.n_prev + s] += 5.0
                return hidden
            return hook

        args = (params, grad_config, grad_task.video_tokens, grad_task.question_tokens, grad_task.target, cosine_plan_l2)
        base = evaluate_loss(*args)
        assert evaluate_loss(*args, on_layer_output=perturb(transition.dropped_slots)) == base
        assert evaluate_loss(*args, on_layer_output=perturb(transition.kept_slots[-1:])) != base
