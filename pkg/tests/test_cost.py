import pytest

from vtcomp.cost import (
    CHARGE_OUTPUT,
    LVBENCH_QUERY_TOKENS,
    REPORT_FRAMES,
    ModelDims,
    frames_for_budget,
    layer_flops,
    prefill_flops,
    prefill_report,
)
from vtcomp.schedule import CompressionSchedule

COSINE = CompressionSchedule.cosine(16, 28)


def test_linear_params():
    assert ModelDims().linear_params == 46_792_704
    assert ModelDims().attention_width == 1536


def test_layer_flops_single_token():
    assert layer_flops(1) == 2 * (46_792_704 + 2 * 1536)


def test_layer_flops_reference_sequence():
    # 1024 frames × 16 tokens + 863 question tokens
    assert layer_flops(17247) == 3_441_655_683_072


def test_layer_flops_conventions():
    assert layer_flops(1000, flops_per_mac=1) * 2 == layer_flops(1000)
    full = layer_flops(1000)
    halved = layer_flops(1000, causal=True)
    assert full - halved == 2 * 1000 * 1000 * 1536
    with pytest.raises(ValueError):
        layer_flops(0)


def test_output_charge_reductions():
    report = prefill_report(REPORT_FRAMES, LVBENCH_QUERY_TOKENS, COSINE, charge=CHARGE_OUTPUT)
    reductions = [s.reduction for s in report.scenarios]
    for value, expected in zip(reductions, (0.53, 0.56, 0.58)):
        assert value == pytest.approx(expected, abs=0.05)
    assert reductions == sorted(reductions)


def test_input_charge_is_more_conservative():
    by_input = prefill_report(REPORT_FRAMES, LVBENCH_QUERY_TOKENS, COSINE)
    by_output = prefill_report(REPORT_FRAMES, LVBENCH_QUERY_TOKENS, COSINE, charge=CHARGE_OUTPUT)
    for a, b in zip(by_input.scenarios, by_output.scenarios):
        assert 0 < a.reduction < b.reduction
        assert a.baseline_flops == b.baseline_flops


def test_baseline_macs_magnitude():
    report = prefill_report(REPORT_FRAMES, LVBENCH_QUERY_TOKENS, COSINE, flops_per_mac=1)
    for scenario, tera_macs in zip(report.scenarios, (43, 132, 448)):
        assert scenario.baseline_flops / 1e12 == pytest.approx(tera_macs, rel=0.2)


def test_constant_schedule_saves_nothing():
    report = prefill_report(REPORT_FRAMES, LVBENCH_QUERY_TOKENS, CompressionSchedule.constant(16, 28))
    assert all(s.reduction == 0.0 for s in report.scenarios)


def test_convention_does_not_change_reduction():
    flops = prefill_report(2048, LVBENCH_QUERY_TOKENS, COSINE)
    macs = prefill_report(2048, LVBENCH_QUERY_TOKENS, COSINE, flops_per_mac=1)
    assert flops.scenarios[0].reduction == pytest.approx(macs.scenarios[0].reduction, abs=1e-15)
    assert macs.notes()[2].startswith("convention: MACs")


def test_causal_reductions():
    report = prefill_report(REPORT_FRAMES, LVBENCH_QUERY_TOKENS, COSINE, causal=True)
    reductions = [s.reduction for s in report.scenarios]
    assert all(0 <= r < 1 for r in reductions)
    assert reductions == sorted(reductions)


def test_superlinear_growth():
    constant = CompressionSchedule.constant(16, 28)
    small = prefill_flops(1024, LVBENCH_QUERY_TOKENS, constant)
    large = prefill_flops(2048, LVBENCH_QUERY_TOKENS, constant)
    assert large > 2 * small


def test_layer_mismatch():
    with pytest.raises(ValueError):
        prefill_flops(16, 10, CompressionSchedule.cosine(16, 12))


def test_invalid_arguments():
    with pytest.raises(ValueError):
        prefill_report([], 10, COSINE)
    with pytest.raises(ValueError):
        prefill_report(16, -1, COSINE)
    with pytest.raises(ValueError):
        prefill_report(16, 10, COSINE, charge="both")
    with pytest.raises(ValueError):
        ModelDims(num_layers=0)


def test_report_rows_and_notes():
    dims = ModelDims(num_layers=4, model_width=64, num_attention_heads=4, num_kv_heads=2, head_width=16, mlp_width=128)
    schedule = CompressionSchedule.cosine(4, 4)
    report = prefill_report([8, 16], 3, schedule, dims)
    assert [row[0] for row in report.rows()] == [8, 16]
    frames, query, baseline, compressed, reduction = report.rows()[0]
    assert baseline == report.scenarios[0].baseline_flops / 1e12
    assert "width=64" in report.notes()[0]
    assert report.notes()[-1].startswith("LLM layers only")


def test_frames_for_budget():
    frames = frames_for_budget(1024, LVBENCH_QUERY_TOKENS, COSINE)
    constant = CompressionSchedule.constant(16, 28)
    budget = prefill_flops(1024, LVBENCH_QUERY_TOKENS, constant)
    assert frames > 1024
    assert prefill_flops(frames, LVBENCH_QUERY_TOKENS, COSINE) <= budget
    assert prefill_flops(frames + 1, LVBENCH_QUERY_TOKENS, COSINE) > budget


def test_frames_for_budget_capped():
    frames = frames_for_budget(1024, LVBENCH_QUERY_TOKENS, COSINE, max_frames=1100)
    assert 1024 <= frames <= 1100
