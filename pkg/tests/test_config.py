import pytest
import yaml

from vtcomp.config import RunConfig, load_run_config
from vtcomp.errors import ValidationError
from vtcomp.plan import DropStrategy
from vtcomp.schedule import CompressionSchedule, ScheduleKind


def test_defaults():
    config = RunConfig()
    assert config.schedule.build() == CompressionSchedule.cosine(16, 28)
    assert config.strategy is DropStrategy.SUFFIX
    assert (config.segment.window_frames, config.segment.stride_frames) == (64, 32)
    assert config.chunk.n_selected_frames == 512
    assert config.model.num_layers == 28
    assert list(config.seeds.seeds) == [0]


def test_stepwise_without_stages_matches_cosine():
    config = RunConfig.from_mapping({"schedule": {"kind": "stepwise"}})
    schedule = config.schedule.build()
    assert schedule.kind is ScheduleKind.STEPWISE
    assert [count for _, count in schedule.stages] == [16, 11, 6, 1]
    assert abs(schedule.average_tokens_processed() - 259 / 28) <= 0.5


def test_explicit_stages():
    config = RunConfig.from_mapping({"schedule": {"kind": "stepwise", "stages": [[0, 16], [10, 4]]}})
    assert config.schedule.stages == ((0, 16), (10, 4))
    assert config.schedule.build().tokens_at(12) == 4


@pytest.mark.parametrize(
    "data",
    [
        {"schedules": {}},
        {"segment": {"window": 10}},
        {"segment": {"stride_frames": 0}},
        {"strategy": "random"},
        {"schedule": {"kind": "linear"}},
        {"schedule": {"kind": "stepwise", "stages": [[0, 8]]}},
        {"toy": {"num_heads": 3}},
        {"outputs": {"directory": 5}},
    ],
)
def test_invalid_mappings(data):
    with pytest.raises(ValidationError):
        RunConfig.from_mapping(data)


def test_load_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("schedule: {kind: constant, initial_tokens: 8}\nstrategy: uniform\nseeds: {start: 5, count: 2}\n")
    config = load_run_config(path)
    assert config.schedule.build() == CompressionSchedule.constant(8, 28)
    assert config.strategy is DropStrategy.UNIFORM
    assert list(config.seeds.seeds) == [5, 6]


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_run_config(path) == RunConfig()


def test_load_errors(tmp_path):
    with pytest.raises(ValidationError, match="not found"):
        load_run_config(tmp_path / "missing.yaml")
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ValidationError, match="mapping"):
        load_run_config(listing)
    broken = tmp_path / "broken.yaml"
    broken.write_text("schedule: [unclosed\n")
    with pytest.raises(ValidationError, match="YAML"):
        load_run_config(broken)


def test_dump_and_reload(tmp_path):
    config = RunConfig.from_mapping({"bench": {"end_bias_sweep": [0, 2]}, "outputs": {"directory": "out"}})
    path = config.dump(tmp_path / "run.yaml")
    assert yaml.safe_load(path.read_text())["strategy"] == "suffix"
    assert load_run_config(path) == config
