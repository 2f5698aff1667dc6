import numpy as np
import pytest
from loguru import logger

from vtcomp.plan import build_plan
from vtcomp.schedule import CompressionSchedule
from vtcomp.toy import ToyConfig, init_params, memorization_task


@pytest.fixture(autouse=True)
def _quiet_logger():
    logger.remove()
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grad_config():
    return ToyConfig(num_layers=2, num_heads=2, model_width=8, mlp_width=16, dtype="float64")


@pytest.fixture
def grad_task(grad_config):
    return memorization_task(grad_config, num_frames=3, initial_tokens=4, question_tokens=2, seed=7)


@pytest.fixture
def cosine_plan_l2():
    return build_plan(CompressionSchedule.cosine(4, 2))


@pytest.fixture
def toy_config():
    return ToyConfig(num_layers=4, num_heads=2, model_width=32, mlp_width=64)


@pytest.fixture
def toy_params(toy_config):
    return init_params(toy_config, seed=0)
