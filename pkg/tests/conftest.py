import numpy as np
import pytest

from geolevels.encfeat import EncoderConfig
from geolevels.forest import ForestConfig
from geolevels.hyperlocal import OrdinalConfig, train_score_model
from geolevels.scaling import PipelineConfig, train_stages
from geolevels.synthworld import WorldSpec, generate_world, sample_surrogate_labels

SMALL_SPEC = WorldSpec(n_districts=16, tiles_per_district=(30, 60))


def small_config(**kw) -> PipelineConfig:
    """Cut-down stage budgets so unit tests run in seconds."""
    base = dict(ordinal=OrdinalConfig(epochs=30, warmup_epochs=5, lr=1e-3), encoder=EncoderConfig(epochs=2),
                forest=ForestConfig(n_trees=20), n_surrogate=400,
                members=(("surrogate", 0), ("surrogate", 3), ("proxy", 0), ("proxy", 3)))
    base.update(kw)
    return PipelineConfig(**base)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(SMALL_SPEC, 3)


@pytest.fixture(scope="session")
def labeled(small_world):
    return sample_surrogate_labels(small_world, 400, 0)


@pytest.fixture(scope="session")
def score_model(labeled):
    return train_score_model(labeled, OrdinalConfig(epochs=30, warmup_epochs=5, lr=1e-3), 0)


@pytest.fixture(scope="session")
def small_stages(small_world):
    return train_stages(small_world, small_config(), 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance as acc
    if acc.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acc.RESULTS):
            terminalreporter.write_line(acc.RESULTS[n])
