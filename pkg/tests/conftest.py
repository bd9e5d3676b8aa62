import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from core.behaviors.vocab import make_toy_vocab
from core.nanoformer.model import ModelConfig, build_model

settings.register_profile(
    "lab",
    deadline=None,
    max_examples=30,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("lab")

TINY = dict(n_layers=2, d_model=16, n_heads=2, d_ff=32, vocab_size=24, context_len=12, seed=3)


@pytest.fixture(scope="session")
def vocab():
    return make_toy_vocab()


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(**TINY)


@pytest.fixture
def tiny_model(tiny_config):
    return build_model(tiny_config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
