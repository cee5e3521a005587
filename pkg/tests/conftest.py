import numpy as np
import pytest

from primalign import datagen, model
from primalign.actions import BinningConfig


@pytest.fixture(scope="session")
def cfg() -> BinningConfig:
    return BinningConfig()


@pytest.fixture(scope="session")
def tiny_params():
    """A small model whose full parameter vector is cheap to finite-difference."""
    cfg = BinningConfig()
    dims = model.dims_for(cfg, n_instructions=3, obs_dim=6, d_v=5, d_l=4, hidden=5, d=4)
    return model.init_params(0, dims, cfg)


@pytest.fixture(scope="session")
def small_suite():
    """A 3-task suite with a handful of episodes for fast training tests."""
    suite = datagen.build_suite(1, 3, 0.5, phases_per_task=3, duration=4)
    episodes = datagen.generate_dataset(suite, 6, base_seed=1)
    return suite, episodes


def make_batch(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Random embeddings bounded away from zero norm."""
    a = rng.normal(size=(n, d))
    return a + 0.1 * np.sign(a)


def random_target(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    t = rng.uniform(0.05, 1.0, size=(n, k))
    return t / t.sum(axis=1, keepdims=True)
