import numpy as np
import pytest

from pmudetect.config import RunConfig
from pmudetect.data import SynthConfig, generate_synthetic
from pmudetect.detect import run_prefix


def fast_config(seed=3, **overrides):
    """Reduced-size config for unit tests; full defaults stay in acceptance."""
    base = dict(seed=seed, lfm_epochs=80, sent_epochs=10, mlc_epochs=30,
                kmeans_max_iter=50)
    base.update(overrides)
    return RunConfig(**base)


def small_synth(seed=3, n_normal=60, n_pmu=10, n_items=120):
    return generate_synthetic(SynthConfig(
        n_normal=n_normal, n_pmu=n_pmu, n_items=n_items, seed=seed))


@pytest.fixture(scope="session")
def small_dataset():
    return small_synth()


@pytest.fixture(scope="session")
def small_state(small_dataset):
    """Shared trained pipeline prefix on the small corpus."""
    return run_prefix(small_dataset, fast_config())


@pytest.fixture(scope="session")
def clean_dataset():
    """No malicious users at all."""
    return small_synth(seed=5, n_normal=40, n_pmu=0, n_items=90)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
