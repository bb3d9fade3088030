import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def line_cloud(n_lines=10, m=64, noise=0.0, seed=0, box=512):
    from linecodec.synthetic import SyntheticConfig, gen_synthetic

    cloud, truth = gen_synthetic(SyntheticConfig(n_lines, m, noise, box, seed))
    return cloud, truth
