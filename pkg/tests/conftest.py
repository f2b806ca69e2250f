import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import riskcast as rc
from riskcast.generators import roundabout_branch_templates

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def roundabout_cfg():
    return rc.default_roundabout()


@pytest.fixture(scope="session")
def channel_cfg():
    return rc.default_blockage_channel()


@pytest.fixture(scope="session")
def matched_mixture(roundabout_cfg):
    return rc.ForkingMixture(
        templates=roundabout_branch_templates(roundabout_cfg),
        probs=np.asarray(roundabout_cfg.exit_probs, dtype=float),
        noise_std=roundabout_cfg.noise_std,
        domain=roundabout_cfg.domain,
    )


@pytest.fixture(scope="session")
def roundabout_env(roundabout_cfg):
    return lambda rng: rc.gen_roundabout_series(roundabout_cfg, rng)


@pytest.fixture(scope="session")
def channel_env(channel_cfg):
    return lambda rng: rc.gen_blockage_channel_series(channel_cfg, rng)
