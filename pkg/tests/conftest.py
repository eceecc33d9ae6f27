import numpy as np
import pytest

from misp.geodesy import SiteLocation
from misp.inference.fitting import fit
from misp.inference.hmc import SamplerConfig
from misp.model import ModelConfig, ParameterState
from misp.simulate import SimulationSpec, draw_fields, generate_dataset
from misp.rng import child_rng

SITES5 = [
    SiteLocation(-80.0, -120.0),
    SiteLocation(-80.3, -118.5),
    SiteLocation(-79.2, -121.7),
    SiteLocation(-81.0, -112.0),
    SiteLocation(-78.5, -125.0),
]


def supplied_truth(cfg, sites, campaigns=("A", "B"), seed=0):
    """A moderate parameter state with fields drawn from their GP layers."""
    gamma = np.array([-0.4, -1.2, -1.5, -1.5, -1.8, -1.6, -1.6])[: cfg.n_basis + 1]
    sigma2 = np.array([0.3, 0.5, 0.5, 0.5, 0.6, 0.6, 0.6])[: cfg.n_basis + 1]
    phi = 2e-3
    alpha, log_z = draw_fields(cfg, sites, gamma, sigma2, phi, child_rng(seed, "test-fields"))
    names = cfg.campaign_names(list(campaigns))
    tau2 = np.array([1e-4, 3e-4])[: len(names)] if len(names) == 2 else np.array([2e-4])
    return ParameterState(gamma, sigma2, phi, tau2, alpha, log_z, names)


@pytest.fixture(scope="session")
def cfg():
    return ModelConfig()


@pytest.fixture(scope="session")
def small_data(cfg):
    truth = supplied_truth(cfg, SITES5)
    spec = SimulationSpec(sites=SITES5, n_depths=20, core_lengths=[30, 60, 90, 120, 20], truth=truth, seed=11)
    data, truth = generate_dataset(spec, cfg)
    return data, truth


@pytest.fixture(scope="session")
def small_fit(cfg, small_data):
    data, truth = small_data
    sampler = SamplerConfig(n_chains=2, n_warmup=400, n_keep=300, leapfrog_steps=24, seed=5)
    return fit(cfg, data, sampler)
