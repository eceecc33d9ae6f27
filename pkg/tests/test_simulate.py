import numpy as np
import pytest
from scipy import stats

from misp.geodesy import SiteLocation
from misp.model import RHO_ICE, ModelConfig, ParameterState, mean_density, obs_variance
from misp.simulate import (
    SimulationSpec,
    draw_prior_state,
    generate_dataset,
    prior_curves,
    random_sites,
    stereographic_to_latlon,
)

from conftest import SITES5, supplied_truth

CFG = ModelConfig()


def test_phi_within_prior_support():
    rng = np.random.default_rng(0)
    phis = [draw_prior_state(CFG, SITES5[:2], rng=rng).phi for _ in range(500)]
    assert min(phis) > 1e-5 and max(phis) < 1e-1


def test_prior_surface_density_mean():
    curves = prior_curves(CFG, [0.0], n_draws=1000, seed=1)
    assert 0.30 <= curves[:, 0].mean() <= 0.45


def test_single_site_alpha_marginal():
    rng = np.random.default_rng(2)
    z = []
    for _ in range(2000):
        st = draw_prior_state(CFG, [SiteLocation(-75, 100)], rng=rng)
        z.append((st.alpha[0] - st.gamma[0]) / np.sqrt(st.sigma2[0] * (1 + CFG.jitter)))
    assert stats.kstest(z, "norm").pvalue > 0.01


def test_noiseless_limit():
    truth = supplied_truth(CFG, SITES5)
    truth.tau2 = np.full_like(truth.tau2, 1e-12)
    data, truth = generate_dataset(SimulationSpec(sites=SITES5, truth=truth, seed=3), CFG)
    for c, s in zip(data.cores, data.site_of_core):
        np.testing.assert_allclose(c.densities, mean_density(truth, CFG, s, c.depths), atol=1e-5)


def test_generated_densities_valid_and_deterministic():
    spec = SimulationSpec(n_sites=6, cores_per_site=2, seed=4)
    a, ta = generate_dataset(spec, CFG)
    b, tb = generate_dataset(spec, CFG)
    assert a.n_sites == 6 and a.n_cores == 12
    for ca, cb in zip(a.cores, b.cores):
        np.testing.assert_array_equal(ca.densities, cb.densities)
        assert np.all((ca.densities > 0) & (ca.densities < RHO_ICE))
    np.testing.assert_array_equal(ta.alpha, tb.alpha)
    assert a.campaigns == ["A", "B"]


def test_truth_curves_monotone_and_bounded():
    data, truth = generate_dataset(SimulationSpec(n_sites=8, seed=5), CFG)
    x = np.linspace(0, 140, 281)
    for s in range(8):
        mu = mean_density(truth, CFG, s, x)
        assert np.all(np.diff(mu) >= 0) and np.all((mu > 0) & (mu < RHO_ICE))


def test_residual_variance_matches_obs_variance():
    site = [SiteLocation(-80, 30)]
    truth = supplied_truth(CFG, site, campaigns=("A",))
    truth.tau2 = np.array([1e-6])
    spec = SimulationSpec(sites=site, n_depths=10**4, depth_min=0.5, core_lengths=30.0, campaigns=["A"],
                          truth=truth, seed=6)
    data, truth = generate_dataset(spec, CFG)
    c = data.cores[0]
    resid = c.densities - mean_density(truth, CFG, 0, c.depths)
    v = obs_variance(truth, CFG, c)
    assert resid.var() == pytest.approx(v, rel=0.10)


def test_random_sites_in_region():
    rng = np.random.default_rng(0)
    sites = random_sites(200, rng)
    lats = np.array([s.latitude for s in sites])
    assert np.all(lats < -70) and np.all(lats > -90)
    lat, lon = stereographic_to_latlon(0.0, 0.0)
    assert lat == -90.0


def test_zero_mean_prior_curves_saturate():
    curves = prior_curves(CFG, [30.0], n_draws=400, seed=7, zero_mean=True)
    assert np.mean(curves[:, 0] >= 0.9 * RHO_ICE) > 0.5
    base = prior_curves(CFG, [30.0], n_draws=400, seed=7)
    assert np.mean(base[:, 0] >= 0.9 * RHO_ICE) < np.mean(curves[:, 0] >= 0.9 * RHO_ICE)


def test_prior_curves_csv(tmp_path):
    from misp.simulate import write_prior_curves_csv

    p = tmp_path / "prior.csv"
    write_prior_curves_csv(CFG, [0.0, 30.0], p, n_draws=3, seed=1)
    lines = p.read_text().splitlines()
    assert lines[0] == "panel,draw,depth_m,density"
    assert len(lines) == 1 + 2 * 3 * 2
    assert lines[1].startswith("proposed,0,0,") and lines[-1].startswith("zero_mean,2,30,")
