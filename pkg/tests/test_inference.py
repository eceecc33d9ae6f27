import math

import numpy as np
import pytest
from scipy import stats

from misp.errors import ConfigurationError, InputError, SamplerFailure
from misp.inference import (
    SamplerConfig,
    effective_sample_size,
    leapfrog,
    mcse_mean,
    sample,
    split_rhat,
    summarize,
)
from misp.inference.hmc import _warmup_windows, run_chain


class Gaussian:
    def __init__(self, scale):
        self.scale = np.asarray(scale, dtype=float)

    def __call__(self, u):
        return -0.5 * float(np.sum((u / self.scale) ** 2)), -u / self.scale**2


def gaussian(dim, scale=None):
    return Gaussian(np.ones(dim) if scale is None else scale)


def ar1_chains(rng, m, n, rho):
    x = np.empty((m, n))
    x[:, 0] = rng.standard_normal(m)
    eps = rng.standard_normal((m, n)) * math.sqrt(1 - rho**2)
    for t in range(1, n):
        x[:, t] = rho * x[:, t - 1] + eps[:, t]
    return x


# ---------------------------------------------------------------- leapfrog


def test_leapfrog_zero_steps_identity():
    u, p = np.array([0.3, -1.0]), np.array([1.0, 2.0])
    u1, p1 = leapfrog(u, p, 0.1, 0, gaussian(2))
    np.testing.assert_array_equal(u1, u)
    np.testing.assert_array_equal(p1, p)


def test_leapfrog_reversible():
    rng = np.random.default_rng(0)
    target = gaussian(5, scale=[1, 2, 0.5, 3, 1.5])
    for _ in range(20):
        u, p = rng.standard_normal(5), rng.standard_normal(5)
        u1, p1 = leapfrog(u, p, 0.13, 25, target)
        u2, p2 = leapfrog(u1, -p1, 0.13, 25, target)
        assert np.max(np.abs(u2 - u)) < 1e-10
        assert np.max(np.abs(-p2 - p)) < 1e-10


def test_leapfrog_energy_error_second_order():
    target = gaussian(1)
    u, p = np.array([1.0]), np.array([0.5])
    h0 = 0.5 * (u @ u + p @ p)
    errs = []
    for eps in (0.2, 0.1, 0.05, 0.025):
        n = int(round(2.0 / eps))
        u1, p1 = leapfrog(u, p, eps, n, target)
        errs.append(abs(0.5 * (u1 @ u1 + p1 @ p1) - h0))
    errs = np.array(errs)
    assert np.all(np.diff(errs) < 0)
    ratios = errs[:-1] / errs[1:]
    np.testing.assert_allclose(ratios, 4.0, rtol=0.15)


def test_leapfrog_nonfinite_gradient_flags():
    def bad(u):
        return np.full_like(u, np.nan)

    u1, _ = leapfrog(np.zeros(2), np.ones(2), 0.1, 3, bad)
    assert not np.all(np.isfinite(u1))


# ---------------------------------------------------------------- sampler


def test_sampler_config_validation():
    with pytest.raises(ConfigurationError):
        SamplerConfig(n_chains=0)
    with pytest.raises(ConfigurationError):
        SamplerConfig(target_accept=1.0)
    with pytest.raises(ConfigurationError):
        SamplerConfig(n_warmup=-1)
    with pytest.raises(ConfigurationError):
        SamplerConfig(step_size=0.0)
    assert SamplerConfig().n_chains * SamplerConfig().n_keep == 50000


def test_warmup_windows_layout():
    init, end, ends = _warmup_windows(1000)
    assert init == 75 and end == 900
    assert ends[-1] == 900
    assert ends[0] == 100
    assert all(b > a for a, b in zip(ends, ends[1:]))


def test_gaussian_2d_ks_and_acceptance():
    cfg = SamplerConfig(n_chains=2, n_warmup=1000, n_keep=4000, leapfrog_steps=8, seed=1)
    target = gaussian(2, scale=[1.0, 3.0])
    out = sample(cfg, target, [np.zeros(2), np.ones(2)])
    assert abs(out.acceptance_rate() - cfg.target_accept) <= 0.1
    draws = out.flat()
    for k, s in enumerate([1.0, 3.0]):
        x = draws[::10, k] / s
        assert stats.kstest(x, "norm").pvalue > 0.01


def test_seed_determinism_and_worker_invariance():
    cfg = SamplerConfig(n_chains=2, n_warmup=200, n_keep=100, leapfrog_steps=5, seed=42)
    target = gaussian(3)
    a = sample(cfg, target, [np.zeros(3), np.ones(3)])
    b = sample(cfg, target, [np.zeros(3), np.ones(3)])
    c = sample(cfg, target, [np.zeros(3), np.ones(3)], n_workers=2)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.values, c.values)
    assert a.values.shape == (2, 100, 3)


def test_thinning_keeps_requested_count():
    cfg = SamplerConfig(n_chains=1, n_warmup=50, n_keep=30, leapfrog_steps=3, seed=0, thin=3)
    out = sample(cfg, gaussian(2), [np.zeros(2)])
    assert out.values.shape == (1, 30, 2)


def funnel(u):
    v, x = u[0], u[1:]
    with np.errstate(over="ignore", invalid="ignore"):
        ev = np.exp(-v)
        lp = -v * v / 18.0 - 0.5 * x.size * v - 0.5 * np.sum(x * x) * ev
        g = np.empty_like(u)
        g[0] = -v / 9.0 - 0.5 * x.size + 0.5 * np.sum(x * x) * ev
        g[1:] = -x * ev
    return float(lp), g


def test_funnel_divergences_grow_with_step():
    u0 = np.r_[-2.0, np.full(4, 0.1)]
    small = SamplerConfig(n_chains=1, n_warmup=0, n_keep=300, leapfrog_steps=20, seed=3, step_size=0.01)
    out = sample(small, funnel, [u0])
    assert out.divergent_fraction() == 0.0
    large = SamplerConfig(n_chains=1, n_warmup=0, n_keep=300, leapfrog_steps=20, seed=3, step_size=1.5)
    with pytest.warns(RuntimeWarning):
        out = sample(large, funnel, [u0])
    assert out.divergent_fraction() > 0.1
    assert out.warnings


def test_all_divergent_warmup_fails_with_dump():
    def cliff(u):
        if np.any(u != 0.0):
            return -np.inf, np.zeros_like(u)
        return 0.0, np.zeros_like(u)

    cfg = SamplerConfig(n_chains=1, n_warmup=30, n_keep=5, leapfrog_steps=3, seed=0)
    with pytest.raises(SamplerFailure) as info:
        run_chain(cliff, np.zeros(2), cfg, 0)
    assert "position" in info.value.dump


def test_bad_initial_points():
    cfg = SamplerConfig(n_chains=2, n_warmup=10, n_keep=10)
    with pytest.raises(InputError):
        sample(cfg, gaussian(2), [np.zeros(2)])
    with pytest.raises(SamplerFailure):
        sample(cfg, lambda u: (-np.inf, u), [np.zeros(2), np.zeros(2)])


# ---------------------------------------------------------------- diagnostics


def test_rhat_iid_and_separated():
    rng = np.random.default_rng(0)
    iid = rng.standard_normal((4, 5000))
    r = split_rhat(iid)
    assert 1.0 - 1e-3 <= r <= 1.01
    sep = np.vstack([rng.standard_normal(1000), 10 + rng.standard_normal(1000)])
    assert split_rhat(sep) > 1.1
    assert split_rhat(sep, folded=True) >= split_rhat(sep)


def test_folded_rhat_detects_scale_difference():
    rng = np.random.default_rng(1)
    x = np.vstack([rng.standard_normal(2000), 5 * rng.standard_normal(2000)])
    assert split_rhat(x) < 1.05
    assert split_rhat(x, folded=True) > 1.1


def test_constant_chains_undefined():
    c = np.ones((4, 100))
    assert split_rhat(c) is None
    assert effective_sample_size(c) is None
    assert mcse_mean(c) is None


def test_length_mismatch():
    with pytest.raises(InputError):
        split_rhat([[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0]])
    with pytest.raises(InputError):
        split_rhat(np.ones((1, 10)))


def test_ess_iid():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 5000))
    ess = effective_sample_size(x)
    assert 0.8 * 20000 <= ess <= 1.2 * 20000


def test_ess_ar1():
    rng = np.random.default_rng(3)
    x = ar1_chains(rng, 4, 5000, 0.9)
    ess = effective_sample_size(x)
    assert abs(ess - 20000 / 19) <= 0.3 * 20000 / 19


def test_mcse_matches_ar1_theory():
    rng = np.random.default_rng(4)
    x = ar1_chains(rng, 4, 20000, 0.5)
    # var of mean for AR(1): (1/N) (1+rho)/(1-rho)
    expected = math.sqrt(3.0 / x.size)
    assert mcse_mean(x) == pytest.approx(expected, rel=0.15)


def test_summary_rows():
    rng = np.random.default_rng(5)
    d = rng.standard_normal((2, 400, 2))
    rows = summarize(d, ["a", "b"])
    assert [r["parameter"] for r in rows] == ["a", "b"]
    assert rows[0]["q025"] < rows[0]["mean"] < rows[0]["q975"]
    assert rows[1]["rhat"] < 1.05 and rows[1]["ess"] > 300


# ---------------------------------------------------------------- snow model


@pytest.mark.slow
def test_snow_model_converges_at_defaults(small_data):
    from misp.inference.fitting import fit
    from misp.model import ModelConfig

    data, _ = small_data
    out = fit(ModelConfig(), data, SamplerConfig(seed=17))
    rows = summarize(out.values, out.names)
    assert max(r["rhat"] for r in rows) < 1.01
    assert min(r["ess"] for r in rows) > 400
    assert not out.warnings
