import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from misp.errors import ConfigurationError, InputError, NumericalError
from misp.geodesy import (
    EARTH_RADIUS_KM,
    CovarianceSpec,
    Distance,
    SiteLocation,
    Smoothness,
    cholesky_with_jitter,
    chordal_distance,
    covariance_matrix,
    distance_matrix,
    great_circle,
    matern_corr,
)

lat = st.floats(-90, 90)
lon = st.floats(-179.999, 180)
site = st.builds(SiteLocation, lat, lon)


def test_site_validation():
    with pytest.raises(InputError):
        SiteLocation(91.0, 0.0)
    with pytest.raises(InputError):
        SiteLocation(0.0, 181.0)
    assert SiteLocation(0.0, -180.0).longitude == 180.0


def test_great_circle_examples():
    a = SiteLocation(0, 0)
    assert great_circle(a, a) == 0.0
    assert great_circle(a, SiteLocation(0, 180)) == pytest.approx(math.pi * 6371.0, rel=1e-12)
    assert great_circle(a, SiteLocation(0, 180)) == pytest.approx(20015.09, abs=0.01)
    assert great_circle(a, SiteLocation(0, 90)) == pytest.approx(10007.54, abs=0.01)


def test_chordal_examples():
    a = SiteLocation(0, 0)
    assert chordal_distance(a, a) == 0.0
    assert chordal_distance(a, SiteLocation(0, 180)) == pytest.approx(12742.0, rel=1e-12)
    assert chordal_distance(a, SiteLocation(0, 90)) == pytest.approx(6371.0 * math.sqrt(2), rel=1e-12)
    assert chordal_distance(a, SiteLocation(0, 90)) == pytest.approx(9009.95, abs=0.01)


@settings(max_examples=100, deadline=None)
@given(site, site, site)
def test_metric_properties(a, b, c):
    for f in (great_circle, chordal_distance):
        assert f(a, b) == pytest.approx(f(b, a), abs=1e-9)
        assert f(a, c) <= f(a, b) + f(b, c) + 1e-6
    assert chordal_distance(a, b) <= great_circle(a, b) + 1e-9


def test_distance_matrix_symmetric_zero_diagonal():
    rng = np.random.default_rng(0)
    sites = [SiteLocation(float(a), float(b)) for a, b in zip(rng.uniform(-89, -60, 8), rng.uniform(-180, 180, 8))]
    for metric in Distance:
        d = distance_matrix(sites, metric=metric)
        np.testing.assert_array_equal(d, d.T)
        assert np.all(np.diag(d) == 0)
        f = great_circle if metric is Distance.GREAT_CIRCLE else chordal_distance
        assert d[2, 5] == pytest.approx(f(sites[2], sites[5]), rel=1e-12)


def test_matern_values():
    exp = CovarianceSpec()
    assert matern_corr(exp, 0.001, 1000.0) == pytest.approx(math.exp(-1), rel=1e-14)
    assert matern_corr(exp, 0.001, 1000.0) == pytest.approx(0.367879, abs=1e-6)
    m32 = CovarianceSpec(Distance.CHORDAL, Smoothness.THREE_HALVES)
    assert matern_corr(m32, 1.0, 1.0) == pytest.approx((1 + math.sqrt(3)) * math.exp(-math.sqrt(3)), rel=1e-14)
    assert matern_corr(m32, 1.0, 1.0) == pytest.approx(0.4833577246, abs=1e-10)
    m52 = CovarianceSpec(Distance.CHORDAL, Smoothness.FIVE_HALVES)
    t = math.sqrt(5) * 0.5
    assert matern_corr(m52, 0.5, 1.0) == pytest.approx((1 + t + t * t / 3) * math.exp(-t), rel=1e-14)
    for spec in (exp, m32, m52):
        assert matern_corr(spec, 0.01, 0.0) == 1.0


@pytest.mark.parametrize("nu", list(Smoothness))
def test_matern_decreasing(nu):
    spec = CovarianceSpec(Distance.CHORDAL, nu)
    d = np.linspace(0, 5000, 1001)
    r = matern_corr(spec, 1e-3, d)
    assert np.all(np.diff(r) < 0)
    assert np.all((r > 0) & (r <= 1))


def test_great_circle_rejects_smooth_matern():
    with pytest.raises(ConfigurationError):
        CovarianceSpec(Distance.GREAT_CIRCLE, Smoothness.THREE_HALVES)
    with pytest.raises(ConfigurationError):
        CovarianceSpec(Distance.GREAT_CIRCLE, Smoothness.FIVE_HALVES)


def test_matern_input_errors():
    with pytest.raises(InputError):
        matern_corr(CovarianceSpec(), 0.0, 1.0)
    with pytest.raises(InputError):
        matern_corr(CovarianceSpec(), 0.1, -1.0)


def test_covariance_small_cases():
    spec = CovarianceSpec()
    np.testing.assert_array_equal(covariance_matrix([SiteLocation(-80, 10)], spec, 1e-3, 2.5), [[2.5]])
    same = [SiteLocation(-80, 10), SiteLocation(-80, 10)]
    np.testing.assert_array_equal(covariance_matrix(same, spec, 1e-3, 1.0), np.ones((2, 2)))


def test_covariance_meridian():
    sites = [SiteLocation(0, 0), SiteLocation(1, 0), SiteLocation(2, 0)]
    cov = covariance_matrix(sites, CovarianceSpec(), 0.001, 1.0)
    for i in range(3):
        for k in range(3):
            expected = math.exp(-0.001 * great_circle(sites[i], sites[k]))
            assert cov[i, k] == pytest.approx(expected, rel=1e-13)
    assert cov[0, 1] == pytest.approx(math.exp(-0.001 * EARTH_RADIUS_KM * math.pi / 180), rel=1e-13)


@pytest.mark.parametrize("nu", list(Smoothness))
def test_covariance_psd_random_sites(nu):
    rng = np.random.default_rng(7)
    spec = CovarianceSpec(Distance.CHORDAL if nu is not Smoothness.HALF else Distance.GREAT_CIRCLE, nu)
    for n in (5, 20, 50):
        sites = [SiteLocation(float(a), float(b)) for a, b in zip(rng.uniform(-85, -65, n), rng.uniform(-180, 180, n))]
        cov = covariance_matrix(sites, spec, 10 ** rng.uniform(-4, -2), 1.7)
        assert np.linalg.eigvalsh(cov).min() >= -1e-8 * 1.7


def test_cholesky_jitter_escalates_and_fails():
    ones = np.ones((2, 2))
    L, used = cholesky_with_jitter(ones)
    assert used > 0
    np.testing.assert_allclose(L @ L.T, ones + used * np.eye(2), atol=1e-14)
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    d = np.array([[0.0, 0.158], [0.158, 0.0]])
    with pytest.raises(NumericalError, match=r"closest site pair \(0, 1\)"):
        cholesky_with_jitter(bad, dist=d)
