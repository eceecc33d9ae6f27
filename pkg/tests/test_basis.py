import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from misp.basis import (
    KernelFamily,
    KernelSpec,
    KnotConfig,
    _standard_pdf,
    augment_knots,
    cdf_kernel_eval,
    design_matrix,
    design_row,
    ispline_eval,
    ispline_matrix,
    mspline_eval,
    write_basis_csv,
)
from misp.errors import ConfigurationError, DomainError

FINAL = KnotConfig()


def test_augment_final_model():
    np.testing.assert_array_equal(augment_knots(FINAL), [0, 5, 15, 30, 45, 75, 140])


def test_augment_no_interior():
    np.testing.assert_array_equal(augment_knots(KnotConfig((), 1, 0.0, 1.0)), [0, 1])


def test_augment_order3_has_l_plus_l_boundary_copies():
    xi = augment_knots(KnotConfig((2.0,), 3, 0.0, 4.0))
    np.testing.assert_array_equal(xi, [0, 0, 0, 2, 4, 4, 4])
    assert xi.size == 1 + 2 * 3


@pytest.mark.parametrize("knots", [(5.0, 3.0), (0.0, 5.0), (5.0, 140.0), (5.0, 5.0)])
def test_bad_knots_rejected(knots):
    with pytest.raises(ConfigurationError):
        KnotConfig(knots)


def test_basis_count():
    assert FINAL.n_basis == 6
    assert KnotConfig((2.0,), 3, 0.0, 4.0).n_basis == 4


def test_order1_mspline_is_uniform_density():
    x = np.linspace(0, 4.99, 17)
    np.testing.assert_allclose(mspline_eval(FINAL, 0, x), 0.2)
    assert mspline_eval(FINAL, 0, 7.0) == 0.0


@pytest.mark.parametrize("order", [1, 2, 3])
def test_mspline_zero_outside_support(order):
    cfg = KnotConfig(order=order)
    xi = cfg.knots
    x = np.linspace(0, 140, 2801)
    for j in range(cfg.n_basis):
        m = mspline_eval(cfg, j, x)
        outside = (x < xi[j]) | (x > xi[j + order])
        assert np.all(m[outside] == 0.0)
        assert np.all(m >= 0)


def test_order2_mspline_matches_ispline_derivative():
    cfg = KnotConfig((2.0,), 2, 0.0, 4.0)
    np.testing.assert_array_equal(cfg.knots, [0, 0, 2, 4, 4])
    h = 1e-6
    for x in (0.7, 1.3, 2.6, 3.5):
        fd = (ispline_eval(cfg, 1, x + h) - ispline_eval(cfg, 1, x - h)) / (2 * h)
        assert mspline_eval(cfg, 1, x) == pytest.approx(fd, rel=1e-6)
    # value at the interior knot from the recursion: 2 * (2 - 0) * (1/2) / (1 * 4)
    assert mspline_eval(cfg, 1, 2.0) == pytest.approx(0.5, abs=1e-15)


def test_index_out_of_range():
    with pytest.raises(IndexError):
        mspline_eval(FINAL, 6, 1.0)
    with pytest.raises(IndexError):
        ispline_eval(FINAL, -1, 1.0)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_mspline_unit_mass(order):
    cfg = KnotConfig(order=order)
    xi = cfg.knots
    for j in range(cfg.n_basis):
        pts = [p for p in np.unique(xi) if xi[j] < p < xi[j + order]]
        val, _ = quad(lambda t: mspline_eval(cfg, j, t), xi[j], xi[j + order], points=pts or None,
                      epsabs=1e-12, epsrel=1e-12, limit=200)
        assert val == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_ispline_boundaries_and_range(order):
    cfg = KnotConfig(order=order)
    np.testing.assert_array_equal(ispline_matrix(cfg, [0.0])[0], 0.0)
    np.testing.assert_array_equal(ispline_matrix(cfg, [140.0])[0], 1.0)
    x = np.linspace(0, 140, 1401)
    I = ispline_matrix(cfg, x)
    assert np.all((I >= 0) & (I <= 1))
    assert np.all(np.diff(I, axis=0) >= -1e-15)


def test_ispline_hand_value():
    assert ispline_eval(FINAL, 1, 10.0) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_ispline_derivative_is_mspline(order):
    cfg = KnotConfig(order=order)
    rng = np.random.default_rng(order)
    xi = np.unique(cfg.knots)
    x = rng.uniform(0.5, 139.5, 200)
    x = x[np.min(np.abs(x[:, None] - xi[None, :]), axis=1) > 1e-3]
    h = 1e-5
    fd = (ispline_matrix(cfg, x + h) - ispline_matrix(cfg, x - h)) / (2 * h)
    m = np.column_stack([mspline_eval(cfg, j, x) for j in range(cfg.n_basis)])
    # rounding in the difference quotient is ~ eps / h
    floor = 100 * np.finfo(float).eps / h
    np.testing.assert_allclose(fd, m, rtol=1e-6, atol=floor)


@pytest.mark.parametrize("order", [2, 3])
def test_ispline_continuity(order):
    cfg = KnotConfig(order=order)
    x = np.linspace(0, 140, 140001)
    I = ispline_matrix(cfg, x)
    # Lipschitz bound from max |M_j|
    m = np.column_stack([mspline_eval(cfg, j, x) for j in range(cfg.n_basis)])
    assert np.max(np.abs(np.diff(I, axis=0))) <= m.max() * (x[1] - x[0]) * 1.01


@pytest.mark.parametrize("order", [1, 2, 3])
def test_design_row_sparsity(order):
    cfg = KnotConfig(order=order)
    for x in np.linspace(0.3, 139.7, 97):
        row = design_row(cfg, x)
        inner = np.flatnonzero((row > 0) & (row < 1))
        assert inner.size <= order + 1
        if inner.size:
            assert np.all(np.diff(inner) == 1)


def test_design_row_final_model():
    np.testing.assert_array_equal(design_row(FINAL, 0.0), np.zeros(6))
    np.testing.assert_array_equal(design_row(FINAL, 140.0), np.ones(6))
    np.testing.assert_allclose(design_row(FINAL, 10.0), [1, 0.5, 0, 0, 0, 0], atol=1e-15)


def test_design_row_domain():
    with pytest.raises(DomainError):
        design_row(FINAL, 140.5)
    with pytest.raises(DomainError):
        design_matrix(FINAL, [-1.0, 3.0])


@settings(max_examples=60, deadline=None)
@given(
    coef=st.lists(st.floats(0, 50, allow_nan=False), min_size=6, max_size=6),
    a=st.floats(0, 140),
    b=st.floats(0, 140),
)
def test_nonnegative_combination_is_monotone(coef, a, b):
    lo, hi = min(a, b), max(a, b)
    K = design_matrix(FINAL, [lo, hi])
    v = K @ np.asarray(coef)
    assert v[1] >= v[0] - 1e-12


def test_gaussian_kernel_limit():
    spec = KernelSpec(KernelFamily.GAUSSIAN, centers=(0.0,), bandwidth=1.0, x_max=1000.0)
    assert cdf_kernel_eval(spec, 0.0, 1000.0) == pytest.approx(0.5, abs=1e-15)


def test_laplace_kernel_hand_value():
    spec = KernelSpec(KernelFamily.LAPLACE, centers=(10.0,), bandwidth=2.0)
    v = cdf_kernel_eval(spec, 10.0, 10.0)
    assert v == pytest.approx(0.5 - 0.5 * math.exp(-5.0), abs=1e-14)
    assert v == pytest.approx(0.49663, abs=5e-6)


FAMILIES = [
    KernelSpec(KernelFamily.GAUSSIAN),
    KernelSpec(KernelFamily.LAPLACE),
    KernelSpec(KernelFamily.ASYMMETRIC_LAPLACE_LEFT, asymmetry=1.7),
    KernelSpec(KernelFamily.ASYMMETRIC_LAPLACE_RIGHT, asymmetry=1.7),
]


@pytest.mark.parametrize("spec", FAMILIES, ids=lambda s: s.family.value)
def test_kernel_equals_integrated_density(spec):
    h = spec.bandwidth
    for c in spec.centers:
        assert cdf_kernel_eval(spec, c, 0.0) == 0.0
        for x in (3.0, 17.5, 60.0, 140.0):
            pts = [c] if 0 < c < x else None
            val, _ = quad(lambda t: _standard_pdf(spec, (t - c) / h) / h, 0.0, x, points=pts,
                          epsabs=1e-13, epsrel=1e-13, limit=200)
            assert cdf_kernel_eval(spec, c, x) == pytest.approx(val, abs=1e-8)


@pytest.mark.parametrize("spec", FAMILIES, ids=lambda s: s.family.value)
def test_kernel_design_monotone(spec):
    K = design_matrix(spec, np.linspace(0, 140, 501))
    assert np.all(K[0] == 0)
    assert np.all(np.diff(K, axis=0) >= 0)


def test_asymmetric_laplace_mirror():
    left = KernelSpec(KernelFamily.ASYMMETRIC_LAPLACE_LEFT, asymmetry=2.0)
    right = KernelSpec(KernelFamily.ASYMMETRIC_LAPLACE_RIGHT, asymmetry=2.0)
    t = np.linspace(-5, 5, 21)
    np.testing.assert_allclose(_standard_pdf(left, t), _standard_pdf(right, -t), rtol=1e-14)


def test_kernel_config_errors():
    with pytest.raises(ConfigurationError):
        KernelSpec(KernelFamily.GAUSSIAN, bandwidth=0.0)
    with pytest.raises(ConfigurationError):
        KernelSpec(KernelFamily.GAUSSIAN, bandwidth=-1.0)
    with pytest.raises(ConfigurationError):
        KernelSpec(KernelFamily.MSPLINE)
    with pytest.raises(ConfigurationError):
        KernelSpec(KernelFamily.LAPLACE, asymmetry=2.0)


def test_default_bandwidth_is_half_mean_gap():
    spec = KernelSpec(KernelFamily.GAUSSIAN)
    assert spec.bandwidth == pytest.approx(0.5 * 75.0 / 5)


def test_basis_csv(tmp_path):
    p = tmp_path / "basis.csv"
    write_basis_csv(FINAL, [0, 10, 140], p)
    lines = p.read_text().splitlines()
    assert lines[0] == "depth_m,K0,K1,K2,K3,K4,K5"
    assert lines[2] == "10,1,0.5,0,0,0,0"
