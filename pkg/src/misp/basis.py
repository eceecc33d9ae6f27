"""Integrated-kernel bases for monotone depth curves.

Two families produce the design vector ``K(x)``:

* I-splines, the integrals of M-spline densities on an augmented knot
  sequence (Ramsay 1988). Order ``l`` M-splines are piecewise polynomials of
  degree ``l - 1``; the I-splines are of degree ``l``.
* CDF differences ``F((x - c_j)/h) - F((x_min - c_j)/h)`` for a location-scale
  kernel family with closed-form CDF (Gaussian, Laplace, asymmetric Laplace).

Basis indices are zero-based throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, DomainError

__all__ = [
    "KnotConfig",
    "KernelFamily",
    "KernelSpec",
    "augment_knots",
    "mspline_eval",
    "ispline_eval",
    "mspline_matrix",
    "ispline_matrix",
    "cdf_kernel_eval",
    "design_row",
    "design_matrix",
    "write_basis_csv",
    "FINAL_INTERIOR_KNOTS",
]

FINAL_INTERIOR_KNOTS = (5.0, 15.0, 30.0, 45.0, 75.0)

_DOMAIN_TOL = 1e-9


@dataclass(frozen=True)
class KnotConfig:
    """Interior knots, spline order and depth domain of an I-spline basis."""

    interior_knots: tuple = FINAL_INTERIOR_KNOTS
    order: int = 1
    x_min: float = 0.0
    x_max: float = 140.0

    def __post_init__(self):
        object.__setattr__(
            self, "interior_knots", tuple(float(k) for k in self.interior_knots)
        )
        if int(self.order) != self.order or self.order < 1:
            raise ConfigurationError(f"spline order must be an integer >= 1, got {self.order}")
        object.__setattr__(self, "order", int(self.order))
        if not self.x_min < self.x_max:
            raise ConfigurationError(f"x_min={self.x_min} must be < x_max={self.x_max}")
        kk = np.asarray(self.interior_knots, dtype=float)
        if kk.size:
            if np.any(np.diff(kk) <= 0):
                raise ConfigurationError(f"interior knots must be strictly increasing: {self.interior_knots}")
            if kk[0] <= self.x_min or kk[-1] >= self.x_max:
                raise ConfigurationError(
                    f"interior knots must lie strictly inside ({self.x_min}, {self.x_max})"
                )

    @property
    def n_basis(self) -> int:
        return len(self.interior_knots) + self.order

    @property
    def knots(self) -> np.ndarray:
        return augment_knots(self)

    def describe(self) -> str:
        return f"I-spline(order={self.order}, knots={list(self.interior_knots)})"


class KernelFamily(str, Enum):
    MSPLINE = "mspline"
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    ASYMMETRIC_LAPLACE_LEFT = "asymmetric_laplace_left"
    ASYMMETRIC_LAPLACE_RIGHT = "asymmetric_laplace_right"


@dataclass(frozen=True)
class KernelSpec:
    """A CDF-difference kernel basis.

    ``centers`` are the kernel locations ``c_j``; by default ``x_min`` followed
    by the interior knots of the final model. ``bandwidth`` defaults to half
    the mean gap between consecutive centers. ``asymmetry`` is the ratio
    ``kappa`` of the asymmetric Laplace; values above one put the heavier tail
    on the left for the left-skewed family, and the right-skewed family uses
    ``1/kappa``.
    """

    family: KernelFamily = KernelFamily.GAUSSIAN
    centers: tuple = (0.0,) + FINAL_INTERIOR_KNOTS
    bandwidth: float | None = None
    asymmetry: float | None = None
    x_min: float = 0.0
    x_max: float = 140.0

    def __post_init__(self):
        fam = KernelFamily(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        if fam is KernelFamily.MSPLINE:
            raise ConfigurationError("use KnotConfig for the M-spline family")
        if not self.centers:
            raise ConfigurationError("kernel basis needs at least one center")
        if not self.x_min < self.x_max:
            raise ConfigurationError(f"x_min={self.x_min} must be < x_max={self.x_max}")
        if self.bandwidth is None:
            c = np.asarray(self.centers)
            gap = np.mean(np.diff(c)) if c.size > 1 else (self.x_max - self.x_min)
            object.__setattr__(self, "bandwidth", 0.5 * float(gap))
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ConfigurationError(f"kernel bandwidth must be positive, got {self.bandwidth}")
        if fam in (KernelFamily.ASYMMETRIC_LAPLACE_LEFT, KernelFamily.ASYMMETRIC_LAPLACE_RIGHT):
            if self.asymmetry is None:
                object.__setattr__(self, "asymmetry", 2.0)
            if not self.asymmetry > 0:
                raise ConfigurationError(f"asymmetry must be positive, got {self.asymmetry}")
        elif self.asymmetry is not None:
            raise ConfigurationError(f"asymmetry is only meaningful for asymmetric Laplace, not {fam.value}")

    @property
    def n_basis(self) -> int:
        return len(self.centers)

    def describe(self) -> str:
        return f"{self.family.value}(h={self.bandwidth:g}, centers={list(self.centers)})"


def augment_knots(cfg: KnotConfig) -> np.ndarray:
    """Return the augmented knot sequence of length ``L + 2l``.

    ``l`` copies of ``x_min``, the ``L`` interior knots, then ``l`` copies of
    ``x_max``.
    """
    l = cfg.order
    return np.concatenate(
        [np.full(l, cfg.x_min), np.asarray(cfg.interior_knots, dtype=float), np.full(l, cfg.x_max)]
    )


def _check_domain(x, lo, hi):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("depths must be finite")
    if x.size and (x.min() < lo - _DOMAIN_TOL or x.max() > hi + _DOMAIN_TOL):
        raise DomainError(f"depth outside basis domain [{lo}, {hi}]: range [{x.min()}, {x.max()}]")
    return np.clip(x, lo, hi)


def _mspline_all(xi: np.ndarray, order: int, x: np.ndarray) -> np.ndarray:
    """M-splines of ``order`` for every x (rows) and basis index (columns).

    Straight recursion on the augmented sequence ``xi``. Order-one pieces are
    half-open ``[xi_j, xi_{j+1})`` except the last nondegenerate one, which is
    closed so that ``x_max`` itself belongs to the support.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n_int = xi.size - 1
    width = np.diff(xi)
    m = np.zeros((x.size, n_int))
    last = np.flatnonzero(width > 0)[-1]
    for i in np.flatnonzero(width > 0):
        upper = x <= xi[i + 1] if i == last else x < xi[i + 1]
        m[:, i] = np.where((x >= xi[i]) & upper, 1.0 / width[i], 0.0)
    for k in range(2, order + 1):
        n_k = xi.size - k
        nxt = np.zeros((x.size, n_k))
        for j in range(n_k):
            span = xi[j + k] - xi[j]
            if span <= 0:
                continue
            nxt[:, j] = k * ((x - xi[j]) * m[:, j] + (xi[j + k] - x) * m[:, j + 1]) / ((k - 1) * span)
        m = nxt
    return m


@lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=64)
def _knot_integrals(xi_key: tuple, l: int) -> np.ndarray:
    """Integral of every ``M_j`` from the first knot up to each distinct knot."""
    xi = np.array(xi_key)
    nodes, weights = _gauss_legendre(l)
    breaks = np.unique(xi)
    a0, a1 = breaks[:-1], breaks[1:]
    t = 0.5 * (a1 - a0)[:, None] * nodes[None, :] + 0.5 * (a1 + a0)[:, None]
    m = _mspline_all(xi, l, t.ravel()).reshape(a0.size, nodes.size, -1)
    steps = 0.5 * (a1 - a0)[:, None] * np.einsum("q,bqj->bj", weights, m)
    cum = np.vstack([np.zeros((1, steps.shape[1])), np.cumsum(steps, axis=0)])
    cum.setflags(write=False)
    return cum


def _ispline_all(cfg: KnotConfig, x: np.ndarray) -> np.ndarray:
    xi = cfg.knots
    l = cfg.order
    J = cfg.n_basis
    x = np.atleast_1d(np.asarray(x, dtype=float))
    # Gauss-Legendre with l nodes is exact for the degree l-1 pieces.
    nodes, weights = _gauss_legendre(max(l, 1))
    breaks = np.unique(xi)
    cum = _knot_integrals(tuple(xi.tolist()), max(l, 1))
    seg = np.clip(np.searchsorted(breaks, x, side="right") - 1, 0, breaks.size - 1)
    left = breaks[seg]
    half = 0.5 * (x - left)
    t = half[:, None] * nodes[None, :] + (0.5 * (x + left))[:, None]
    mvals = _mspline_all(xi, l, t.ravel()).reshape(x.size, nodes.size, J)
    out = cum[seg] + half[:, None] * np.einsum("q,nqj->nj", weights, mvals)
    lo = xi[:J]
    hi = xi[l : l + J]
    out = np.where(x[:, None] <= lo[None, :], 0.0, out)
    out = np.where(x[:, None] >= hi[None, :], 1.0, out)
    return np.clip(out, 0.0, 1.0)


def _check_index(cfg, j):
    if not 0 <= j < cfg.n_basis:
        raise IndexError(f"basis index {j} out of range [0, {cfg.n_basis})")


def mspline_matrix(cfg: KnotConfig, x) -> np.ndarray:
    x = _check_domain(x, cfg.x_min, cfg.x_max)
    return _mspline_all(cfg.knots, cfg.order, np.atleast_1d(x))


def ispline_matrix(cfg: KnotConfig, x) -> np.ndarray:
    x = _check_domain(x, cfg.x_min, cfg.x_max)
    return _ispline_all(cfg, np.atleast_1d(x))


def mspline_eval(cfg: KnotConfig, j: int, x):
    """Value of the ``j``-th M-spline at depth(s) ``x`` (units 1/m)."""
    _check_index(cfg, j)
    scalar = np.ndim(x) == 0
    vals = mspline_matrix(cfg, x)[:, j]
    return float(vals[0]) if scalar else vals


def ispline_eval(cfg: KnotConfig, j: int, x):
    """Value of the ``j``-th I-spline at depth(s) ``x``; lies in [0, 1]."""
    _check_index(cfg, j)
    scalar = np.ndim(x) == 0
    vals = ispline_matrix(cfg, x)[:, j]
    return float(vals[0]) if scalar else vals


def _standard_cdf(spec: KernelSpec, t):
    t = np.asarray(t, dtype=float)
    fam = spec.family
    if fam is KernelFamily.GAUSSIAN:
        return ndtr(t)
    if fam is KernelFamily.LAPLACE:
        return np.where(t < 0, 0.5 * np.exp(np.minimum(t, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(t, 0.0)))
    kappa = spec.asymmetry if fam is KernelFamily.ASYMMETRIC_LAPLACE_LEFT else 1.0 / spec.asymmetry
    k2 = kappa * kappa
    neg = k2 / (1.0 + k2) * np.exp(np.minimum(t, 0.0) / kappa)
    pos = 1.0 - np.exp(-kappa * np.maximum(t, 0.0)) / (1.0 + k2)
    return np.where(t < 0, neg, pos)


def _standard_pdf(spec: KernelSpec, t):
    """Kernel density; used by tests and diagnostics."""
    t = np.asarray(t, dtype=float)
    fam = spec.family
    if fam is KernelFamily.GAUSSIAN:
        return np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    if fam is KernelFamily.LAPLACE:
        return 0.5 * np.exp(-np.abs(t))
    kappa = spec.asymmetry if fam is KernelFamily.ASYMMETRIC_LAPLACE_LEFT else 1.0 / spec.asymmetry
    c = 1.0 / (kappa + 1.0 / kappa)
    return np.where(t < 0, c * np.exp(t / kappa), c * np.exp(-kappa * t))


def cdf_kernel_eval(spec: KernelSpec, center: float, x):
    """Integrated kernel ``F((x - c)/h) - F((x_min - c)/h)``."""
    if spec.bandwidth is None or not spec.bandwidth > 0:
        raise ConfigurationError("nonpositive bandwidth")
    h = spec.bandwidth
    val = _standard_cdf(spec, (np.asarray(x, dtype=float) - center) / h) - _standard_cdf(
        spec, (spec.x_min - center) / h
    )
    return float(val) if np.ndim(val) == 0 else val


def design_matrix(basis: KnotConfig | KernelSpec, x) -> np.ndarray:
    """Rows ``K(x)`` for every depth in ``x``, shape ``(len(x), J)``."""
    x = _check_domain(np.atleast_1d(x), basis.x_min, basis.x_max)
    if isinstance(basis, KnotConfig):
        return _ispline_all(basis, x)
    c = np.asarray(basis.centers)
    h = basis.bandwidth
    return _standard_cdf(basis, (x[:, None] - c[None, :]) / h) - _standard_cdf(
        basis, (basis.x_min - c[None, :]) / h
    )


def design_row(basis: KnotConfig | KernelSpec, x: float) -> np.ndarray:
    if np.ndim(x) != 0:
        raise DomainError("design_row takes a single depth; use design_matrix for arrays")
    return design_matrix(basis, np.array([x]))[0]


def write_basis_csv(basis: KnotConfig | KernelSpec, depths, path) -> None:
    """Export evaluated basis rows: a depth column plus one column per function."""
    depths = np.asarray(depths, dtype=float)
    mat = design_matrix(basis, depths)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["depth_m"] + [f"K{j}" for j in range(mat.shape[1])])
        for d, row in zip(depths, mat):
            w.writerow([f"{d:.10g}"] + [f"{v:.10g}" for v in row])
