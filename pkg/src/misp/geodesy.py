"""Distances on a spherical Earth and Matérn correlation functions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError, InputError, NumericalError

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class SiteLocation:
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise InputError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 < self.longitude <= 180.0:
            # accept -180 as an alias of 180
            if self.longitude == -180.0:
                object.__setattr__(self, "longitude", 180.0)
            else:
                raise InputError(f"longitude {self.longitude} outside (-180, 180]")


class Distance(str, Enum):
    GREAT_CIRCLE = "great_circle"
    CHORDAL = "chordal"


class Smoothness(str, Enum):
    HALF = "1/2"
    THREE_HALVES = "3/2"
    FIVE_HALVES = "5/2"

    @property
    def code(self) -> int:
        return {"1/2": 0, "3/2": 1, "5/2": 2}[self.value]


@dataclass(frozen=True)
class CovarianceSpec:
    distance: Distance = Distance.GREAT_CIRCLE
    smoothness: Smoothness = Smoothness.HALF

    def __post_init__(self):
        object.__setattr__(self, "distance", Distance(self.distance))
        object.__setattr__(self, "smoothness", Smoothness(self.smoothness))
        if self.distance is Distance.GREAT_CIRCLE and self.smoothness is not Smoothness.HALF:
            raise ConfigurationError(
                "Matérn smoothness above 1/2 is not positive definite with great-circle distance; "
                "use chordal distance"
            )


def _as_latlon(sites):
    if isinstance(sites, SiteLocation):
        sites = [sites]
    arr = np.array([[s.latitude, s.longitude] for s in sites], dtype=float).reshape(-1, 2)
    return np.radians(arr[:, 0]), np.radians(arr[:, 1])


def _central_angle(lat1, lon1, lat2, lon2):
    # haversine form, stable for small separations
    a = np.sin(0.5 * (lat2 - lat1)) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(0.5 * (lon2 - lon1)) ** 2
    return 2.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def great_circle(a: SiteLocation, b: SiteLocation, radius: float = EARTH_RADIUS_KM) -> float:
    """Haversine distance in km."""
    (la1,), (lo1,) = _as_latlon(a)
    (la2,), (lo2,) = _as_latlon(b)
    return float(radius * _central_angle(la1, lo1, la2, lo2))


def chordal_distance(a: SiteLocation, b: SiteLocation, radius: float = EARTH_RADIUS_KM) -> float:
    """Straight-line distance through the sphere, ``2R sin(theta/2)``."""
    (la1,), (lo1,) = _as_latlon(a)
    (la2,), (lo2,) = _as_latlon(b)
    return float(2.0 * radius * math.sin(0.5 * _central_angle(la1, lo1, la2, lo2)))


def distance_matrix(sites, other=None, metric: Distance = Distance.GREAT_CIRCLE) -> np.ndarray:
    """Pairwise distances (km) between two site lists."""
    lat1, lon1 = _as_latlon(sites)
    lat2, lon2 = _as_latlon(sites if other is None else other)
    theta = _central_angle(lat1[:, None], lon1[:, None], lat2[None, :], lon2[None, :])
    if Distance(metric) is Distance.GREAT_CIRCLE:
        d = EARTH_RADIUS_KM * theta
    else:
        d = 2.0 * EARTH_RADIUS_KM * np.sin(0.5 * theta)
    if other is None:
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, 0.0)
    return d


def matern_corr(spec: CovarianceSpec, phi: float, d):
    """Matérn correlation with decay ``phi`` (1/km) at distance ``d`` (km)."""
    if not phi > 0:
        raise InputError(f"decay phi must be positive, got {phi}")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise InputError("distances must be nonnegative")
    nu = Smoothness(spec.smoothness)
    if nu is Smoothness.HALF:
        r = np.exp(-phi * d)
    elif nu is Smoothness.THREE_HALVES:
        t = math.sqrt(3.0) * phi * d
        r = (1.0 + t) * np.exp(-t)
    else:
        t = math.sqrt(5.0) * phi * d
        r = (1.0 + t + t * t / 3.0) * np.exp(-t)
    return float(r) if r.ndim == 0 else r


def cholesky_with_jitter(cov: np.ndarray, scale: float = 1.0, jitter: float = 1e-10,
                         max_jitter: float = 1e-6, dist: np.ndarray | None = None):
    """Cholesky factor of ``cov`` after adding escalating diagonal jitter.

    Jitter starts at ``jitter * scale`` and grows tenfold up to
    ``max_jitter * scale``. Returns ``(L, jitter_used)``.
    """
    n = cov.shape[0]
    eye = np.eye(n)
    j = jitter
    while True:
        try:
            return np.linalg.cholesky(cov + j * scale * eye), j * scale
        except np.linalg.LinAlgError:
            if j >= max_jitter * (1 - 1e-12):
                break
            j = min(j * 10.0, max_jitter)
    msg = "covariance matrix not positive definite after jitter"
    if dist is not None and n > 1:
        dd = dist + np.diag(np.full(n, np.inf))
        i, k = np.unravel_index(np.argmin(dd), dd.shape)
        msg += f"; closest site pair ({i}, {k}) at {dd[i, k]:.6g} km"
    raise NumericalError(msg)


def covariance_matrix(sites, spec: CovarianceSpec, phi: float, sigma2: float) -> np.ndarray:
    """``sigma2 * corr(d(s, s'))`` over the sites, verified factorizable.

    The returned matrix has no jitter added; a Cholesky factorization with the
    escalating jitter schedule must succeed or :class:`NumericalError` names
    the closest pair of sites.
    """
    if not sigma2 > 0:
        raise InputError(f"sigma2 must be positive, got {sigma2}")
    d = distance_matrix(sites, metric=spec.distance)
    cov = sigma2 * matern_corr(spec, phi, d)
    cholesky_with_jitter(cov, scale=sigma2, dist=d)
    return cov
