"""Synthetic cores: prior draws of the parameter state and datasets generated from it."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .basis import design_matrix
from .errors import InputError
from .geodesy import EARTH_RADIUS_KM, SiteLocation, cholesky_with_jitter, distance_matrix, matern_corr
from .model import (
    CoreRecord,
    DataModel,
    Dataset,
    ModelConfig,
    ParameterState,
    PriorSpec,
    link,
    obs_variance,
)
from .rng import child_rng

CEILING_GAP = 1e-6  # simulated densities are capped at rho_ice - CEILING_GAP


@dataclass
class SimulationSpec:
    """Layout and truth of a synthetic dataset.

    Sites are either given explicitly or drawn uniformly in a square of the
    south polar stereographic plane (``region_center_km`` is the square's
    center measured from the pole, ``region_size_km`` its side). ``depths`` may
    be an explicit array used for every core; otherwise each core gets
    ``n_depths`` evenly spaced depths from ``depth_min`` to its core length.
    """

    n_sites: int = 5
    sites: list | None = None
    cores_per_site: int = 1
    n_depths: int = 30
    depths: np.ndarray | None = None
    depth_min: float = 0.5
    core_lengths: list | float = 100.0
    campaigns: list = field(default_factory=lambda: ["A", "B"])
    truth: ParameterState | None = None
    seed: int = 0
    region_center_km: tuple = (-600.0, 0.0)
    region_size_km: float = 1500.0

    def __post_init__(self):
        if self.sites is not None:
            self.n_sites = len(self.sites)
        if self.n_sites < 1:
            raise InputError("simulation needs at least one site")


def stereographic_to_latlon(x_km, y_km):
    """South polar stereographic (true scale at the pole) to (lat, lon) degrees."""
    x_km = np.asarray(x_km, dtype=float)
    y_km = np.asarray(y_km, dtype=float)
    rho = np.hypot(x_km, y_km)
    colat = 2.0 * np.arctan(rho / (2.0 * EARTH_RADIUS_KM))
    lat = -90.0 + np.degrees(colat)
    lon = np.degrees(np.arctan2(x_km, y_km))
    lon = np.where(lon <= -180.0, lon + 360.0, lon)
    return lat, lon


def random_sites(n, rng, center_km=(-600.0, 0.0), size_km=1500.0):
    xy = rng.uniform(-0.5, 0.5, size=(n, 2)) * size_km + np.asarray(center_km)
    lat, lon = stereographic_to_latlon(xy[:, 0], xy[:, 1])
    return [SiteLocation(float(a), float(b)) for a, b in zip(lat, lon)]


def draw_fields(cfg: ModelConfig, sites, gamma, sigma2, phi, rng):
    """Draw ``alpha`` and ``log_z`` from their Gaussian-process layers."""
    gamma = np.asarray(gamma, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    J = gamma.size - 1
    d = distance_matrix(sites, metric=cfg.covariance.distance)
    R = matern_corr(cfg.covariance, phi, d)
    L, _ = cholesky_with_jitter(R, jitter=cfg.jitter, dist=d)
    eps = rng.standard_normal((len(sites), J + 1))
    fields = gamma[None, :] + (L @ eps) * np.sqrt(sigma2)[None, :]
    return fields[:, 0], fields[:, 1:]


def draw_prior_state(cfg: ModelConfig, sites, seed=None, campaigns=("all",), rng=None) -> ParameterState:
    """One draw of every parameter from the prior, fields included."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    pri: PriorSpec = cfg.priors
    J = cfg.n_basis
    gmean, gsd, a, b = pri.arrays(J)
    gamma = rng.normal(gmean, gsd)
    sigma2 = b / rng.gamma(a)
    phi = rng.uniform(pri.phi_lower, pri.phi_upper)
    campaigns = cfg.campaign_names(list(campaigns))
    tau2 = rng.gamma(pri.tau2_shape, 1.0 / pri.tau2_rate, size=len(campaigns))
    alpha, log_z = draw_fields(cfg, sites, gamma, sigma2, phi, rng)
    return ParameterState(gamma, sigma2, phi, tau2, alpha, log_z, campaigns)


def prior_curves(cfg: ModelConfig, depths, n_draws=1000, seed=0, zero_mean=False):
    """Prior-predictive mean density curves at a single site.

    Returns an ``(n_draws, len(depths))`` array. ``zero_mean`` swaps in
    mean-zero normal priors on every ``gamma``.
    """
    if zero_mean:
        pri = cfg.priors
        cfg = cfg.with_(priors=PriorSpec(**{**pri.__dict__, "gamma0_mean": 0.0, "gammaj_mean": 0.0}))
    rng = np.random.default_rng(seed)
    K = design_matrix(cfg.basis, np.asarray(depths, dtype=float))
    site = [SiteLocation(-80.0, -120.0)]
    out = np.empty((n_draws, K.shape[0]))
    for m in range(n_draws):
        st = draw_prior_state(cfg, site, rng=rng)
        w = st.alpha[0] + K @ np.exp(st.log_z[0])
        out[m] = link(w, cfg.rho_ice)
    return out


def write_prior_curves_csv(cfg: ModelConfig, depths, path, n_draws=1000, seed=0) -> None:
    """Both prior-predictive panels in long format ``panel, draw, depth_m, density``.

    Panel ``proposed`` uses the configured priors, ``zero_mean`` the
    mean-zero comparison priors; both share ``seed``.
    """
    depths = np.asarray(depths, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["panel", "draw", "depth_m", "density"])
        for panel, zero in (("proposed", False), ("zero_mean", True)):
            curves = prior_curves(cfg, depths, n_draws=n_draws, seed=seed, zero_mean=zero)
            for m, row in enumerate(curves):
                for x, y in zip(depths, row):
                    w.writerow([panel, m, f"{x:.10g}", f"{y:.10g}"])


def sample_truncated(mu, v, rng, data_model=DataModel.TRUNC_NORMAL, lower=0.0):
    """Draws from the truncated-below observation model by inverse CDF."""
    mu = np.asarray(mu, dtype=float)
    s = np.sqrt(np.broadcast_to(np.asarray(v, dtype=float), mu.shape))
    u = rng.uniform(size=mu.shape)
    dist = stats.norm if DataModel(data_model) is DataModel.TRUNC_NORMAL else stats.t(4)
    a = (lower - mu) / s
    # sample from the upper tail via survival functions to keep precision
    sa = dist.sf(a)
    z = dist.isf(u * sa)
    return np.maximum(mu + s * z, np.nextafter(lower, np.inf))


def generate_dataset(spec: SimulationSpec, cfg: ModelConfig):
    """Simulate measurements around the mean curves; returns ``(Dataset, truth)``."""
    rng = child_rng(spec.seed, "simulate")
    sites = spec.sites if spec.sites is not None else random_sites(
        spec.n_sites, child_rng(spec.seed, "sites"), spec.region_center_km, spec.region_size_km
    )
    campaigns = list(spec.campaigns)
    truth = spec.truth
    if truth is None:
        truth = draw_prior_state(cfg, sites, campaigns=campaigns, rng=child_rng(spec.seed, "truth"))
    if truth.n_sites != len(sites):
        raise InputError("supplied truth does not match the number of sites")
    lengths = spec.core_lengths
    if np.ndim(lengths) == 0:
        lengths = [float(lengths)] * len(sites)
    K_cache = {}
    cores = []
    width = len(str(len(sites)))
    for s, loc in enumerate(sites):
        for rep in range(spec.cores_per_site):
            if spec.depths is not None:
                depths = np.asarray(spec.depths, dtype=float)
            else:
                depths = np.linspace(spec.depth_min, lengths[s], spec.n_depths)
            campaign = campaigns[(s * spec.cores_per_site + rep) % len(campaigns)]
            key = depths.tobytes()
            if key not in K_cache:
                K_cache[key] = design_matrix(cfg.basis, depths)
            K = K_cache[key]
            mu = link(truth.alpha[s] + K @ np.exp(truth.log_z[s]), cfg.rho_ice)
            proto = CoreRecord(f"S{s:0{width}d}", loc, campaign, depths, mu, replicate=str(rep + 1))
            v = obs_variance(truth, cfg, proto)
            y = sample_truncated(mu, v, rng, cfg.data_model)
            # stay below rho_ice even after 10-digit CSV rounding
            y = np.minimum(y, cfg.rho_ice - CEILING_GAP)
            cores.append(CoreRecord(proto.site_id, loc, campaign, depths, y, replicate=proto.replicate))
    return Dataset.from_cores(cores), truth
