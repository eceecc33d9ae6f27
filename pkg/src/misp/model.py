"""Hierarchical snow-density model.

Mean density follows a scaled logistic of the monotone process::

    log(mu / (rho_ice - mu)) = alpha(s) + sum_j K_j(x) z_j(s)

with ``alpha`` a Gaussian process and ``log z_j`` independent Gaussian
processes that share one Matérn decay ``phi``. Observations are truncated
below zero (normal or t with four degrees of freedom) with variance
``tau2 * n / x_max`` per core.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import stats
from scipy.special import expit, log_ndtr

from . import _core
from .basis import KernelSpec, KnotConfig, design_matrix
from .errors import ConfigurationError, InputError, ValidationError
from .geodesy import CovarianceSpec, SiteLocation, distance_matrix, matern_corr

RHO_ICE = 0.917
DEFAULT_JITTER = 1e-10


class VarianceMode(str, Enum):
    HOMOSCEDASTIC = "homoscedastic"
    FIXED_WEIGHTED = "fixed_weighted"
    FIXED_WEIGHTED_CAMPAIGN = "fixed_weighted_campaign"


class DataModel(str, Enum):
    TRUNC_NORMAL = "trunc_normal"
    TRUNC_T4 = "trunc_t4"


# ---------------------------------------------------------------------------
# data containers


@dataclass
class CoreRecord:
    site_id: str
    location: SiteLocation
    campaign: str
    depths: np.ndarray
    densities: np.ndarray
    replicate: str = "1"
    x_max: float | None = None
    n: int | None = None

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=float)
        self.densities = np.asarray(self.densities, dtype=float)
        if self.depths.shape != self.densities.shape or self.depths.ndim != 1:
            raise ValidationError(f"core {self.label}: depths and densities must be equal-length vectors")
        if self.n is None:
            self.n = int(self.depths.size)
        if self.x_max is None:
            self.x_max = float(self.depths.max()) if self.depths.size else 0.0
        if self.n != self.depths.size:
            raise ValidationError(f"core {self.label}: n={self.n} but {self.depths.size} measurements")
        if not self.x_max > 0:
            raise ValidationError(f"core {self.label}: x_max must be positive")
        if np.any(self.depths < 0) or np.any(self.depths > self.x_max + 1e-12):
            raise ValidationError(f"core {self.label}: depths must lie in [0, x_max]")

    @property
    def label(self) -> str:
        return f"{self.site_id}/{self.replicate}"

    @property
    def weight(self) -> float:
        """Variance multiplier ``n / x_max``."""
        return self.n / self.x_max


@dataclass
class Dataset:
    """Cores plus the deduplicated site list they index into.

    Replicate cores share a site. ``site_of_core[i]`` gives the site index of
    ``cores[i]``.
    """

    cores: list
    sites: list = field(default_factory=list)
    site_ids: list = field(default_factory=list)
    site_of_core: list = field(default_factory=list)

    @classmethod
    def from_cores(cls, cores, tolerance_km: float = 0.0) -> "Dataset":
        sites, ids, index = [], [], []
        by_id = {}
        for core in cores:
            if core.site_id in by_id:
                k = by_id[core.site_id]
                if core.location != sites[k]:
                    raise ValidationError(f"site {core.site_id} has inconsistent coordinates")
            else:
                k = None
                for i, s in enumerate(sites):
                    same = s == core.location
                    if not same and tolerance_km > 0:
                        same = distance_matrix([s], [core.location])[0, 0] <= tolerance_km
                    if same:
                        k = i
                        break
                if k is None:
                    sites.append(core.location)
                    ids.append(core.site_id)
                    k = len(sites) - 1
                by_id[core.site_id] = k
            index.append(k)
        return cls(list(cores), sites, ids, index)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_cores(self) -> int:
        return len(self.cores)

    @property
    def n_obs(self) -> int:
        return int(sum(c.n for c in self.cores))

    @property
    def campaigns(self) -> list:
        return sorted({c.campaign for c in self.cores})

    def subset(self, core_indices) -> "Dataset":
        return Dataset.from_cores([self.cores[i] for i in core_indices])

    def summary(self) -> str:
        return f"n_sites={self.n_sites} n_cores={self.n_cores} N={self.n_obs}"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PriorSpec:
    """Hyperpriors. Inverse-gamma ``(a, b)`` has mean ``b/(a-1)``; gamma
    ``(shape, rate)`` has mean ``shape/rate``; ``phi`` is per km."""

    gamma0_mean: float = -0.5
    gamma0_sd: float = 1.0
    gammaj_mean: float = -1.5
    gammaj_sd: float = 1.0
    sigma2_0_a: float = 10.0
    sigma2_0_b: float = 3.0
    sigma2_j_a: float = 4.0
    sigma2_j_b: float = 3.0
    phi_lower: float = 1e-5
    phi_upper: float = 1e-1
    tau2_shape: float = 1.0
    tau2_rate: float = 100.0

    def __post_init__(self):
        for name in ("gamma0_sd", "gammaj_sd", "sigma2_0_a", "sigma2_0_b", "sigma2_j_a",
                     "sigma2_j_b", "tau2_shape", "tau2_rate"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"prior hyperparameter {name} must be positive")
        if not 0 < self.phi_lower < self.phi_upper:
            raise ConfigurationError("phi bounds must satisfy 0 < lower < upper")

    @classmethod
    def zero_mean(cls, **kw) -> "PriorSpec":
        """The conventional mean-zero alternative for the gamma priors."""
        return cls(gamma0_mean=0.0, gammaj_mean=0.0, **kw)

    def arrays(self, J: int):
        P = J + 1
        gmean = np.r_[self.gamma0_mean, np.full(J, self.gammaj_mean)]
        gsd = np.r_[self.gamma0_sd, np.full(J, self.gammaj_sd)]
        a = np.r_[self.sigma2_0_a, np.full(J, self.sigma2_j_a)]
        b = np.r_[self.sigma2_0_b, np.full(J, self.sigma2_j_b)]
        assert gmean.size == P
        return gmean, gsd, a, b


@dataclass(frozen=True)
class ModelConfig:
    rho_ice: float = RHO_ICE
    basis: KnotConfig | KernelSpec = field(default_factory=KnotConfig)
    covariance: CovarianceSpec = field(default_factory=CovarianceSpec)
    variance_mode: VarianceMode = VarianceMode.FIXED_WEIGHTED_CAMPAIGN
    data_model: DataModel = DataModel.TRUNC_NORMAL
    priors: PriorSpec = field(default_factory=PriorSpec)
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        if not self.rho_ice > 0:
            raise ConfigurationError("rho_ice must be positive")
        object.__setattr__(self, "variance_mode", VarianceMode(self.variance_mode))
        object.__setattr__(self, "data_model", DataModel(self.data_model))

    @property
    def n_basis(self) -> int:
        return self.basis.n_basis

    def campaign_names(self, campaigns) -> list:
        if self.variance_mode is VarianceMode.FIXED_WEIGHTED_CAMPAIGN:
            return list(campaigns)
        return ["all"]

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


@dataclass
class ParameterState:
    """One point of the posterior, on the constrained scale."""

    gamma: np.ndarray
    sigma2: np.ndarray
    phi: float
    tau2: np.ndarray
    alpha: np.ndarray
    log_z: np.ndarray
    campaigns: list = field(default_factory=lambda: ["all"])

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        self.tau2 = np.atleast_1d(np.asarray(self.tau2, dtype=float))
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.log_z = np.atleast_2d(np.asarray(self.log_z, dtype=float))
        self.phi = float(self.phi)
        self.campaigns = list(self.campaigns)
        J = self.gamma.size - 1
        if self.sigma2.size != J + 1 or self.log_z.shape != (self.alpha.size, J):
            raise InputError("inconsistent ParameterState dimensions")
        if self.tau2.size != len(self.campaigns):
            raise InputError("tau2 must have one entry per campaign label")
        if np.any(self.sigma2 <= 0) or np.any(self.tau2 <= 0) or not self.phi > 0:
            raise InputError("sigma2, tau2 and phi must be positive")

    @property
    def n_basis(self) -> int:
        return self.gamma.size - 1

    @property
    def n_sites(self) -> int:
        return self.alpha.size

    def tau2_for(self, campaign: str) -> float:
        if self.campaigns == ["all"]:
            return float(self.tau2[0])
        try:
            return float(self.tau2[self.campaigns.index(campaign)])
        except ValueError:
            raise ConfigurationError(f"unknown campaign {campaign!r}; known {self.campaigns}") from None

    def copy(self) -> "ParameterState":
        return ParameterState(self.gamma.copy(), self.sigma2.copy(), self.phi, self.tau2.copy(),
                              self.alpha.copy(), self.log_z.copy(), list(self.campaigns))


def parameter_names(J: int, campaigns, site_ids) -> list:
    names = [f"gamma[{j}]" for j in range(J + 1)]
    names += [f"sigma2[{j}]" for j in range(J + 1)]
    names += ["phi"]
    names += [f"tau2[{c}]" for c in campaigns]
    names += [f"alpha[{s}]" for s in site_ids]
    names += [f"log_z[{s},{j}]" for s in site_ids for j in range(J)]
    return names


def state_to_vector(state: ParameterState) -> np.ndarray:
    """Constrained parameters flattened in :func:`parameter_names` order."""
    return np.concatenate([state.gamma, state.sigma2, [state.phi], state.tau2,
                           state.alpha, state.log_z.ravel()])


def vector_to_state(vec, J: int, campaigns, n_sites: int) -> ParameterState:
    vec = np.asarray(vec, dtype=float)
    P, C = J + 1, len(campaigns)
    o = 0
    gamma = vec[o:o + P]; o += P
    sigma2 = vec[o:o + P]; o += P
    phi = vec[o]; o += 1
    tau2 = vec[o:o + C]; o += C
    alpha = vec[o:o + n_sites]; o += n_sites
    log_z = vec[o:o + n_sites * J].reshape(n_sites, J)
    return ParameterState(gamma, sigma2, phi, tau2, alpha, log_z, list(campaigns))


# ---------------------------------------------------------------------------
# elementwise model pieces


def link(w, rho_ice=RHO_ICE):
    """Scaled logistic ``rho_ice * expit(w)``.

    Kept strictly inside ``(0, rho_ice)`` in floating point: beyond
    ``|w| ~ 37`` the exact value is closer to a bound than one ulp, so it is
    rounded to the nearest representable interior number instead.
    """
    mu = rho_ice * expit(w)
    return np.clip(mu, np.nextafter(0.0, 1.0), np.nextafter(rho_ice, 0.0))


def mean_density(state: ParameterState, cfg: ModelConfig, site: int, x):
    """Mean density at ``site`` for depth(s) ``x``; strictly inside (0, rho_ice)."""
    K = design_matrix(cfg.basis, np.atleast_1d(x))
    w = state.alpha[site] + K @ np.exp(state.log_z[site])
    mu = link(w, cfg.rho_ice)
    return float(mu[0]) if np.ndim(x) == 0 else mu


def latent_w(state: ParameterState, cfg: ModelConfig, site: int, x):
    K = design_matrix(cfg.basis, np.atleast_1d(x))
    return state.alpha[site] + K @ np.exp(state.log_z[site])


def latent_covariance(cfg: ModelConfig, gamma, sigma2, phi, d, x, x2):
    """Prior covariance of ``w(s, x)`` and ``w(s', x2)`` for sites ``d`` km apart.

    Uses the log-normal moments of ``z_j = exp(log z_j)``::

        sigma2_0 r + sum_j K_j(x) K_j(x2) exp(2 gamma_j + sigma2_j) (exp(sigma2_j r) - 1)

    with ``r`` the Matérn correlation at ``d``.
    """
    gamma = np.asarray(gamma, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    r = matern_corr(cfg.covariance, phi, d)
    K1 = design_matrix(cfg.basis, np.atleast_1d(x))[0]
    K2 = design_matrix(cfg.basis, np.atleast_1d(x2))[0]
    g, s2 = gamma[1:], sigma2[1:]
    lognormal = np.exp(2 * g + s2) * np.expm1(s2 * r)
    return float(sigma2[0] * r + np.sum(K1 * K2 * lognormal))


def core_weight(cfg: ModelConfig, core: CoreRecord) -> float:
    if cfg.variance_mode is VarianceMode.HOMOSCEDASTIC:
        return 1.0
    return core.weight


def obs_variance(state: ParameterState, cfg: ModelConfig, core: CoreRecord) -> float:
    """Measurement variance for ``core`` under the configured weighting."""
    mode = cfg.variance_mode
    if mode is VarianceMode.FIXED_WEIGHTED_CAMPAIGN:
        tau2 = state.tau2_for(core.campaign)
    else:
        tau2 = float(state.tau2[0])
    return tau2 * core_weight(cfg, core)


def trunc_normal_logpdf(x, mu, v, lower=0.0):
    """Normal(mu, v) log density truncated to ``(lower, inf)``; ``-inf`` at or below ``lower``."""
    x, mu, v = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, mu, v)))
    s = np.sqrt(v)
    out = -0.5 * np.log(2 * np.pi * v) - 0.5 * ((x - mu) / s) ** 2 - log_ndtr((mu - lower) / s)
    out = np.where(x > lower, out, -np.inf)
    return float(out) if out.ndim == 0 else out


def _t4_logcdf(t):
    t = np.asarray(t, dtype=float)
    r = np.sqrt(4.0 + t * t)
    omq = 4.0 / (r * (r + np.abs(t)))
    low = 0.25 * omq * omq * (3.0 - omq)
    return np.where(t <= 0, np.log(low), np.log1p(-low))


def trunc_t4_logpdf(x, mu, v, lower=0.0):
    """Student-t (4 df, scale ``sqrt(v)``) log density truncated to ``(lower, inf)``."""
    x, mu, v = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, mu, v)))
    s = np.sqrt(v)
    z = (x - mu) / s
    out = math.log(0.375) - np.log(s) - 2.5 * np.log1p(0.25 * z * z) - _t4_logcdf((mu - lower) / s)
    out = np.where(x > lower, out, -np.inf)
    return float(out) if out.ndim == 0 else out


def _inv_gamma_logpdf(x, a, b):
    return a * np.log(b) - math.lgamma(a) - (a + 1) * np.log(x) - b / x


def _gamma_logpdf(x, shape, rate):
    return shape * np.log(rate) - math.lgamma(shape) + (shape - 1) * np.log(x) - rate * x


def correlation_matrix(cfg: ModelConfig, sites, phi: float) -> np.ndarray:
    d = distance_matrix(sites, metric=cfg.covariance.distance)
    return matern_corr(cfg.covariance, phi, d)


def log_prior(state: ParameterState, cfg: ModelConfig, sites) -> float:
    """Joint log density of hyperparameters and the spatial field layers."""
    pri = cfg.priors
    J = state.n_basis
    gmean, gsd, a, b = pri.arrays(J)
    if not pri.phi_lower < state.phi < pri.phi_upper:
        return -np.inf
    lp = float(np.sum(stats.norm.logpdf(state.gamma, gmean, gsd)))
    lp += float(np.sum([_inv_gamma_logpdf(state.sigma2[f], a[f], b[f]) for f in range(J + 1)]))
    lp += -math.log(pri.phi_upper - pri.phi_lower)
    lp += float(np.sum(_gamma_logpdf(state.tau2, pri.tau2_shape, pri.tau2_rate)))
    R = correlation_matrix(cfg, sites, state.phi) + cfg.jitter * np.eye(len(sites))
    fields = [state.alpha] + [state.log_z[:, j] for j in range(J)]
    for f, v in enumerate(fields):
        lp += stats.multivariate_normal.logpdf(v, mean=np.full(v.size, state.gamma[f]),
                                               cov=state.sigma2[f] * R)
    return lp


def log_likelihood(state: ParameterState, cfg: ModelConfig, data: Dataset) -> float:
    """Sum of truncated observation log densities over every measurement."""
    logpdf = trunc_normal_logpdf if cfg.data_model is DataModel.TRUNC_NORMAL else trunc_t4_logpdf
    total = 0.0
    for core, site in zip(data.cores, data.site_of_core):
        if core.n == 0:
            continue
        mu = mean_density(state, cfg, site, core.depths)
        v = obs_variance(state, cfg, core)
        total += float(np.sum(logpdf(core.densities, mu, v)))
    return total


# ---------------------------------------------------------------------------
# posterior in unconstrained coordinates


class SnowModel:
    """Log posterior of one configuration bound to one dataset.

    Precomputes the design rows of every measurement and the inter-site
    distances once; :meth:`log_posterior_unconstrained` is then a single
    compiled call.
    """

    def __init__(self, cfg: ModelConfig, data: Dataset, campaigns=None):
        self.cfg = cfg
        self.data = data
        self.J = cfg.n_basis
        self.S = data.n_sites
        all_campaigns = list(campaigns) if campaigns is not None else data.campaigns
        self.campaigns = cfg.campaign_names(all_campaigns)
        self.C = len(self.campaigns)
        depths = [c.depths for c in data.cores]
        self.K = design_matrix(cfg.basis, np.concatenate(depths)) if depths and data.n_obs else np.zeros((0, self.J))
        self.y = np.concatenate([c.densities for c in data.cores]) if data.n_obs else np.zeros(0)
        self.site_idx = np.concatenate(
            [np.full(c.n, s, dtype=np.int64) for c, s in zip(data.cores, data.site_of_core)]
        ) if data.n_obs else np.zeros(0, dtype=np.int64)
        if cfg.variance_mode is VarianceMode.FIXED_WEIGHTED_CAMPAIGN:
            unknown = {c.campaign for c in data.cores} - set(self.campaigns)
            if unknown:
                raise ConfigurationError(f"cores reference unknown campaigns {sorted(unknown)}")
            cidx = [np.full(c.n, self.campaigns.index(c.campaign), dtype=np.int64) for c in data.cores]
        else:
            cidx = [np.zeros(c.n, dtype=np.int64) for c in data.cores]
        self.camp_idx = np.concatenate(cidx) if data.n_obs else np.zeros(0, dtype=np.int64)
        self.wt = np.concatenate([np.full(c.n, core_weight(cfg, c)) for c in data.cores]) if data.n_obs else np.zeros(0)
        if np.any(self.y <= 0) or np.any(self.y >= cfg.rho_ice):
            raise ValidationError(f"densities must lie in (0, {cfg.rho_ice})")
        self.dist = np.ascontiguousarray(distance_matrix(data.sites, metric=cfg.covariance.distance))
        self._priors = cfg.priors.arrays(self.J)
        self.names = parameter_names(self.J, self.campaigns, data.site_ids)

    @property
    def dim(self) -> int:
        P = self.J + 1
        return 2 * P + 1 + self.C + self.S + self.S * self.J

    # -- transforms ---------------------------------------------------------

    def unconstrain(self, state: ParameterState) -> np.ndarray:
        pri = self.cfg.priors
        p = (state.phi - pri.phi_lower) / (pri.phi_upper - pri.phi_lower)
        if not 0 < p < 1:
            raise InputError(f"phi={state.phi} outside prior support")
        return np.concatenate([state.gamma, np.log(state.sigma2), [math.log(p) - math.log1p(-p)],
                               np.log(state.tau2), state.alpha, state.log_z.ravel()])

    def constrain(self, u) -> ParameterState:
        return vector_to_state(self.constrain_vector(u), self.J, self.campaigns, self.S)

    def constrain_vector(self, u) -> np.ndarray:
        """Map unconstrained draws (last axis) to the constrained flat layout."""
        u = np.asarray(u, dtype=float)
        out = u.copy()
        P = self.J + 1
        pri = self.cfg.priors
        out[..., P:2 * P] = np.exp(u[..., P:2 * P])
        out[..., 2 * P] = pri.phi_lower + (pri.phi_upper - pri.phi_lower) * expit(u[..., 2 * P])
        sl = slice(2 * P + 1, 2 * P + 1 + self.C)
        out[..., sl] = np.exp(u[..., sl])
        return out

    def log_jacobian(self, u) -> float:
        P = self.J + 1
        pri = self.cfg.priors
        s = expit(u[2 * P])
        return float(np.sum(u[P:2 * P]) + math.log(pri.phi_upper - pri.phi_lower) + math.log(s)
                     + math.log1p(-s) + np.sum(u[2 * P + 1:2 * P + 1 + self.C]))

    # -- density --------------------------------------------------------------

    def log_posterior_unconstrained(self, u):
        """``(log density, gradient)`` including the transform Jacobian."""
        u = np.ascontiguousarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise InputError(f"expected vector of length {self.dim}, got shape {u.shape}")
        bad = np.flatnonzero(~np.isfinite(u))
        if bad.size:
            raise InputError(f"non-finite coordinate {bad[0]} ({self.names[bad[0]]}) = {u[bad[0]]}")
        return self._eval(u)

    def _eval(self, u):
        gmean, gsd, a, b = self._priors
        pri = self.cfg.priors
        return _core.log_posterior_grad(
            u, self.K, self.site_idx, self.camp_idx, self.y, self.wt, self.dist,
            self.J, self.S, self.C, self.cfg.rho_ice, self.cfg.covariance.smoothness.code,
            _core.DATA_TN if self.cfg.data_model is DataModel.TRUNC_NORMAL else _core.DATA_T4,
            gmean, gsd, a, b, pri.phi_lower, pri.phi_upper, pri.tau2_shape, pri.tau2_rate,
            self.cfg.jitter,
        )

    def __call__(self, u):
        """Sampler oracle: returns ``(-inf, grad)`` instead of raising on bad input."""
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            return -np.inf, np.zeros_like(u)
        try:
            lp, grad = self._eval(u)
        except (ArithmeticError, ValueError):
            return -np.inf, np.zeros_like(u)
        if not np.isfinite(lp):
            return -np.inf, grad
        return lp, grad

    def log_posterior(self, state: ParameterState) -> float:
        """Reference evaluation on the constrained scale (no Jacobian)."""
        return log_prior(state, self.cfg, self.data.sites) + log_likelihood(state, self.cfg, self.data)
