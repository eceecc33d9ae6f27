"""Posterior prediction of density curves at new or observed sites.

For every retained draw the intercept field and each log-coefficient field
are conditioned on their values at the fitted sites (kriging with the draw's
``phi`` and ``sigma2``), sampled jointly over all targets, and pushed through
the scaled-logistic link. ``NoisyMeasurement`` mode additionally draws from
the truncated observation model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .basis import design_matrix
from .errors import DomainError, InputError, NumericalError
from .geodesy import SiteLocation, cholesky_with_jitter, distance_matrix, matern_corr
from .inference.fitting import draw_state
from .inference.hmc import PosteriorSamples
from .model import ModelConfig, ParameterState, VarianceMode, link
from .rng import child_rng
from .simulate import sample_truncated


class PredictionMode(str, Enum):
    MEAN_CURVE = "mean_curve"
    NOISY_MEASUREMENT = "noisy_measurement"


@dataclass
class PredictionRequest:
    """Where and how to predict.

    ``NOISY_MEASUREMENT`` needs the weighting context of a hypothetical core:
    ``campaign`` plus its measurement count ``n`` and length ``x_max``.
    """

    targets: list
    depths: np.ndarray
    mode: PredictionMode = PredictionMode.MEAN_CURVE
    labels: list | None = None
    campaign: str | None = None
    n: int | None = None
    x_max: float | None = None
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        self.mode = PredictionMode(self.mode)
        self.depths = np.atleast_1d(np.asarray(self.depths, dtype=float))
        if isinstance(self.targets, SiteLocation):
            self.targets = [self.targets]
        if self.labels is None:
            self.labels = [f"target{i}" for i in range(len(self.targets))]
        if len(self.labels) != len(self.targets):
            raise InputError("one label per target is required")
        if self.mode is PredictionMode.NOISY_MEASUREMENT and (self.n is None or self.x_max is None):
            raise InputError("noisy-measurement prediction needs n and x_max of the hypothetical core")


@dataclass
class PredictiveDraws:
    """Draws shaped ``(n_draws, n_targets, n_depths)`` plus per-cell summaries."""

    draws: np.ndarray
    depths: np.ndarray
    labels: list
    mode: PredictionMode
    mean: np.ndarray = field(init=False)
    q025: np.ndarray = field(init=False)
    q975: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mean = self.draws.mean(axis=0)
        self.q025 = np.quantile(self.draws, 0.025, axis=0, method="midpoint")
        self.q975 = np.quantile(self.draws, 0.975, axis=0, method="midpoint")

    def rows(self):
        for t, label in enumerate(self.labels):
            for d, depth in enumerate(self.depths):
                yield {
                    "site_label": label,
                    "depth_m": depth,
                    "mean": self.mean[t, d],
                    "q025": self.q025[t, d],
                    "q975": self.q975[t, d],
                    "mode": self.mode.value,
                }


CURVE_COLUMNS = ["site_label", "depth_m", "mean", "q025", "q975", "mode"]


def write_curves_csv(pred_list, path) -> None:
    if isinstance(pred_list, PredictiveDraws):
        pred_list = [pred_list]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for pred in pred_list:
            for r in pred.rows():
                w.writerow([r["site_label"], f"{r['depth_m']:.10g}", f"{r['mean']:.10g}",
                            f"{r['q025']:.10g}", f"{r['q975']:.10g}", r["mode"]])


# ---------------------------------------------------------------------------
# Gaussian conditioning


@dataclass
class _Conditioner:
    """Kriging weights and conditional correlation factor for one ``phi``."""

    weights: np.ndarray  # (T, S)
    cond_corr: np.ndarray  # (T, T)
    factor: np.ndarray  # (T, T), lower-triangular on the free targets
    coincident: np.ndarray  # (T,) observed index or -1


def _conditioner(cfg: ModelConfig, phi, d_oo, d_to, d_tt, jitter) -> _Conditioner:
    R_oo = matern_corr(cfg.covariance, phi, d_oo)
    R_to = matern_corr(cfg.covariance, phi, d_to)
    R_tt = matern_corr(cfg.covariance, phi, d_tt)
    T = d_to.shape[0]
    coincident = np.full(T, -1)
    hit = np.argwhere(d_to == 0.0)
    for t, k in hit:
        if coincident[t] < 0:
            coincident[t] = k
    L, _ = cholesky_with_jitter(R_oo, jitter=jitter, dist=d_oo)
    # weights = R_to R_oo^-1
    Wt = np.linalg.solve(L.T, np.linalg.solve(L, R_to.T))
    weights = Wt.T
    cond = R_tt - weights @ R_to.T
    for t in np.flatnonzero(coincident >= 0):
        weights[t] = 0.0
        weights[t, coincident[t]] = 1.0
        cond[t, :] = 0.0
        cond[:, t] = 0.0
    cond = 0.5 * (cond + cond.T)
    factor = np.zeros((T, T))
    free = np.flatnonzero(coincident < 0)
    if free.size:
        sub = cond[np.ix_(free, free)]
        try:
            Lf, _ = cholesky_with_jitter(sub, jitter=max(jitter, 1e-12), max_jitter=1e-6)
        except NumericalError:
            raise NumericalError("conditional covariance of prediction targets is not positive semidefinite") from None
        factor[np.ix_(free, free)] = Lf
    return _Conditioner(weights, cond, factor, coincident)


def condition_field(state: ParameterState, field_index: int, obs_sites, targets, cfg: ModelConfig,
                    rng=None):
    """Conditional normal of one field at ``targets`` given its values at ``obs_sites``.

    ``field_index`` 0 is the intercept ``alpha``; ``j >= 1`` is ``log z_j``.
    Returns ``(mean, cov, sample)``; ``sample`` is ``None`` without ``rng``.
    """
    if isinstance(targets, SiteLocation):
        targets = [targets]
    metric = cfg.covariance.distance
    d_oo = distance_matrix(obs_sites, metric=metric)
    d_to = distance_matrix(targets, obs_sites, metric=metric)
    d_tt = distance_matrix(targets, metric=metric)
    con = _conditioner(cfg, state.phi, d_oo, d_to, d_tt, cfg.jitter)
    values = state.alpha if field_index == 0 else state.log_z[:, field_index - 1]
    g = state.gamma[field_index]
    s2 = state.sigma2[field_index]
    mean = g + con.weights @ (values - g)
    for t in np.flatnonzero(con.coincident >= 0):
        mean[t] = values[con.coincident[t]]
    cov = s2 * con.cond_corr
    sample = None
    if rng is not None:
        sample = mean + np.sqrt(s2) * (con.factor @ rng.standard_normal(len(targets)))
    return mean, cov, sample


def _target_fields(state: ParameterState, con: _Conditioner, rng):
    """Joint draw of every field at the targets: ``(alpha_t, log_z_t)``."""
    T = con.weights.shape[0]
    J = state.n_basis
    obs = np.column_stack([state.alpha, state.log_z])  # (S, J+1)
    resid = obs - state.gamma[None, :]
    mean = state.gamma[None, :] + con.weights @ resid
    eps = rng.standard_normal((T, J + 1))
    draw = mean + (con.factor @ eps) * np.sqrt(state.sigma2)[None, :]
    for t in np.flatnonzero(con.coincident >= 0):
        draw[t] = obs[con.coincident[t]]
    return draw[:, 0], draw[:, 1:]


def _draw_indices(samples: PosteriorSamples, thin: int):
    return [(c, i) for c in range(samples.n_chains) for i in range(0, samples.n_keep, thin)]


def predict_targets(samples: PosteriorSamples, targets, depth_lists, mode=PredictionMode.MEAN_CURVE,
                    contexts=None, thin: int = 1, seed: int = 0):
    """Engine behind :func:`predict_curves`: each target may have its own depths.

    ``contexts`` (noisy mode) is one ``(campaign, n, x_max)`` per target.
    Returns a list of ``(n_draws, len(depths_t))`` arrays.
    """
    cfg: ModelConfig = samples.meta["config"]
    mode = PredictionMode(mode)
    obs_sites = samples.meta["sites"]
    metric = cfg.covariance.distance
    depth_lists = [np.atleast_1d(np.asarray(d, dtype=float)) for d in depth_lists]
    lo, hi = cfg.basis.x_min, cfg.basis.x_max
    for d in depth_lists:
        if d.size and (d.min() < lo or d.max() > hi):
            raise DomainError(f"prediction depths must lie in [{lo}, {hi}]")
    Ks = [design_matrix(cfg.basis, d) for d in depth_lists]
    d_oo = distance_matrix(obs_sites, metric=metric)
    d_to = distance_matrix(targets, obs_sites, metric=metric)
    d_tt = distance_matrix(targets, metric=metric)
    variances = None
    if mode is PredictionMode.NOISY_MEASUREMENT:
        if contexts is None or len(contexts) != len(targets):
            raise InputError("noisy prediction needs one (campaign, n, x_max) context per target")
        variances = []
        for campaign, n, x_max in contexts:
            if not (n and x_max and n > 0 and x_max > 0):
                raise InputError("weighting context needs positive n and x_max")
            variances.append((campaign, 1.0 if cfg.variance_mode is VarianceMode.HOMOSCEDASTIC else n / x_max))
    idx = _draw_indices(samples, thin)
    out = [np.empty((len(idx), K.shape[0])) for K in Ks]
    for m, (c, i) in enumerate(idx):
        state = draw_state(samples, c, i)
        rng = child_rng(seed, "predict", m)
        con = _conditioner(cfg, state.phi, d_oo, d_to, d_tt, cfg.jitter)
        alpha_t, lz_t = _target_fields(state, con, rng)
        for t, K in enumerate(Ks):
            mu = link(alpha_t[t] + K @ np.exp(lz_t[t]), cfg.rho_ice)
            if variances is not None:
                campaign, wt = variances[t]
                if cfg.variance_mode is VarianceMode.FIXED_WEIGHTED_CAMPAIGN:
                    tau2 = state.tau2_for(campaign)
                else:
                    tau2 = float(state.tau2[0])
                mu = sample_truncated(mu, tau2 * wt, rng, cfg.data_model)
            out[t][m] = mu
    return out


def predict_curves(samples: PosteriorSamples, req: PredictionRequest, data=None) -> PredictiveDraws:
    """Posterior (predictive) density curves at ``req.targets`` over ``req.depths``."""
    contexts = None
    if req.mode is PredictionMode.NOISY_MEASUREMENT:
        contexts = [(req.campaign, req.n, req.x_max)] * len(req.targets)
    per_target = predict_targets(samples, req.targets, [req.depths] * len(req.targets), req.mode,
                                 contexts, thin=req.thin, seed=req.seed)
    draws = np.stack(per_target, axis=1)
    return PredictiveDraws(draws, req.depths, list(req.labels), req.mode)


def extend_curve(samples: PosteriorSamples, site_id: str, depths, mode=PredictionMode.MEAN_CURVE,
                 data=None, thin: int = 1, seed: int = 0) -> PredictiveDraws:
    """Predict a fitted site's curve over ``depths``, typically past its core length.

    Noisy mode uses the campaign and data spacing of the site's first core, which
    requires ``data``.
    """
    ids = samples.meta["site_ids"]
    if site_id not in ids:
        raise InputError(f"site {site_id!r} is not part of the fitted dataset")
    loc = samples.meta["sites"][ids.index(site_id)]
    kw = {}
    if PredictionMode(mode) is PredictionMode.NOISY_MEASUREMENT:
        if data is None:
            raise InputError("noisy extension needs the dataset for the core's weighting context")
        core = next(c for c in data.cores if c.site_id == site_id)
        kw = dict(campaign=core.campaign, n=core.n, x_max=core.x_max)
    req = PredictionRequest([loc], depths, mode, labels=[site_id], thin=thin, seed=seed, **kw)
    return predict_curves(samples, req)
