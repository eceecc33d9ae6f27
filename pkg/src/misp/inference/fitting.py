"""Fit the snow-density model to a dataset with HMC."""

from __future__ import annotations

import numpy as np

from ..errors import InputError
from ..model import Dataset, ModelConfig, ParameterState, SnowModel, vector_to_state
from ..rng import child_rng
from ..simulate import draw_prior_state
from .hmc import InitMode, PosteriorSamples, SamplerConfig, sample


def initial_points(model: SnowModel, cfg: SamplerConfig, supplied=None):
    if cfg.init is InitMode.SUPPLIED:
        if supplied is None:
            raise InputError("init = supplied but no initial states were given")
        states = supplied if isinstance(supplied, (list, tuple)) else [supplied] * cfg.n_chains
        return [model.unconstrain(s) for s in states]
    points = []
    for c in range(cfg.n_chains):
        rng = child_rng(cfg.seed, "init", c)
        for _ in range(100):
            st = draw_prior_state(model.cfg, model.data.sites, campaigns=model.campaigns, rng=rng)
            u = model.unconstrain(st)
            lp, gr = model(u)
            if np.isfinite(lp) and np.all(np.isfinite(gr)):
                break
        points.append(u)
    return points


def fit(cfg: ModelConfig, data: Dataset, sampler: SamplerConfig, campaigns=None,
        init_states=None, n_workers: int = 1) -> PosteriorSamples:
    """Posterior draws for ``cfg`` given ``data``.

    ``campaigns`` fixes the campaign list (and hence the noise parameters),
    which matters when a training subset lacks a campaign that held-out cores
    use.
    """
    model = SnowModel(cfg, data, campaigns=campaigns)
    inits = initial_points(model, sampler, init_states)
    out = sample(sampler, model, inits, names=model.names, constrain=model.constrain_vector,
                 n_workers=n_workers)
    out.meta.update(
        n_basis=model.J,
        campaigns=list(model.campaigns),
        site_ids=list(data.site_ids),
        sites=list(data.sites),
        config=cfg,
        sampler=sampler,
    )
    return out


def draw_state(samples: PosteriorSamples, chain: int, i: int) -> ParameterState:
    """The ``i``-th retained draw of ``chain`` as a :class:`ParameterState`."""
    m = samples.meta
    return vector_to_state(samples.values[chain, i], m["n_basis"], m["campaigns"], len(m["site_ids"]))


def iter_states(samples: PosteriorSamples, thin: int = 1):
    for c in range(samples.n_chains):
        for i in range(0, samples.n_keep, thin):
            yield draw_state(samples, c, i)
