"""Static-trajectory Hamiltonian Monte Carlo with windowed warmup adaptation.

The target is any callable ``u -> (log_density, gradient)``. Warmup tunes the
step size by dual averaging towards ``target_accept`` and a diagonal inverse
mass matrix from draw variances in expanding windows; the last window spans
roughly the second half of warmup.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import ConfigurationError, InputError, SamplerFailure
from ..rng import child_rng

log = logging.getLogger(__name__)

MAX_ENERGY_ERROR = 1000.0

# dual averaging constants (Hoffman & Gelman 2014)
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75

_STEP_JITTER = 0.2


class InitMode(str, Enum):
    PRIOR_DRAW = "prior_draw"
    SUPPLIED = "supplied"


@dataclass
class SamplerConfig:
    n_chains: int = 4
    n_warmup: int = 5000
    n_keep: int = 12500
    leapfrog_steps: int = 32
    target_accept: float = 0.8
    seed: int = 0
    init: InitMode = InitMode.PRIOR_DRAW
    max_divergent_fraction: float = 0.1
    thin: int = 1
    step_size: float | None = None

    def __post_init__(self):
        self.init = InitMode(self.init)
        for name in ("n_chains", "n_keep", "leapfrog_steps", "thin"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if int(self.n_warmup) < 0:
            raise ConfigurationError("n_warmup must be nonnegative")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigurationError("target_accept must lie in (0, 1)")
        if self.step_size is not None and not self.step_size > 0:
            raise ConfigurationError("step_size must be positive")


@dataclass
class ChainResult:
    draws: np.ndarray
    log_density: np.ndarray
    accept_stat: np.ndarray
    divergent: np.ndarray
    step_size: float
    inv_mass: np.ndarray
    warmup_divergent: int


@dataclass
class PosteriorSamples:
    """Post-warmup draws of all chains.

    ``unconstrained`` has shape ``(n_chains, n_keep, dim)``; ``values`` holds
    the same draws mapped to the constrained scale (identical when the target
    has no transform).
    """

    unconstrained: np.ndarray
    values: np.ndarray
    names: list
    log_density: np.ndarray
    accept_stat: np.ndarray
    divergent: np.ndarray
    step_size: np.ndarray
    inv_mass: np.ndarray
    warnings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.values.shape[0]

    @property
    def n_keep(self) -> int:
        return self.values.shape[1]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, self.values.shape[-1])

    def column(self, name: str) -> np.ndarray:
        """Draws of one named parameter, shape ``(n_chains, n_keep)``."""
        return self.values[:, :, self.names.index(name)]

    def acceptance_rate(self) -> float:
        return float(self.accept_stat.mean())

    def divergent_fraction(self) -> float:
        return float(self.divergent.mean())


def _kinetic(p, inv_mass):
    return 0.5 * float(np.dot(p * inv_mass, p))


def leapfrog(u, p, step, n_steps, grad, inv_mass=None):
    """Integrate Hamilton's equations with ``n_steps`` leapfrog steps.

    ``grad`` returns the gradient of the log density (or a ``(logp, grad)``
    pair). Returns ``(u', p')``. A non-finite gradient stops integration and
    returns non-finite positions, which callers treat as a divergence.
    """
    u = np.array(u, dtype=float)
    p = np.array(p, dtype=float)
    inv_mass = np.ones_like(u) if inv_mass is None else inv_mass
    if n_steps == 0:
        return u, p

    def g(x):
        out = grad(x)
        return out[1] if isinstance(out, tuple) else out

    gr = g(u)
    for i in range(n_steps):
        p += 0.5 * step * gr
        u += step * inv_mass * p
        gr = g(u)
        if not np.all(np.isfinite(gr)):
            return np.full_like(u, np.nan), np.full_like(p, np.nan)
        p += 0.5 * step * gr
    return u, p


def _trajectory(u, p, lp, gr, step, n_steps, target, inv_mass):
    """Leapfrog reusing the cached gradient; returns the endpoint and a divergence flag."""
    u = u.copy()
    p = p + 0.5 * step * gr
    for i in range(n_steps):
        u += step * inv_mass * p
        lp, gr = target(u)
        if not (np.isfinite(lp) and np.all(np.isfinite(gr))):
            return u, p, -np.inf, gr, True
        if i < n_steps - 1:
            p += step * gr
    p += 0.5 * step * gr
    return u, p, lp, gr, False


class _DualAveraging:
    def __init__(self, step, target):
        self.mu = math.log(10.0 * step)
        self.target = target
        self.restart()

    def restart(self):
        self.t = 0
        self.h_bar = 0.0
        self.log_step_bar = 0.0

    def update(self, accept):
        self.t += 1
        eta = 1.0 / (self.t + _DA_T0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept)
        log_step = self.mu - math.sqrt(self.t) / _DA_GAMMA * self.h_bar
        w = self.t ** -_DA_KAPPA
        self.log_step_bar = w * log_step + (1 - w) * self.log_step_bar
        return math.exp(log_step)

    @property
    def final(self):
        return math.exp(self.log_step_bar)


def _warmup_windows(n_warmup):
    """Slow-adaptation window ends (exclusive) following the usual 75/25/50 layout."""
    if n_warmup < 20:
        return 0, n_warmup, []
    if n_warmup >= 150:
        init_buf, term_buf, base = 75, max(50, n_warmup // 10), 25
    else:
        init_buf, term_buf = int(0.15 * n_warmup), int(0.1 * n_warmup)
        base = n_warmup - init_buf - term_buf
    end_slow = n_warmup - term_buf
    ends = []
    start, size = init_buf, base
    while start < end_slow:
        stop = start + size
        if stop + 2 * size > end_slow:
            stop = end_slow
        ends.append(stop)
        start, size = stop, 2 * size
    return init_buf, end_slow, ends


def _calibrated_step(log_eps, accept, target, fallback):
    """Step whose expected acceptance is ``target``, from a logistic fit.

    Dual averaging equalizes the *mean* acceptance over its fluctuating
    iterates; because acceptance falls off steeply above the target, the
    averaged step then accepts noticeably more often than ``target``. Fitting
    ``accept ~ expit(a + b log eps)`` to the terminal-window transitions and
    solving for ``target`` removes that bias. Falls back to ``fallback`` when
    the fit is unusable; the result stays within a factor two of it.
    """
    x = np.asarray(log_eps, dtype=float)
    y = np.clip(np.asarray(accept, dtype=float), 0.0, 1.0)
    if x.size < 20 or np.ptp(x) == 0:
        return fallback
    xm, xs = x.mean(), x.std()
    z = (x - xm) / xs
    a, b = 0.0, 0.0
    for _ in range(50):
        pr = 1.0 / (1.0 + np.exp(-(a + b * z)))
        w = np.maximum(pr * (1 - pr), 1e-9)
        ga, gb = np.sum(y - pr), np.sum((y - pr) * z)
        haa, hab, hbb = np.sum(w), np.sum(w * z), np.sum(w * z * z) + 1e-9
        det = haa * hbb - hab * hab
        da, db = (hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det
        a, b = a + da, b + db
        if abs(da) + abs(db) < 1e-10:
            break
    if not (np.isfinite(a) and np.isfinite(b)) or not b < 0:
        return fallback
    est = xm + xs * (math.log(target / (1 - target)) - a) / b
    lo, hi = math.log(fallback) - math.log(2.0), math.log(fallback) + math.log(2.0)
    return math.exp(min(max(est, lo), hi))


def _find_initial_step(u, lp, gr, target, inv_mass, rng):
    step = 1.0
    p = rng.standard_normal(u.size) / np.sqrt(inv_mass)
    h0 = lp - _kinetic(p, inv_mass)

    def delta(eps):
        u1, p1, lp1, _, div = _trajectory(u, p, lp, gr, eps, 1, target, inv_mass)
        if div:
            return -np.inf
        return lp1 - _kinetic(p1, inv_mass) - h0

    d = delta(step)
    direction = 1 if d > math.log(0.8) else -1
    for _ in range(60):
        if direction == 1 and not d > math.log(0.8):
            break
        if direction == -1 and d > math.log(0.8):
            break
        step = step * 2.0 if direction == 1 else step * 0.5
        d = delta(step)
    return step


def run_chain(target, u0, cfg: SamplerConfig, chain: int) -> ChainResult:
    rng = child_rng(cfg.seed, "chain", chain)
    u = np.array(u0, dtype=float)
    lp, gr = target(u)
    if not (np.isfinite(lp) and np.all(np.isfinite(gr))):
        raise SamplerFailure(f"chain {chain}: initial point has non-finite log density",
                             {"chain": chain, "u0": u.tolist()})
    dim = u.size
    inv_mass = np.ones(dim)
    # an explicit step_size seeds adaptation, or is used as-is without warmup
    step = cfg.step_size if cfg.step_size is not None else _find_initial_step(u, lp, gr, target, inv_mass, rng)
    da = _DualAveraging(step, cfg.target_accept)
    init_buf, end_slow, window_ends = _warmup_windows(cfg.n_warmup)
    n_total = cfg.n_warmup + cfg.n_keep * cfg.thin
    keep_u = np.empty((cfg.n_keep, dim))
    keep_lp = np.empty(cfg.n_keep)
    keep_acc = np.empty(cfg.n_keep)
    keep_div = np.zeros(cfg.n_keep, dtype=bool)
    window = []
    calib_from = end_slow
    calib_x, calib_y = [], []
    warm_div = 0
    k = 0
    for it in range(n_total):
        warm = it < cfg.n_warmup
        eps = step * rng.uniform(1 - _STEP_JITTER, 1 + _STEP_JITTER)
        p = rng.standard_normal(dim) / np.sqrt(inv_mass)
        h0 = lp - _kinetic(p, inv_mass)
        u1, p1, lp1, gr1, div = _trajectory(u, p, lp, gr, eps, cfg.leapfrog_steps, target, inv_mass)
        if not div:
            h1 = lp1 - _kinetic(p1, inv_mass)
            delta = h1 - h0
            if not np.isfinite(delta) or -delta > MAX_ENERGY_ERROR:
                div = True
        accept = 0.0 if div else min(1.0, math.exp(min(delta, 0.0)))
        if not div and rng.uniform() < accept:
            u, lp, gr = u1, lp1, gr1
        if warm:
            warm_div += div
            if it >= calib_from:
                calib_x.append(math.log(eps))
                calib_y.append(accept)
            step = da.update(accept)
            if init_buf <= it < end_slow:
                window.append(u.copy())
                if window_ends and it + 1 == window_ends[0]:
                    window_ends.pop(0)
                    arr = np.asarray(window)
                    n = arr.shape[0]
                    var = arr.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
                    inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                    window = []
                    step = _find_initial_step(u, lp, gr, target, inv_mass, rng)
                    da = _DualAveraging(step, cfg.target_accept)
            if it == cfg.n_warmup - 1:
                step = _calibrated_step(calib_x, calib_y, cfg.target_accept, da.final)
        else:
            j = it - cfg.n_warmup
            if j % cfg.thin == 0:
                keep_u[k] = u
                keep_lp[k] = lp
                keep_acc[k] = accept
                keep_div[k] = div
                k += 1
    if cfg.n_warmup > 0 and warm_div == cfg.n_warmup:
        raise SamplerFailure(
            f"chain {chain}: every warmup transition diverged (final step size {step:.3g})",
            {"chain": chain, "step_size": step, "inv_mass": inv_mass.tolist(), "position": u.tolist()},
        )
    return ChainResult(keep_u, keep_lp, keep_acc, keep_div, step, inv_mass, warm_div)


def _run_chain_job(args):
    return run_chain(*args)


def sample(cfg: SamplerConfig, target, initial_points, names=None, constrain=None,
           n_workers: int = 1) -> PosteriorSamples:
    """Run ``cfg.n_chains`` independent chains from ``initial_points``.

    ``constrain`` maps unconstrained draws (last axis) to reported values.
    Chains run in a process pool when ``n_workers > 1``; results do not depend
    on the worker count.
    """
    inits = [np.asarray(x, dtype=float) for x in initial_points]
    if len(inits) != cfg.n_chains:
        raise InputError(f"need {cfg.n_chains} initial points, got {len(inits)}")
    dim = inits[0].size
    if any(x.shape != (dim,) for x in inits):
        raise InputError("initial points have inconsistent dimensions")
    jobs = [(target, inits[c], cfg, c) for c in range(cfg.n_chains)]
    if n_workers > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(n_workers, cfg.n_chains)) as ex:
            results = list(ex.map(_run_chain_job, jobs))
    else:
        results = [run_chain(*job) for job in jobs]
    unc = np.stack([r.draws for r in results])
    values = constrain(unc) if constrain is not None else unc.copy()
    out = PosteriorSamples(
        unconstrained=unc,
        values=values,
        names=list(names) if names is not None else [f"x[{i}]" for i in range(dim)],
        log_density=np.stack([r.log_density for r in results]),
        accept_stat=np.stack([r.accept_stat for r in results]),
        divergent=np.stack([r.divergent for r in results]),
        step_size=np.array([r.step_size for r in results]),
        inv_mass=np.stack([r.inv_mass for r in results]),
    )
    frac = out.divergent_fraction()
    if frac > cfg.max_divergent_fraction:
        msg = f"{100 * frac:.1f}% of post-warmup transitions diverged"
        out.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return out
