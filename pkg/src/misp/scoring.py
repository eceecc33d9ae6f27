"""Predictive scores and grouped cross-validation.

CRPS uses the empirical predictive distribution of the draws. The pairwise
term is evaluated from the sorted draws, since for sorted ``x_(1..M)``

    sum_{m,m'} |x_m - x_m'| = 2 * sum_i (2i - M - 1) x_(i)

which costs ``O(M log M)`` instead of ``O(M^2)``.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, PlanError
from .inference.fitting import fit
from .inference.hmc import SamplerConfig
from .model import Dataset, ModelConfig
from .predict import PredictionMode, predict_targets
from .rng import child_rng

log = logging.getLogger(__name__)


def crps_empirical(draws, truth):
    """Empirical CRPS of ``draws`` against ``truth``.

    ``draws`` may be 1-D (one predictive) or ``(M, P)`` with ``truth`` of
    length ``P``, in which case one score per column is returned.
    """
    x = np.asarray(draws, dtype=float)
    if x.size == 0 or x.shape[0] == 0:
        raise InputError("CRPS needs at least one draw")
    if x.ndim == 1:
        return float(crps_empirical(x[:, None], np.atleast_1d(truth))[0])
    y = np.asarray(truth, dtype=float).reshape(-1)
    if y.shape[0] != x.shape[1]:
        raise InputError(f"{x.shape[1]} predictive columns but {y.shape[0]} truths")
    M = x.shape[0]
    first = np.abs(x - y[None, :]).mean(axis=0)
    xs = np.sort(x, axis=0)
    coef = 2.0 * np.arange(1, M + 1) - M - 1
    second = (coef @ xs) / (M * M)
    return np.maximum(first - second, 0.0)


@dataclass
class HoldoutPrediction:
    """Predictive draws for every held-out measurement of one core.

    ``draws`` has shape ``(M, len(depths))``.
    """

    site_id: str
    replicate: str
    depths: np.ndarray
    truths: np.ndarray
    draws: np.ndarray
    x_max: float | None = None
    n: int | None = None

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=float)
        self.truths = np.asarray(self.truths, dtype=float)
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 2 or self.draws.shape[1] != self.truths.size:
            raise InputError("draws must be shaped (M, n_depths)")
        if np.any(self.truths <= 0):
            raise InputError("held-out truths must be positive")

    def crps(self) -> np.ndarray:
        if self.draws.shape[0] < 2:
            raise InputError("CRPS needs at least two draws per holdout")
        return crps_empirical(self.draws, self.truths)


def integrated_errors(holdouts) -> tuple:
    """Core-length weighted ``(ISE, IAE)`` of posterior-predictive means."""
    ise = iae = 0.0
    for h in holdouts:
        if h.x_max is None or h.n is None or h.n <= 0:
            raise InputError(f"core {h.site_id}/{h.replicate} lacks x_max or n")
        err = h.draws.mean(axis=0) - h.truths
        w = h.x_max / h.n
        ise += w * float(np.sum(err**2))
        iae += w * float(np.sum(np.abs(err)))
    return ise, iae


def relative_crps(totals):
    """Each total divided by the smallest; accepts a mapping or a sequence."""
    if isinstance(totals, dict):
        keys, vals = list(totals), np.array(list(totals.values()), dtype=float)
    else:
        keys, vals = None, np.asarray(totals, dtype=float).reshape(-1)
    if vals.size == 0:
        raise InputError("no CRPS totals given")
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
        raise InputError("CRPS totals must be positive and finite")
    ratios = vals / vals.min()
    if keys is None:
        return ratios
    return dict(zip(keys, ratios.tolist()))


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CvPlan:
    """Assignment of every core to a fold; cores in one fold are held out together."""

    n_folds: int = 19
    assignment: list = field(default_factory=list)

    def folds(self):
        return [[i for i, f in enumerate(self.assignment) if f == k] for k in range(self.n_folds)]

    def validate(self, n_cores: int) -> None:
        if len(self.assignment) != n_cores:
            raise PlanError(f"plan covers {len(self.assignment)} cores, data has {n_cores}")
        for k, held in enumerate(self.folds()):
            if not held:
                raise PlanError(f"fold {k} holds out no cores")
            if len(held) == n_cores:
                raise PlanError(f"fold {k} leaves zero training cores")


def make_plan(data: Dataset, n_folds: int = 19, seed: int = 0) -> CvPlan:
    """Seeded random split into near-equal folds; cores at one site stay together."""
    n_folds = int(n_folds)
    if n_folds < 2:
        raise PlanError("need at least two folds")
    if n_folds > data.n_cores:
        raise PlanError(f"n_folds = {n_folds} exceeds the number of cores ({data.n_cores})")
    units = sorted(set(data.site_of_core))
    if n_folds > len(units):
        raise PlanError(f"n_folds = {n_folds} exceeds the number of distinct sites ({len(units)}); "
                        "replicate cores must share a fold")
    order = child_rng(seed, "cv-plan").permutation(len(units))
    unit_fold = {units[u]: k % n_folds for k, u in enumerate(order)}
    plan = CvPlan(n_folds, [unit_fold[s] for s in data.site_of_core])
    plan.validate(data.n_cores)
    return plan


def _run_fold(args):
    data, cfg, sampler, campaigns, held, k, seed = args
    train_idx = [i for i in range(data.n_cores) if i not in set(held)]
    train = data.subset(train_idx)
    fold_sampler = SamplerConfig(**{**sampler.__dict__, "seed": int(child_rng(sampler.seed, "cv-fold", k).integers(2**31))})
    samples = fit(cfg, train, fold_sampler, campaigns=campaigns)
    cores = [data.cores[i] for i in held]
    targets = [c.location for c in cores]
    contexts = [(c.campaign, c.n, c.x_max) for c in cores]
    draws = predict_targets(samples, targets, [c.depths for c in cores], PredictionMode.NOISY_MEASUREMENT,
                            contexts, seed=int(child_rng(seed, "cv-predict", k).integers(2**31)))
    return [HoldoutPrediction(c.site_id, c.replicate, c.depths, c.densities, d, c.x_max, c.n)
            for c, d in zip(cores, draws)]


CV_COLUMNS = ["model_label", "ISE", "IAE", "CRPS", "relative_CRPS"]


def run_cv(data: Dataset, cfg, sampler: SamplerConfig, plan: CvPlan, label: str = "model",
           seed: int = 0, n_workers: int = 1) -> list:
    """Grouped k-fold cross-validation.

    ``cfg`` is one :class:`ModelConfig` (reported under ``label``) or a mapping
    ``label -> ModelConfig``; every model sees the same folds. Returns one row
    per model with summed CRPS over all held-out measurements.
    """
    configs = cfg if isinstance(cfg, dict) else {label: cfg}
    plan.validate(data.n_cores)
    folds = plan.folds()
    campaigns = data.campaigns
    totals = {}
    for name, mc in configs.items():
        jobs = [(data, mc, sampler, campaigns, held, k, seed) for k, held in enumerate(folds)]
        if n_workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as ex:
                results = list(ex.map(_run_fold, jobs))
        else:
            results = [_run_fold(j) for j in jobs]
        holdouts = [h for fold in results for h in fold]
        crps = float(sum(h.crps().sum() for h in holdouts))
        ise, iae = integrated_errors(holdouts)
        totals[name] = (ise, iae, crps)
        log.info("cv %s: ISE=%.4g IAE=%.4g CRPS=%.4g", name, ise, iae, crps)
    rel = relative_crps({k: v[2] for k, v in totals.items()})
    return [{"model_label": k, "ISE": v[0], "IAE": v[1], "CRPS": v[2], "relative_CRPS": rel[k]}
            for k, v in totals.items()]


def write_cv_report(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CV_COLUMNS)
        for r in rows:
            w.writerow([r["model_label"]] + [f"{r[c]:.10g}" for c in CV_COLUMNS[1:]])
