"""TOML run configuration.

Sections mirror the library objects::

    [model]       rho_ice, variance_mode, data_model, jitter
    [basis]       family, interior_knots, order, x_min, x_max,
                  centers, bandwidth, asymmetry
    [covariance]  distance, smoothness
    [priors]      any PriorSpec field
    [sampler]     any SamplerConfig field
    [cv]          n_folds, seed, label
    [predict]     depths | depth_min, depth_max, depth_step; mode, thin,
                  seed, targets, campaign, n, x_max
    [simulate]    n_sites, cores_per_site, n_depths, depth_min, core_lengths,
                  campaigns, region_center_km, region_size_km; sites (CSV of
                  site_label, lat, lon) and truth (a truth CSV) replace the
                  random layout and the prior draw; prior_draws > 0 also
                  writes both prior-predictive panels

Every key is optional; omitted keys take the final-model defaults. Unknown
sections or keys raise :class:`ConfigurationError` before any computation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .basis import KernelFamily, KernelSpec, KnotConfig
from .errors import ConfigurationError, InputError
from .geodesy import CovarianceSpec
from .inference.hmc import SamplerConfig
from .model import ModelConfig, PriorSpec

_BASIS_KEYS = {"family", "interior_knots", "order", "x_min", "x_max", "centers", "bandwidth", "asymmetry"}
_CV_KEYS = {"n_folds", "seed", "label"}
_PREDICT_KEYS = {"depths", "depth_min", "depth_max", "depth_step", "mode", "thin", "seed", "targets",
                 "campaign", "n", "x_max"}
_SIMULATE_KEYS = {"n_sites", "cores_per_site", "n_depths", "depth_min", "core_lengths", "campaigns",
                  "region_center_km", "region_size_km", "sites", "truth", "prior_draws"}


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


_SECTIONS = {
    "model": {"rho_ice", "variance_mode", "data_model", "jitter"},
    "basis": _BASIS_KEYS,
    "covariance": {"distance", "smoothness"},
    "priors": _fields(PriorSpec),
    "sampler": _fields(SamplerConfig),
    "cv": _CV_KEYS,
    "predict": _PREDICT_KEYS,
    "simulate": _SIMULATE_KEYS,
}


@dataclass
class CvSettings:
    n_folds: int = 19
    seed: int = 0
    label: str = "model"


@dataclass
class PredictSettings:
    depths: list | None = None
    depth_min: float | None = None
    depth_max: float | None = None
    depth_step: float = 1.0
    mode: str = "mean_curve"
    thin: int = 1
    seed: int = 0
    targets: str | None = None
    campaign: str | None = None
    n: int | None = None
    x_max: float | None = None

    def grid(self, basis) -> np.ndarray:
        if self.depths is not None:
            return np.asarray(self.depths, dtype=float)
        lo = basis.x_min if self.depth_min is None else self.depth_min
        hi = basis.x_max if self.depth_max is None else self.depth_max
        if not self.depth_step > 0:
            raise ConfigurationError("predict.depth_step must be positive")
        n = int(np.floor((hi - lo) / self.depth_step + 1e-9)) + 1
        return lo + self.depth_step * np.arange(n)


@dataclass
class SimulateSettings:
    n_sites: int = 5
    cores_per_site: int = 1
    n_depths: int = 30
    depth_min: float = 0.5
    core_lengths: float | list = 100.0
    campaigns: list = field(default_factory=lambda: ["A", "B"])
    region_center_km: list = field(default_factory=lambda: [-600.0, 0.0])
    region_size_km: float = 1500.0
    sites: str | None = None
    truth: str | None = None
    prior_draws: int = 0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    cv: CvSettings = field(default_factory=CvSettings)
    predict: PredictSettings = field(default_factory=PredictSettings)
    simulate: SimulateSettings = field(default_factory=SimulateSettings)
    raw: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        """Fully resolved settings as plain JSON-able values."""
        def conv(obj):
            if dataclasses.is_dataclass(obj):
                d = {f.name: conv(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
                d["__type__"] = type(obj).__name__
                return d
            if isinstance(obj, (list, tuple)):
                return [conv(x) for x in obj]
            if hasattr(obj, "value"):
                return obj.value
            if isinstance(obj, np.generic):
                return obj.item()
            return obj
        return {
            "model": conv(self.model),
            "sampler": conv(self.sampler),
            "cv": conv(self.cv),
            "predict": conv(self.predict),
            "simulate": conv(self.simulate),
        }

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _build_basis(sec: dict):
    family = KernelFamily(sec.get("family", "mspline"))
    if family is KernelFamily.MSPLINE:
        extra = {"centers", "bandwidth", "asymmetry"} & set(sec)
        if extra:
            raise ConfigurationError(f"[basis] keys {sorted(extra)} do not apply to the M-spline family")
        kw = {k: sec[k] for k in ("interior_knots", "order", "x_min", "x_max") if k in sec}
        if "interior_knots" in kw:
            kw["interior_knots"] = tuple(kw["interior_knots"])
        return KnotConfig(**kw)
    if {"interior_knots", "order"} & set(sec):
        raise ConfigurationError("[basis] interior_knots/order apply to the M-spline family only; use centers")
    kw = {k: sec[k] for k in ("centers", "bandwidth", "asymmetry", "x_min", "x_max") if k in sec}
    if "centers" in kw:
        kw["centers"] = tuple(kw["centers"])
    return KernelSpec(family=family, **kw)


def from_dict(doc: dict) -> RunConfig:
    for name, sec in doc.items():
        if name not in _SECTIONS:
            raise ConfigurationError(f"unknown config section [{name}]")
        if not isinstance(sec, dict):
            raise ConfigurationError(f"[{name}] must be a table")
        unknown = set(sec) - _SECTIONS[name]
        if unknown:
            raise ConfigurationError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    try:
        basis = _build_basis(doc.get("basis", {}))
        cov = CovarianceSpec(**doc.get("covariance", {}))
        priors = PriorSpec(**doc.get("priors", {}))
        model = ModelConfig(basis=basis, covariance=cov, priors=priors, **doc.get("model", {}))
        sampler = SamplerConfig(**doc.get("sampler", {}))
        cv = CvSettings(**doc.get("cv", {}))
        pred = PredictSettings(**doc.get("predict", {}))
        sim = SimulateSettings(**doc.get("simulate", {}))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from None
    return RunConfig(model, sampler, cv, pred, sim, raw=doc)


def load_config(path=None) -> RunConfig:
    """Parse and validate a TOML file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    try:
        doc = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return from_dict(doc)
