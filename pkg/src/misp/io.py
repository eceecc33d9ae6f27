"""Measurement, sample and truth CSV files.

Every writer emits floats with 10 significant digits; the readers accept
what the writers produce, so files round-trip unchanged.
"""

from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import InputError, ValidationError
from .geodesy import SiteLocation
from .inference.hmc import PosteriorSamples
from .model import (
    RHO_ICE,
    CoreRecord,
    Dataset,
    ParameterState,
    parameter_names,
    state_to_vector,
    vector_to_state,
)

log = logging.getLogger(__name__)

MEASUREMENT_COLUMNS = ["site_id", "lat", "lon", "campaign", "core_rep", "depth_m", "density_g_cm3"]


def fmt(x) -> str:
    return f"{float(x):.10g}"


def _float(value, row, col):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"row {row}: column {col!r} is not a number: {value!r}") from None


def ingest(path, tolerance_km: float = 0.0, rho_ice: float = RHO_ICE) -> Dataset:
    """Read a measurement CSV into a :class:`Dataset`.

    Rows sharing ``(site_id, core_rep)`` form one core; ``n`` and ``x_max``
    are its row count and deepest depth. Row numbers in error messages count
    the header as row 1.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"measurement file not found: {path}")
    groups: "OrderedDict[tuple, dict]" = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MEASUREMENT_COLUMNS:
            raise ValidationError(f"{path}: header must be exactly {','.join(MEASUREMENT_COLUMNS)}, got {header}")
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MEASUREMENT_COLUMNS):
                raise ValidationError(f"row {row_no}: expected {len(MEASUREMENT_COLUMNS)} fields, got {len(row)}")
            site_id, lat, lon, campaign, rep, depth, dens = (c.strip() for c in row)
            lat, lon = _float(lat, row_no, "lat"), _float(lon, row_no, "lon")
            depth, dens = _float(depth, row_no, "depth_m"), _float(dens, row_no, "density_g_cm3")
            if not site_id:
                raise ValidationError(f"row {row_no}: empty site_id")
            if not (depth >= 0 and np.isfinite(depth)):
                raise ValidationError(f"row {row_no}: depth_m = {depth} must be >= 0")
            if not 0.0 < dens < rho_ice:
                raise ValidationError(f"row {row_no}: density_g_cm3 = {dens} outside (0, {rho_ice})")
            try:
                loc = SiteLocation(lat, lon)
            except InputError as exc:
                raise ValidationError(f"row {row_no}: {exc}") from None
            key = (site_id, rep)
            g = groups.setdefault(key, {"loc": loc, "campaign": campaign, "depths": {}})
            if g["loc"] != loc:
                raise ValidationError(f"row {row_no}: core {site_id}/{rep} changes coordinates")
            if g["campaign"] != campaign:
                raise ValidationError(f"row {row_no}: core {site_id}/{rep} changes campaign")
            if depth in g["depths"]:
                raise ValidationError(f"row {row_no}: duplicate measurement for site {site_id}, "
                                      f"core {rep}, depth {depth}")
            g["depths"][depth] = dens
    if not groups:
        raise ValidationError(f"{path}: no measurements")
    cores = []
    for (site_id, rep), g in groups.items():
        d = np.array(sorted(g["depths"]))
        y = np.array([g["depths"][k] for k in d])
        try:
            cores.append(CoreRecord(site_id, g["loc"], g["campaign"], d, y, replicate=rep))
        except ValidationError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    data = Dataset.from_cores(cores, tolerance_km=tolerance_km)
    log.info("ingested %s: %s", path, data.summary())
    return data


def write_dataset_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MEASUREMENT_COLUMNS)
        for c in data.cores:
            for x, y in zip(c.depths, c.densities):
                w.writerow([c.site_id, fmt(c.location.latitude), fmt(c.location.longitude),
                            c.campaign, c.replicate, fmt(x), fmt(y)])


def write_truth_csv(state: ParameterState, site_ids, path) -> None:
    names = parameter_names(state.n_basis, state.campaigns, site_ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "value"])
        for n, v in zip(names, state_to_vector(state)):
            w.writerow([n, fmt(v)])


def read_truth_csv(path) -> dict:
    with open(path, newline="") as fh:
        return {r["parameter"]: float(r["value"]) for r in csv.DictReader(fh)}


def read_truth_state(path, n_basis: int) -> ParameterState:
    """Rebuild the :class:`ParameterState` written by :func:`write_truth_csv`."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"truth file not found: {path}")
    vals = read_truth_csv(path)
    names = list(vals)
    campaigns = [n[5:-1] for n in names if n.startswith("tau2[")]
    site_ids = [n[6:-1] for n in names if n.startswith("alpha[")]
    if names != parameter_names(n_basis, campaigns, site_ids):
        raise ValidationError(f"{path}: parameters do not match a model with {n_basis} basis functions")
    return vector_to_state(np.array(list(vals.values())), n_basis, campaigns, len(site_ids))


SAMPLE_META = ["chain", "draw", "lp__", "accept_stat__", "divergent__"]


def write_samples_csv(samples: PosteriorSamples, path) -> None:
    """Wide format: one row per retained draw, constrained parameter values."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SAMPLE_META + list(samples.names))
        for c in range(samples.n_chains):
            for i in range(samples.n_keep):
                w.writerow([c, i, fmt(samples.log_density[c, i]), fmt(samples.accept_stat[c, i]),
                            int(samples.divergent[c, i])] + [fmt(v) for v in samples.values[c, i]])


def read_samples_csv(path) -> PosteriorSamples:
    """Inverse of :func:`write_samples_csv`. Unconstrained draws are not stored."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"samples file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[: len(SAMPLE_META)] != SAMPLE_META:
            raise ValidationError(f"{path}: not a samples file (header {header[:5]})")
        rows = [r for r in reader if r]
    arr = np.array([[float(v) for v in r] for r in rows])
    chains = arr[:, 0].astype(int)
    n_chains = chains.max() + 1
    n_keep = int(np.sum(chains == 0))
    if arr.shape[0] != n_chains * n_keep:
        raise ValidationError(f"{path}: chains have unequal lengths")
    shape = (n_chains, n_keep)
    return PosteriorSamples(
        unconstrained=None,
        values=arr[:, len(SAMPLE_META):].reshape(shape + (-1,)),
        names=header[len(SAMPLE_META):],
        log_density=arr[:, 2].reshape(shape),
        accept_stat=arr[:, 3].reshape(shape),
        divergent=arr[:, 4].reshape(shape).astype(bool),
        step_size=np.full(n_chains, np.nan),
        inv_mass=np.empty((n_chains, 0)),
    )


def write_summary_csv(rows, path) -> None:
    cols = ["parameter", "mean", "sd", "q025", "q975", "rhat", "ess"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r["parameter"]] + ["NA" if r[c] is None else fmt(r[c]) for c in cols[1:]])


def write_trace_csv(samples: PosteriorSamples, path) -> None:
    """Long format ``chain, draw, parameter, value`` for trace plots."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "draw", "parameter", "value"])
        for k, name in enumerate(samples.names):
            for c in range(samples.n_chains):
                for i in range(samples.n_keep):
                    w.writerow([c, i, name, fmt(samples.values[c, i, k])])


def read_targets_csv(path):
    """``site_label, lat, lon`` rows to ``(labels, locations)``."""
    labels, locs = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"site_label", "lat", "lon"}:
            raise ValidationError(f"{path}: header must be site_label,lat,lon")
        for row_no, r in enumerate(reader, start=2):
            labels.append(r["site_label"])
            try:
                locs.append(SiteLocation(_float(r["lat"], row_no, "lat"), _float(r["lon"], row_no, "lon")))
            except InputError as exc:
                raise ValidationError(f"row {row_no}: {exc}") from None
    return labels, locs
