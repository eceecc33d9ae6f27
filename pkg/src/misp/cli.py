"""Command-line entry point: ``misp {fit,predict,cv,simulate,diagnose}``.

Failures exit nonzero and print one ``error category=<name>: <message>``
line to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import InputError, MispError, ValidationError
from .inference.diagnostics import summarize
from .inference.fitting import fit
from .inference.hmc import PosteriorSamples
from .io import (
    ingest,
    read_samples_csv,
    read_targets_csv,
    read_truth_state,
    write_dataset_csv,
    write_samples_csv,
    write_summary_csv,
    write_trace_csv,
    write_truth_csv,
)
from .model import SnowModel
from .predict import PredictionMode, PredictionRequest, predict_curves, write_curves_csv
from .scoring import make_plan, run_cv, write_cv_report
from .simulate import SimulationSpec, generate_dataset, write_prior_curves_csv

log = logging.getLogger("misp")

EXIT_CODES = {
    "configuration": 3,
    "input": 4,
    "validation": 4,
    "domain": 5,
    "plan": 6,
    "numerical": 7,
    "sampler": 7,
}


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("MISP_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise InputError(f"MISP_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise InputError("thread count must be >= 1")
    return n


def _apply_seed(cfg: RunConfig, seed):
    if seed is not None:
        cfg.sampler.seed = seed
        cfg.predict.seed = seed
        cfg.cv.seed = seed
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _versions() -> dict:
    import numba
    import scipy

    return {"misp": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _load_data(args):
    if not args.data:
        raise InputError("--data is required for this command")
    data = ingest(args.data)
    print(data.summary())
    return data


def _attach(samples: PosteriorSamples, cfg: RunConfig, data) -> PosteriorSamples:
    """Restore fit metadata for samples read back from CSV."""
    model = SnowModel(cfg.model, data)
    if list(samples.names) != list(model.names):
        raise ValidationError("samples do not match the dataset and configuration "
                              f"({len(samples.names)} columns vs {len(model.names)} parameters)")
    samples.meta.update(n_basis=model.J, campaigns=list(model.campaigns), site_ids=list(data.site_ids),
                        sites=list(data.sites), config=cfg.model)
    return samples


def _samples_path(args) -> Path:
    return Path(args.samples) if args.samples else Path(args.out) / "samples.csv"


def cmd_fit(cfg: RunConfig, args) -> int:
    data = _load_data(args)
    out = _out(args)
    samples = fit(cfg.model, data, cfg.sampler, n_workers=_threads(args))
    write_samples_csv(samples, out / "samples.csv")
    write_summary_csv(summarize(samples.values, samples.names), out / "summary.csv")
    manifest = {
        "command": "fit",
        "config_hash": cfg.hash(),
        "config": cfg.canonical(),
        "seed": cfg.sampler.seed,
        "data": str(Path(args.data).resolve()),
        "data_summary": data.summary(),
        "versions": _versions(),
        "acceptance_rate": samples.acceptance_rate(),
        "divergent_fraction": samples.divergent_fraction(),
        "step_size": samples.step_size.tolist(),
        "warnings": samples.warnings,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for w in samples.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    data = _load_data(args)
    out = _out(args)
    samples = _attach(read_samples_csv(_samples_path(args)), cfg, data)
    p = cfg.predict
    depths = p.grid(cfg.model.basis)
    if p.targets:
        labels, targets = read_targets_csv(p.targets)
    else:
        labels, targets = list(data.site_ids), list(data.sites)
    req = PredictionRequest(targets, depths, PredictionMode(p.mode), labels=labels, campaign=p.campaign,
                            n=p.n, x_max=p.x_max, thin=p.thin, seed=p.seed)
    write_curves_csv(predict_curves(samples, req, data), out / "curves.csv")
    return 0


def cmd_cv(cfgs, args) -> int:
    data = _load_data(args)
    out = _out(args)
    base = cfgs[0]
    plan = make_plan(data, base.cv.n_folds, base.cv.seed)
    models = {}
    for i, (c, path) in enumerate(zip(cfgs, args.config or [None])):
        label = c.cv.label
        if label in models:
            label = f"{label}_{i}" if path is None else Path(path).stem
        models[label] = c.model
    rows = run_cv(data, models, base.sampler, plan, seed=base.cv.seed, n_workers=_threads(args))
    write_cv_report(rows, out / "cv_report.csv")
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = _out(args)
    s = cfg.simulate
    sites = read_targets_csv(s.sites)[1] if s.sites else None
    truth = None
    if s.truth:
        truth = read_truth_state(s.truth, cfg.model.n_basis)
        if sites is None:
            raise InputError("[simulate] truth needs an explicit sites file")
        if truth.campaigns != list(s.campaigns):
            raise InputError(f"[simulate] campaigns {list(s.campaigns)} differ from the truth's {truth.campaigns}")
    spec = SimulationSpec(n_sites=s.n_sites, sites=sites, truth=truth, cores_per_site=s.cores_per_site,
                          n_depths=s.n_depths, depth_min=s.depth_min, core_lengths=s.core_lengths, campaigns=list(s.campaigns),
                          seed=cfg.sampler.seed, region_center_km=tuple(s.region_center_km),
                          region_size_km=s.region_size_km)
    data, truth = generate_dataset(spec, cfg.model)
    write_dataset_csv(data, out / "data.csv")
    write_truth_csv(truth, data.site_ids, out / "truth.csv")
    if s.prior_draws > 0:
        write_prior_curves_csv(cfg.model, cfg.predict.grid(cfg.model.basis), out / "prior_curves.csv",
                               n_draws=s.prior_draws, seed=cfg.sampler.seed)
    print(data.summary())
    return 0


def cmd_diagnose(cfg: RunConfig, args) -> int:
    out = _out(args)
    samples = read_samples_csv(_samples_path(args))
    rows = summarize(samples.values, samples.names)
    write_summary_csv(rows, out / "diagnostics.csv")
    write_trace_csv(samples, out / "trace.csv")
    rhats = [r["rhat"] for r in rows if r["rhat"] is not None]
    if rhats:
        print(f"max R-hat {max(rhats):.4f} over {len(rhats)} parameters")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="misp", description="Spatial monotone snow-density curves")
    parser.add_argument("--version", action="version", version=f"misp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_multiple=False):
        if config_multiple:
            p.add_argument("--config", action="append",
                           help="TOML run config; repeat to compare several models")
        else:
            p.add_argument("--config", help="TOML run config (defaults: final model)")
        p.add_argument("--data", help="measurement CSV")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("--threads", type=int, help="worker cap (falls back to $MISP_THREADS, then 1)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("fit", help="sample the posterior"))
    p = common(sub.add_parser("predict", help="posterior curves at targets or fitted sites"))
    p.add_argument("--samples", help="samples.csv from fit (default: OUT/samples.csv)")
    common(sub.add_parser("cv", help="grouped k-fold cross-validation"), config_multiple=True)
    common(sub.add_parser("simulate", help="synthetic dataset from a prior draw"))
    p = common(sub.add_parser("diagnose", help="R-hat / ESS table and trace CSV"))
    p.add_argument("--samples", help="samples.csv from fit (default: OUT/samples.csv)")
    return parser


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "cv":
            cfgs = [_apply_seed(load_config(p), args.seed) for p in (args.config or [None])]
            return cmd_cv(cfgs, args)
        cfg = _apply_seed(load_config(args.config), args.seed)
        return COMMANDS[args.command](cfg, args)
    except MispError as exc:
        print(f"error category={exc.category}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)


if __name__ == "__main__":
    sys.exit(main())
