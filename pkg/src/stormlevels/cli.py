"""Command-line interface: ``stormlevels <subcommand> [options]``.

Exit codes: 0 success, 2 validation error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import MODEL_NAMES, WEIGHT_UPDATES, RunConfig, load_config
from .dependence import estimate_weights
from .diagnostics import diagnostics
from .evaluate import (DEPENDENCE_LEVELS, STUDY_MODELS, HoldoutConfig, StudyConfig,
                       coverage_study, holdout_experiment, holdout_logscore, rl_surface)
from .io import (ValidationError, config_hash, file_digest, ingest, project_lonlat, read_grid,
                 write_observations, write_stations)
from .model import PROCESSES, build_design
from .sampler import ChainOutput, SamplerConfig, run_chains, spec_dict
from .simulate import GeneratorConfig, assemble_dataset

THREADS_ENV = "STORMLEVELS_THREADS"
CHAIN_CSV = "chain.csv"
FIT_MANIFEST = "fit_manifest.json"


# ------------------------------------------------------------------- plumbing

def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o)}")


def _normalize(obj):
    """JSON-compatible copy (tuples become lists) so hashes match after a reload."""
    return json.loads(json.dumps(obj, sort_keys=True, default=_jsonable))


def build_manifest(command: str, config: dict, seed, inputs: dict | None = None) -> dict:
    """Provenance needed to re-run: config and its hash, seed, version, input digests."""
    config = _normalize(config)
    return {"command": command, "version": __version__, "seed": seed, "config": config,
            "config_hash": config_hash(config),
            "inputs": {k: {"path": str(p), "sha256": file_digest(p)}
                       for k, p in (inputs or {}).items()}}


def resolve_threads(flag, configured) -> int:
    """``--threads`` flag, else ``STORMLEVELS_THREADS``, else the config key, else 1."""
    value = flag
    if value is None and os.environ.get(THREADS_ENV, "").strip():
        raw = os.environ[THREADS_ENV].strip()
        try:
            value = int(raw)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value is None:
        value = configured if configured is not None else 1
    if value < 1:
        raise ValidationError("threads must be a positive integer")
    return value


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log(args, msg):
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr)


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {k: getattr(args, k, None) for k in (
        "stations", "observations", "coords", "model", "weights", "weight_source", "estimator",
        "cov_kind", "smoothness", "iterations", "burn_in", "thin", "seed", "chains", "output")}
    cfg.update(**overrides)
    cfg.threads = resolve_threads(args.threads, cfg.threads)
    return cfg.validate()


def _load_stations(cfg: RunConfig):
    if not cfg.stations or not cfg.observations:
        raise ValidationError("stations and observations files are required "
                              "(--stations/--observations or the [data] section)")
    return ingest(cfg.stations, cfg.observations, coords=cfg.coords)


def _fitdata(stations, terms):
    try:
        return stations.to_fitdata(terms)
    except KeyError as exc:
        raise ValidationError(f"unknown design term {exc.args[0]!r}; covariates are "
                              f"{sorted(stations.covariates)}") from None


def _designs(sites, covariates, terms) -> dict:
    try:
        return {k: build_design(sites, covariates, terms[k]) for k in PROCESSES}
    except KeyError as exc:
        raise ValidationError(f"missing covariate {exc.args[0]!r}") from None


def _load_fit(fit_dir):
    """Chain output, fit manifest and training data (input digests checked)."""
    fit_dir = Path(fit_dir)
    man_path, csv_path = fit_dir / FIT_MANIFEST, fit_dir / CHAIN_CSV
    if not man_path.exists() or not csv_path.exists():
        raise ValidationError(f"{fit_dir}: not a fit output directory "
                              f"(needs {CHAIN_CSV} and {FIT_MANIFEST})")
    out = ChainOutput.read(csv_path, man_path)
    man = out.manifest
    for name, rec in man["inputs"].items():
        if not Path(rec["path"]).exists():
            raise ValidationError(f"training {name} file {rec['path']} no longer exists")
        if file_digest(rec["path"]) != rec["sha256"]:
            raise ValidationError(f"training {name} file {rec['path']} changed since the fit")
    cfg = man["config"]
    stations = ingest(man["inputs"]["stations"]["path"], man["inputs"]["observations"]["path"],
                      coords=cfg["coords"])
    train = _fitdata(stations, cfg["terms"])
    return out, man, stations, train


def _project_like(stations, coords):
    """Put new coordinates in the planar frame used for the training stations."""
    if stations.coord_mode == "planar":
        return coords
    return project_lonlat(coords, center=np.mean(stations.coords, axis=0))


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    gen = GeneratorConfig(n_sites=args.n_sites, n_years=args.n_years, dependence=args.dependence,
                          seed=args.seed, method=args.method)
    ds = assemble_dataset(gen)
    out = _outdir(args.output or "out")
    years = np.arange(args.first_year, args.first_year + gen.n_years)
    write_stations(out / "stations.csv", ds.site_ids, ds.sites)
    write_observations(out / "observations.csv", ds.site_ids, years, ds.y)
    truth = pd.DataFrame({"site": ds.site_ids, "mu": ds.truth.mu,
                          "sigma": np.exp(ds.truth.log_sigma), "xi": ds.truth.xi,
                          "q99": ds.return_levels(0.99)})
    truth.to_csv(out / "truth.csv", index=False, float_format="%.17g")
    config = {"generator": dataclasses.asdict(gen), "first_year": args.first_year}
    man = build_manifest("simulate", config, args.seed)
    man["outputs"] = {f: file_digest(out / f)
                      for f in ("stations.csv", "observations.csv", "truth.csv")}
    _write_json(out / "simulate_manifest.json", man)
    _log(args, f"wrote {gen.n_sites} stations x {gen.n_years} years to {out}")
    return 0


def cmd_weights(args) -> int:
    cfg = _run_config(args)
    stations = _load_stations(cfg)
    try:
        est = estimate_weights(stations.y, stations.sites, mode=cfg.weight_source,
                               estimator=cfg.estimator, bandwidth=args.bandwidth)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    out = _outdir(cfg.output)
    pd.DataFrame({"site_id": stations.ids, "weight": est.weights}).to_csv(
        out / "weights.csv", index=False, float_format="%.17g")
    pd.DataFrame({"distance": est.pairs.distance, "theta_hat": est.pairs.theta}).to_csv(
        out / "theta.csv", index=False, float_format="%.17g")
    grid = np.linspace(0.0, float(est.pairs.distance.max()), 101)
    pd.DataFrame({"distance": grid, "theta_smooth": est.curve(grid)}).to_csv(
        out / "theta_curve.csv", index=False, float_format="%.17g")
    config = {**cfg.as_dict(), "bandwidth": args.bandwidth}
    man = build_manifest("weights", config, None,
                         {"stations": cfg.stations, "observations": cfg.observations})
    man["bandwidth_used"] = est.curve.bandwidth
    _write_json(out / "weights_manifest.json", man)
    _log(args, f"weights: min {est.weights.min():.3f}, median {np.median(est.weights):.3f}, "
               f"max {est.weights.max():.3f} ({len(est.pairs)} pairs)")
    return 0


def cmd_fit(args) -> int:
    cfg = _run_config(args)
    stations = _load_stations(cfg)
    data = _fitdata(stations, cfg.terms)
    spec, sampler = cfg.model_spec(), cfg.sampler_config()
    t0 = time.perf_counter()
    out = run_chains(data, spec, sampler, threads=cfg.threads)
    seconds = time.perf_counter() - t0
    dest = _outdir(cfg.output)
    man = build_manifest("fit", cfg.as_dict(), cfg.seed,
                         {"stations": cfg.stations, "observations": cfg.observations})
    man.update(out.summary_manifest())
    man.pop("timing", None)
    man["model_spec"] = _normalize(spec_dict(spec))
    out.to_frame().to_csv(dest / CHAIN_CSV, index=False, float_format="%.17g")
    _write_json(dest / FIT_MANIFEST, man)
    _write_json(dest / "fit_timing.json", {"seconds": seconds, "threads": cfg.threads,
                                           "chains": out.timing})
    _log(args, f"fit {spec.name}: {out.n_draws} draws, site acceptance "
               f"{out.acceptance.get('site_mean', float('nan')):.2f}, {seconds:.1f}s -> {dest}")
    return 0


def cmd_predict(args) -> int:
    if not 0 < args.p < 1:
        raise ValidationError("--p must lie in (0, 1)")
    if not 0 < args.prob < 1:
        raise ValidationError("--prob must lie in (0, 1)")
    out, man, stations, train = _load_fit(args.fit)
    coords, covs = read_grid(args.grid)
    sites = _project_like(stations, coords)
    designs = _designs(sites, covs, train.terms)
    seed = man["seed"] if args.seed is None else args.seed
    df = rl_surface(out, train, sites, designs, p=args.p, prob=args.prob, seed=seed)
    df["x"], df["y"] = coords[:, 0], coords[:, 1]
    dest = _outdir(args.output or args.fit)
    df.to_csv(dest / "return_levels.csv", index=False, float_format="%.17g")
    config = {"fit_config_hash": man["config_hash"], "p": args.p, "prob": args.prob}
    _write_json(dest / "predict_manifest.json",
                build_manifest("predict", config, seed,
                               {"grid": args.grid, "chain": Path(args.fit) / CHAIN_CSV}))
    _log(args, f"predicted {len(df)} grid points -> {dest / 'return_levels.csv'}")
    return 0


def _score_files(args, dest):
    if not args.holdout_stations or not args.holdout_observations:
        raise ValidationError("--holdout-stations and --holdout-observations are required "
                              "with --fit")
    frames, inputs, labels = [], {}, []
    for k, fit_dir in enumerate(args.fit):
        out, man, stations, train = _load_fit(fit_dir)
        hold = ingest(args.holdout_stations, args.holdout_observations,
                      coords=stations.coord_mode, min_stations=1)
        sites = _project_like(stations, hold.coords)
        designs = _designs(sites, hold.covariates, train.terms)
        seed = man["seed"] if args.seed is None else args.seed
        scores = holdout_logscore(hold.y, sites, designs, out, train, seed=seed,
                                  holdout_ids=hold.ids)
        label = out.model if out.model not in labels else f"{out.model}_{k}"
        labels.append(label)
        f = pd.DataFrame([dataclasses.asdict(s) for s in scores])
        f["x"], f["y"] = hold.coords[:, 0], hold.coords[:, 1]
        frames.append(f.assign(model=label))
        inputs[f"chain_{label}"] = Path(fit_dir) / CHAIN_CSV
    long = pd.concat(frames, ignore_index=True)
    wide = long.pivot_table(index=["site_id", "x", "y"], columns="model", values="log_score",
                            sort=False).reset_index()
    deg = long.pivot_table(index="site_id", columns="model", values="n_degenerate",
                           sort=False).add_prefix("degenerate_").reset_index()
    wide = wide.merge(deg, on="site_id")
    wide.columns.name = None
    inputs.update(holdout_stations=args.holdout_stations,
                  holdout_observations=args.holdout_observations)
    return wide, labels, inputs, {"seed": args.seed}


def _score_synthetic(args, threads):
    sampler = SamplerConfig(iterations=args.iterations or 20000, burn_in=args.burn_in or 2000,
                            thin=args.thin or 10)
    hcfg = HoldoutConfig(replicates=args.replicates, n_sites=args.n_sites,
                         n_years=args.n_years, holdout_fraction=args.holdout_fraction,
                         seed=args.seed if args.seed is not None else HoldoutConfig.seed,
                         sampler=sampler)
    wide = holdout_experiment(hcfg, threads)
    wide.columns.name = None
    return wide, list(hcfg.models), {}, {"holdout": dataclasses.asdict(hcfg)}


def cmd_score(args) -> int:
    threads = resolve_threads(args.threads, None)
    if bool(args.fit) == bool(args.synthetic):
        raise ValidationError("give either --fit DIR [--fit DIR ...] or --synthetic")
    dest = _outdir(args.output or "out")
    if args.fit:
        wide, labels, inputs, config = _score_files(args, dest)
    else:
        wide, labels, inputs, config = _score_synthetic(args, threads)
    wide.to_csv(dest / "scores.csv", index=False, float_format="%.17g")
    summary = {"n_sites": int(len(wide)),
               "mean_log_score": {m: float(wide[m].mean()) for m in labels},
               "degenerate_draws": {m: int(wide[f"degenerate_{m}"].sum()) for m in labels}}
    if {"weighted", "unweighted"} <= set(labels):
        summary["fraction_weighted_ge_unweighted"] = float(
            np.mean(wide["weighted"] >= wide["unweighted"]))
    _write_json(dest / "score_summary.json", summary)
    seed = config.get("holdout", {}).get("seed", args.seed)
    _write_json(dest / "score_manifest.json", build_manifest("score", config, seed, inputs))
    _log(args, json.dumps(summary, indent=2))
    return 0


def cmd_study(args) -> int:
    threads = resolve_threads(args.threads, None)
    sampler = SamplerConfig(iterations=args.iterations, burn_in=args.burn_in, thin=args.thin)
    try:
        scfg = StudyConfig(dependences=tuple(args.dependence), models=tuple(args.models),
                           n_sites=args.n_sites, n_years=args.n_years,
                           replicates=args.replicates, seed=args.seed, priors=args.priors,
                           sampler=sampler)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    t0 = time.perf_counter()
    res = coverage_study(scfg, threads)
    dest = _outdir(args.output or "out")
    res.table.to_csv(dest / "study_table.csv", index=False, float_format="%.17g")
    res.records.to_csv(dest / "study_records.csv", index=False, float_format="%.17g")
    res.failures.to_csv(dest / "study_failures.csv", index=False)
    _write_json(dest / "study_summary.json", {"cells": res.table.to_dict(orient="records")})
    _write_json(dest / "study_manifest.json", build_manifest("study", res.config, scfg.seed))
    _write_json(dest / "study_timing.json", {"seconds": time.perf_counter() - t0,
                                             "threads": threads, "job_seconds": res.seconds})
    cols = ["model", "dependence", "coverage", "coverage_se", "mse", "status"]
    _log(args, res.table[cols].to_string(index=False))
    return 0


def cmd_diagnose(args) -> int:
    out, man = _read_chain(args.fit)
    try:
        tab = diagnostics(out, prob=args.prob)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    dest = _outdir(args.output or args.fit)
    tab.to_csv(dest / "diagnostics.csv", index=False, float_format="%.17g")
    _write_json(dest / "diagnose_manifest.json",
                build_manifest("diagnose", {"fit_config_hash": man.get("config_hash"),
                                            "prob": args.prob}, None,
                               {"chain": Path(args.fit) / CHAIN_CSV}))
    varying = tab[tab.sd > 1e-12 * (1.0 + tab["mean"].abs())]
    worst = varying.nsmallest(5, "ess")[["name", "mean", "sd", "ess"]]
    _log(args, f"{out.n_draws} draws; acceptance {json.dumps(out.acceptance)}\n"
               f"lowest ESS:\n{worst.to_string(index=False)}")
    return 0


def _read_chain(fit_dir):
    fit_dir = Path(fit_dir)
    if not (fit_dir / CHAIN_CSV).exists() or not (fit_dir / FIT_MANIFEST).exists():
        raise ValidationError(f"{fit_dir}: not a fit output directory")
    out = ChainOutput.read(fit_dir / CHAIN_CSV, fit_dir / FIT_MANIFEST)
    return out, out.manifest


# --------------------------------------------------------------------- parser

def _common(p, data=True):
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--threads", type=int, help=f"worker processes (default: ${THREADS_ENV} or 1)")
    p.add_argument("--out", dest="output", help="output directory")
    p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    if data:
        p.add_argument("--stations", help="stations CSV (id,x,y,cov_*)")
        p.add_argument("--observations", help="observations CSV (id,year,value)")
        p.add_argument("--coords", choices=("planar", "lonlat"))


def _model_flags(p):
    p.add_argument("--model", choices=MODEL_NAMES)
    p.add_argument("--weights", choices=WEIGHT_UPDATES,
                   help="fixed weights or Gibbs re-estimation (weighted model)")
    p.add_argument("--weight-source", choices=("smoothed", "raw"))
    p.add_argument("--estimator", choices=("naive", "madogram"))
    p.add_argument("--cov-kind", choices=("powered_exponential", "matern"))
    p.add_argument("--smoothness", type=float)


def _sampler_flags(p, defaults=False):
    p.add_argument("--iters", dest="iterations", type=int, default=20000 if defaults else None)
    p.add_argument("--burn-in", type=int, default=2000 if defaults else None)
    p.add_argument("--thin", type=int, default=10 if defaults else None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stormlevels", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a synthetic station network")
    _common(p, data=False)
    p.add_argument("--n-sites", type=int, default=50)
    p.add_argument("--n-years", type=int, default=50)
    p.add_argument("--dependence", choices=DEPENDENCE_LEVELS, default="moderate")
    p.add_argument("--method", choices=("exact", "approx_spectral"), default="exact")
    p.add_argument("--first-year", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("weights", help="estimate extremal coefficients and likelihood weights")
    _common(p)
    p.add_argument("--weight-source", choices=("smoothed", "raw"))
    p.add_argument("--estimator", choices=("naive", "madogram"))
    p.add_argument("--bandwidth", type=float, help="smoother bandwidth (default 0.2 x max distance)")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("fit", help="run the MCMC sampler")
    _common(p)
    _model_flags(p)
    _sampler_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--chains", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="return-level surface on a grid")
    _common(p, data=False)
    p.add_argument("--fit", required=True, help="fit output directory")
    p.add_argument("--grid", required=True, help="grid CSV (x,y[,cov_*])")
    p.add_argument("--p", type=float, default=0.99, help="non-exceedance probability")
    p.add_argument("--prob", type=float, default=0.95, help="HPD interval probability")
    p.add_argument("--seed", type=int, help="kriging seed (default: the fit seed)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="holdout log-scores")
    _common(p, data=False)
    p.add_argument("--fit", action="append", help="fit output directory (repeatable)")
    p.add_argument("--holdout-stations")
    p.add_argument("--holdout-observations")
    p.add_argument("--synthetic", action="store_true",
                   help="run the synthetic weighted vs unweighted holdout experiment")
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--n-sites", type=int, default=50)
    p.add_argument("--n-years", type=int, default=50)
    p.add_argument("--holdout-fraction", type=float, default=0.1)
    _sampler_flags(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("study", help="simulation study of return-level coverage and MSE")
    _common(p, data=False)
    p.add_argument("--dependence", nargs="+", choices=DEPENDENCE_LEVELS,
                   default=list(DEPENDENCE_LEVELS))
    p.add_argument("--models", nargs="+", choices=STUDY_MODELS, default=list(STUDY_MODELS))
    p.add_argument("--n-sites", type=int, default=30)
    p.add_argument("--n-years", type=int, default=50)
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--priors", choices=("truth", "variogram"), default="truth")
    _sampler_flags(p, defaults=True)
    p.add_argument("--seed", type=int, default=StudyConfig.seed)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("diagnose", help="MCMC diagnostics for a fit")
    _common(p, data=False)
    p.add_argument("--fit", required=True, help="fit output directory")
    p.add_argument("--prob", type=float, default=0.95)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # argparse usage errors exit 2
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:           # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
