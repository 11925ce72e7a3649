"""Command-line entry points.

    sensibound generate-prior   sample DGPs, emit dataset/queries files
    sensibound label            emit frontier_points files (msm-analytic | kl-sweep)
    sensibound ablate-warmstart warm/cold/reference study with report output
    sensibound verify           run a module invariant suite

Every command is deterministic given --seed (env SENSIBOUND_SEED supplies
the default).  Exit codes: 0 success, 1 verification/run failure, 2 usage
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import datastore, verify as verify_mod
from .ablation import ablation_configs, run_ablation, write_report
from .flow import LatentSampler, SplineSpec
from .frontier import LambdaGrid, SweepConfig, build_problem, sweep_queries
from .gtsm import GtsmSpec, F_KL
from .oracles import msm_bounds_from_draws
from .prior import PriorConfig, sample_dataset, sample_queries, sample_scm
from .seeds import derive_key, derive_rng

_PRIOR_FIELDS = ("d_x", "n_obs", "hidden_widths", "activation", "weight_scale",
                 "propensity_clip", "noise_scale_range", "normalize_eps",
                 "pilot_size")


def _default_seed() -> int:
    return int(os.environ.get("SENSIBOUND_SEED", "0"))


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive count, got {value}")
    return value


def load_prior_config(path) -> dict:
    """Parse a flat key = value config file into PriorConfig overrides."""
    overrides = {}
    for lineno, raw in enumerate(open(path), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PRIOR_FIELDS:
            raise ValueError(f"{path}:{lineno}: unknown prior option {key!r}")
        if key == "activation":
            overrides[key] = value
        elif key in ("d_x", "n_obs", "pilot_size"):
            overrides[key] = int(value)
        elif key in ("weight_scale", "normalize_eps"):
            overrides[key] = float(value)
        else:
            overrides[key] = tuple(float(tok) for tok in value.split(","))
    if "hidden_widths" in overrides:
        overrides["hidden_widths"] = tuple(int(v) for v in overrides["hidden_widths"])
    return overrides


def _build_prior(args) -> PriorConfig:
    overrides = load_prior_config(args.config) if args.config else {}
    if getattr(args, "d_x", None) is not None:
        overrides["d_x"] = args.d_x
    if getattr(args, "n_obs", None) is not None:
        overrides["n_obs"] = args.n_obs
    return PriorConfig(**overrides)


def _run_tasks(fn, tasks, workers: int):
    if workers <= 1:
        yield from map(fn, tasks)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(fn, tasks)


# ---------------------------------------------------------------------------
# generate-prior
# ---------------------------------------------------------------------------

def _generate_one(args_tuple):
    master_seed, dgp_id, prior, n_queries, out_dir, overwrite = args_tuple
    scm = sample_scm(prior, derive_key(master_seed, "dgp", dgp_id))
    ds = sample_dataset(scm, prior.n_obs, master_seed)
    queries = sample_queries(scm, ds, n_queries, master_seed)
    datastore.emit_dataset(out_dir, dgp_id, ds, overwrite=overwrite)
    datastore.emit_queries(out_dir, dgp_id, queries, overwrite=overwrite)
    return dgp_id


def cmd_generate_prior(args) -> int:
    prior = _build_prior(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "master_seed": args.seed,
        "n_dgps": args.n_dgps,
        "n_queries": args.n_queries,
        "prior": {
            "d_x": prior.d_x, "n_obs": prior.n_obs,
            "hidden_widths": list(prior.hidden_widths),
            "activation": prior.activation,
            "weight_scale": prior.weight_scale,
            "propensity_clip": list(prior.propensity_clip),
            "noise_scale_range": list(prior.noise_scale_range),
            "normalize_eps": prior.normalize_eps,
            "pilot_size": prior.pilot_size,
        },
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    tasks = [(args.seed, i, prior, args.n_queries, out_dir, args.overwrite)
             for i in range(args.n_dgps)]
    for dgp_id in _run_tasks(_generate_one, tasks, args.workers):
        print(f"generated dgp {dgp_id}")
    return 0


def _load_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(
            f"missing {path}; run generate-prior into this directory first")
    manifest = json.loads(path.read_text())
    prior_kwargs = dict(manifest["prior"])
    prior_kwargs["hidden_widths"] = tuple(prior_kwargs["hidden_widths"])
    prior_kwargs["propensity_clip"] = tuple(prior_kwargs["propensity_clip"])
    prior_kwargs["noise_scale_range"] = tuple(prior_kwargs["noise_scale_range"])
    manifest["prior_config"] = PriorConfig(**prior_kwargs)
    return manifest


# ---------------------------------------------------------------------------
# label
# ---------------------------------------------------------------------------

def _label_one(args_tuple):
    (model, master_seed, dgp_id, prior, data_dir, out_dir, overwrite,
     grid_kwargs, sweep_kwargs) = args_tuple
    scm = sample_scm(prior, derive_key(master_seed, "dgp", dgp_id))
    queries = datastore.load_queries(datastore.queries_path(data_dir, dgp_id))
    sampler = LatentSampler("sobol", derive_key(master_seed, "sampler", dgp_id))
    records = []
    if model == "msm-analytic":
        # per-DGP randomized log-uniform Γ grid, one shared draw bank
        rng = derive_rng(master_seed, "gamma-grid", dgp_id)
        gammas = np.sort(np.exp(rng.uniform(
            np.log(grid_kwargs["gamma_min"]), np.log(grid_kwargs["gamma_max"]),
            size=grid_kwargs["grid_size"])))
        bank = sampler.normal(sweep_kwargs["k_oracle"], stream="oracle")
        for q in queries:
            pi = scm.propensity(q.x, q.a)
            f = np.sort(scm.outcome_map(q.x, q.a)(bank))
            q0 = float(np.mean(f))
            for gamma in gammas:
                lo, hi = msm_bounds_from_draws(pi, q0, f, gamma)
                records.append(datastore.LabelRecord(q.query_id, "lower", gamma, lo))
                records.append(datastore.LabelRecord(q.query_id, "upper", gamma, hi))
    else:
        grid = LambdaGrid(lambda_max=grid_kwargs["lambda_max"],
                          lambda_min=grid_kwargs["lambda_min"],
                          n_points=grid_kwargs["grid_size"])
        config = SweepConfig(
            warm_start=sweep_kwargs["warm_start"],
            k_train=sweep_kwargs["k_train"], k_eval=sweep_kwargs["k_eval"],
            flow_spec=SplineSpec(n_bins=sweep_kwargs["n_bins"]))
        problems = [build_problem(scm, q, sampler) for q in queries]
        log_dir = Path(out_dir) / "logs"
        log_dir.mkdir(parents=True, exist_ok=True)
        ckpt_dir = Path(out_dir) / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        for bound in ("lower", "upper"):
            with open(log_dir / f"sweep_{dgp_id}_{bound}.jsonl", "w") as log_file:
                curves = sweep_queries(
                    scm, queries, GtsmSpec(F_KL), grid, config, sampler, bound,
                    log_file=log_file, problems=problems,
                    checkpoint_path=ckpt_dir / f"flow_{dgp_id}_{bound}.npz")
            for curve in curves:
                for pt in curve.points:
                    records.append(datastore.LabelRecord(
                        curve.query_id, bound, pt.gamma_star, pt.theta_star))
    datastore.emit_frontier_points(out_dir, dgp_id, records, overwrite=overwrite)
    return dgp_id, len(records)


def cmd_label(args) -> int:
    manifest = _load_manifest(args.data_dir)
    prior = manifest["prior_config"]
    seed = args.seed if args.seed is not None else manifest["master_seed"]
    out_dir = Path(args.out_dir or args.data_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid_kwargs = {"lambda_max": args.lambda_max, "lambda_min": args.lambda_min,
                   "grid_size": args.grid_size, "gamma_min": args.gamma_min,
                   "gamma_max": args.gamma_max}
    sweep_kwargs = {"warm_start": args.warm_start, "k_train": args.k_train,
                    "k_eval": args.k_eval, "k_oracle": args.k_oracle,
                    "n_bins": args.n_bins}
    tasks = [(args.model, seed, i, prior, args.data_dir, out_dir,
              args.overwrite, grid_kwargs, sweep_kwargs)
             for i in range(manifest["n_dgps"])]
    for dgp_id, n in _run_tasks(_label_one, tasks, args.workers):
        print(f"labeled dgp {dgp_id}: {n} frontier rows")
    return 0


# ---------------------------------------------------------------------------
# ablate-warmstart / verify
# ---------------------------------------------------------------------------

def cmd_ablate_warmstart(args) -> int:
    prior = _build_prior(args)
    configs = ablation_configs(n_bins=args.n_bins, k_train=args.k_train,
                               k_eval=args.k_eval)
    result = run_ablation(args.seed, n_dgps=args.n_dgps, n_queries=args.n_queries,
                          n_obs=prior.n_obs, prior=prior, configs=configs,
                          map_fn=lambda fn, tasks: _run_tasks(fn, tasks,
                                                              args.workers))
    out = write_report(result, args.report)
    summary = out["summary"]
    print(json.dumps(summary, indent=2))
    print(f"report written to {args.report}")
    return 0


def cmd_verify(args) -> int:
    results = verify_mod.SUITES[args.suite](seed=args.seed)
    failed = 0
    for check in results:
        status = "PASS" if check.passed else "FAIL"
        print(f"[{status}] {check.name}: {check.detail}")
        failed += 0 if check.passed else 1
    if failed:
        print(f"{failed} of {len(results)} checks failed")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensibound",
        description="Sensitivity-frontier label generation and validation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (default: $SENSIBOUND_SEED or 0)")
        p.add_argument("--config", type=str, default=None,
                       help="key = value file with prior overrides")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("generate-prior", help="sample DGPs and emit prior files")
    common(p)
    p.add_argument("--n-dgps", type=_positive_int, default=64)
    p.add_argument("--n-obs", type=int, default=None)
    p.add_argument("--d-x", type=int, default=None)
    p.add_argument("--n-queries", type=_positive_int, default=128,
                   help="query covariate rows per DGP (each expands to 2 arms)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("label", help="emit frontier_points label files")
    common(p)
    p.add_argument("--model", choices=["msm-analytic", "kl-sweep"], required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--lambda-max", type=float, default=2.0)
    p.add_argument("--lambda-min", type=float, default=0.08)
    p.add_argument("--grid-size", type=int, default=50)
    p.add_argument("--gamma-min", type=float, default=1.0)
    p.add_argument("--gamma-max", type=float, default=5.0)
    p.add_argument("--warm-start", action=argparse.BooleanOptionalAction,
                   default=True)
    p.add_argument("--k-train", type=int, default=128)
    p.add_argument("--k-eval", type=int, default=4096)
    p.add_argument("--k-oracle", type=int, default=128,
                   help="draw-bank size for the analytic MSM labels")
    p.add_argument("--n-bins", type=int, default=16)
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("ablate-warmstart", help="warm vs cold start study")
    common(p)
    p.add_argument("--n-dgps", type=_positive_int, default=16)
    p.add_argument("--n-queries", type=_positive_int, default=32)
    p.add_argument("--n-obs", type=int, default=None)
    p.add_argument("--d-x", type=int, default=None)
    p.add_argument("--n-bins", type=int, default=8)
    p.add_argument("--k-train", type=int, default=128)
    p.add_argument("--k-eval", type=int, default=1024)
    p.add_argument("--report", required=True, help="report output directory")

    p = sub.add_parser("verify", help="run a module invariant suite")
    common(p)
    p.add_argument("--suite", choices=sorted(verify_mod.SUITES), required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None and args.command != "label":
        args.seed = _default_seed()
    try:
        if args.command == "generate-prior":
            return cmd_generate_prior(args)
        if args.command == "label":
            return cmd_label(args)
        if args.command == "ablate-warmstart":
            return cmd_ablate_warmstart(args)
        if args.command == "verify":
            return cmd_verify(args)
    except (FileNotFoundError, FileExistsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
