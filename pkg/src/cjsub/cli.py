"""Command-line interface.

Subcommands: simulate, subsample, fit, weights, combine, run, full-fit,
audit. The `run` subcommand drives the whole pipeline from a YAML config;
individual subcommands expose the stages for piecemeal or audit use.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import rng as streams
from .combine import SubsampleDiagnostics, combination_weights, combined_quantiles
from .data import parse_dataset
from .isweights import (TwoStepConfig, WeightEstimatorConfig, compute_weights)
from .mcmc import ChainConfig, DrawSet, run_subposterior_mcmc
from .model import FixedValue, ModelSpec, Theta, UniformPrior
from .pipeline import (full_data_fit, load_config, read_draws, robustness_audit,
                       run_pipeline, write_draws, write_table)
from .simulate import default_releases, simulate_dataset
from .subsample import SubsamplePlan, draw_subsample, stratum_table


def _spec_from_args(args) -> ModelSpec:
    if args.structure == "age_time":
        return ModelSpec.age_time(args.occasions)
    from dataclasses import replace
    spec = ModelSpec.constant(args.occasions)
    if args.sigma_fixed is not None:
        spec = replace(spec, sigma_eps_prior=FixedValue(args.sigma_fixed))
    elif args.sigma_prior_high != 10.0:
        spec = replace(spec,
                       sigma_eps_prior=UniformPrior(0.0, args.sigma_prior_high))
    return spec


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--structure", choices=["constant", "age_time"],
                   default="constant")
    p.add_argument("--occasions", type=int, required=True)
    p.add_argument("--sigma-prior-high", type=float, default=10.0)
    p.add_argument("--sigma-fixed", type=float, default=None)


def cmd_simulate(args) -> int:
    spec = _spec_from_args(args)
    theta = Theta(alpha=np.array([args.alpha]), p=np.array([args.p]),
                  sigma_eps=args.sigma)
    data = simulate_dataset(spec, theta,
                            default_releases(args.individuals, args.occasions),
                            seed=args.seed)
    data.to_csv(args.out)
    with open(args.out + ".meta.json", "w") as fh:
        json.dump({"alpha": args.alpha, "p": args.p, "sigma_eps": args.sigma,
                   "seed": args.seed, "individuals": args.individuals,
                   "occasions": args.occasions}, fh, indent=1)
    print(f"wrote {data.total_individuals} histories to {args.out}")
    return 0


def cmd_subsample(args) -> int:
    with open(args.data, encoding="utf-8") as fh:
        data = parse_dataset(fh.read())
    plan = SubsamplePlan(fraction=args.fraction, scheme=args.scheme,
                         M=args.M, master_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m in range(1, plan.M + 1):
        x1, x2 = draw_subsample(data, plan, m)
        x1.to_csv(str(out / f"x1_{m:03d}.csv"))
        x2.to_csv(str(out / f"x2_{m:03d}.csv"))
    with open(out / "manifest.json", "w") as fh:
        json.dump({"fraction": plan.fraction, "scheme": plan.scheme,
                   "M": plan.M, "seed": plan.master_seed,
                   "strata": stratum_table(data, plan)}, fh, indent=1)
    print(f"wrote {plan.M} subsample pairs to {out}")
    return 0


def _chain_config(args) -> ChainConfig:
    return ChainConfig(chains=args.chains, iterations=args.iterations,
                       burn_in=args.burn_in, thin=args.thin, seed=args.seed)


def cmd_fit(args) -> int:
    spec = _spec_from_args(args)
    with open(args.data, encoding="utf-8") as fh:
        data = parse_dataset(fh.read(), cohort_age=spec.needs_cohort_age)
    draws = run_subposterior_mcmc(data, spec, _chain_config(args),
                                  stream_path=(args.subsample_index,))
    write_draws(Path(args.out), draws)
    with open(args.out + ".meta.json", "w") as fh:
        json.dump({"config": draws.provenance,
                   "acceptance": draws.acceptance,
                   "ess": draws.ess.tolist()}, fh, indent=1)
    print(f"wrote {draws.K} draws to {args.out}")
    return 0


def cmd_weights(args) -> int:
    spec = _spec_from_args(args)
    with open(args.x2, encoding="utf-8") as fh:
        x2 = parse_dataset(fh.read(), cohort_age=spec.needs_cohort_age)
    names, values = read_draws(Path(args.draws))
    draws = DrawSet(names=names, values=values,
                    logpost=np.zeros(len(values)))
    two_step = None
    if args.two_step:
        two_step = TwoStepConfig(coarse_N=args.coarse_N,
                                 retain_fraction=args.retain_fraction,
                                 fine_N=args.fine_N)
    cfg = WeightEstimatorConfig(method=args.method, N=args.N,
                                unique_histories=args.unique_histories,
                                multiplicity_cap=args.multiplicity_cap,
                                two_step=two_step,
                                threshold=args.threshold)
    wd = compute_weights(draws, x2, spec, cfg, args.seed,
                         args.subsample_index)
    write_table(Path(args.out),
                [{"draw": k, "log_w_star": wd.log_w_star[k], "w": wd.w[k]}
                 for k in range(draws.K)])
    with open(args.out + ".meta.json", "w") as fh:
        json.dump({"ess": wd.ess, "n_nonneg": wd.n_nonneg,
                   "threshold": wd.threshold}, fh, indent=1)
    print(f"ess={wd.ess:.1f} n_nonneg={wd.n_nonneg}")
    return 0


def cmd_combine(args) -> int:
    run_dir = Path(args.run_dir)
    drawsets = []
    diagnostics = []
    names = None
    for d in sorted(run_dir.glob("sub_*")):
        diag_file = d / "diagnostics.json"
        sir_file = d / "sir_draws.csv"
        if not (diag_file.exists() and sir_file.exists()):
            continue
        with open(diag_file) as fh:
            diag = json.load(fh)
        if diag.get("status") != "ok":
            print(f"skipping depleted subsample {d.name}", file=sys.stderr)
            continue
        names, values = read_draws(sir_file)
        drawsets.append(DrawSet(names=names, values=values,
                                logpost=np.zeros(len(values))))
        diagnostics.append(SubsampleDiagnostics(diag["weight_variance"],
                                                diag["ess"],
                                                diag["n_nonneg"]))
    if not drawsets:
        print("no usable subsample results", file=sys.stderr)
        return 1
    rows = combined_quantiles(drawsets, diagnostics, args.rule,
                              rng=streams.substream(args.seed, streams.SIR, 0))
    for row in rows:
        row["rule"] = args.rule
        row["M"] = len(drawsets)
    write_table(Path(args.out), rows)
    print(f"combined {len(drawsets)} subsamples -> {args.out}")
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.workers is not None:
        from dataclasses import replace
        config = replace(config, workers=args.workers)
    result = run_pipeline(config, dry_run=args.dry_run)
    if args.dry_run:
        print(json.dumps(result["plan"], indent=1))
        return 0
    for row in result.get("combined", []):
        print(f"{row['parameter']}: mean={row['mean']:.4f} "
              f"[{row['q2.5']:.4f}, {row['q97.5']:.4f}]")
    return result["exit_code"]


def cmd_full_fit(args) -> int:
    spec = _spec_from_args(args)
    with open(args.data, encoding="utf-8") as fh:
        data = parse_dataset(fh.read(), cohort_age=spec.needs_cohort_age)
    summary, draws = full_data_fit(data, spec, _chain_config(args))
    write_table(Path(args.out), summary)
    write_draws(Path(args.out + ".draws.csv"), draws)
    for row in summary:
        print(f"{row['parameter']}: mean={row['mean']:.4f} "
              f"[{row['q2.5']:.4f}, {row['q97.5']:.4f}]")
    return 0


def cmd_audit(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = robustness_audit(args.run_dir, sizes, repeats=args.repeats,
                            seed=args.seed)
    write_table(Path(args.out), rows)
    for row in rows:
        print(f"size={row['subset_size']} {row['parameter']}: "
              f"rmse_mean={row['rmse_mean']:.4f} rmse_sd={row['rmse_sd']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cjsub",
        description="Subsample-then-importance-correct Bayesian inference "
                    "for capture-recapture models with individual "
                    "random effects")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _add_model_args(p)
    p.add_argument("--individuals", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.62)
    p.add_argument("--p", type=float, default=0.13)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("subsample", help="draw subsample/remainder pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--fraction", type=float, default=0.20)
    p.add_argument("--scheme", default="first_last",
                   choices=["uniform", "first_last", "first_last_cohort"])
    p.add_argument("--M", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subsample)

    for name, fn in [("fit", cmd_fit), ("full-fit", cmd_full_fit)]:
        p = sub.add_parser(name, help="run MCMC on a dataset")
        _add_model_args(p)
        p.add_argument("--data", required=True)
        p.add_argument("--chains", type=int, default=3)
        p.add_argument("--iterations", type=int, default=15000)
        p.add_argument("--burn-in", type=int, default=5000)
        p.add_argument("--thin", type=int, default=15)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--subsample-index", type=int, default=0)
        p.add_argument("--out", required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("weights", help="importance weights for one subsample")
    _add_model_args(p)
    p.add_argument("--draws", required=True)
    p.add_argument("--x2", required=True)
    p.add_argument("--method", default="stratified",
                   choices=["naive", "stratified", "stratified_midpoint"])
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--unique-histories", action="store_true")
    p.add_argument("--multiplicity-cap", type=int, default=None)
    p.add_argument("--two-step", action="store_true")
    p.add_argument("--coarse-N", type=int, default=25)
    p.add_argument("--retain-fraction", type=float, default=0.10)
    p.add_argument("--fine-N", type=int, default=250)
    p.add_argument("--threshold", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subsample-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("combine", help="merge per-subsample results")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--rule", default="equal",
                   choices=["equal", "inv_var_weights", "ess"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("run", help="full pipeline from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", help="robustness audit over subsample subsets")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--sizes", required=True,
                   help="comma-separated subset sizes, e.g. 10,20")
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
