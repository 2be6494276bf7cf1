"""End-to-end orchestration: simulate/load -> subsample -> MCMC -> weights ->
combine, with per-subsample artifact directories and a run manifest.

All cross-unit state flows through the filesystem; subsample units are
independent and are the parallelism grain.
"""
from __future__ import annotations

import csv
import json
import multiprocessing
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import likelihood
from . import rng as streams
from .combine import (Rule, SubsampleDiagnostics, combination_weights,
                      combined_quantiles, subsample_report, summary_table)
from .data import CompressedDataset, parse_dataset
from .isweights import (TotalDepletionError, TwoStepConfig,
                        WeightEstimatorConfig, compute_weights,
                        posterior_mean_vector, sir_resample)
from .mcmc import ChainConfig, DrawSet, run_subposterior_mcmc
from .model import FixedValue, ModelSpec, NormalPrior, Theta, UniformPrior
from .simulate import default_releases, simulate_dataset
from .subsample import SubsamplePlan, draw_subsample, stratum_table

WORKERS_ENV = "CJSUB_WORKERS"


@dataclass(frozen=True)
class SimulationConfig:
    n_individuals: int
    n_occasions: int
    alpha: float = 0.62
    p: float = 0.13
    sigma_eps: float = 0.5

    def theta(self) -> Theta:
        return Theta(alpha=np.array([self.alpha]), p=np.array([self.p]),
                     sigma_eps=self.sigma_eps)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    output: str
    model: ModelSpec
    subsample: SubsamplePlan
    mcmc: ChainConfig
    weights: WeightEstimatorConfig
    dataset: str | None = None
    simulation: SimulationConfig | None = None
    rule: Rule = "equal"
    sir_draws: int = 1000
    workers: int = 1

    def __post_init__(self) -> None:
        if (self.dataset is None) == (self.simulation is None):
            raise ValueError("exactly one of dataset / simulation required")


def _model_from_dict(d: dict) -> ModelSpec:
    structure = d.get("structure", "constant")
    T = d["n_occasions"]
    if structure == "age_time":
        spec = ModelSpec.age_time(T)
    else:
        spec = ModelSpec.constant(T)
    kwargs: dict[str, Any] = {}
    if "sigma_eps_prior" in d:
        sp = d["sigma_eps_prior"]
        kwargs["sigma_eps_prior"] = (FixedValue(float(sp["fixed"]))
                                     if isinstance(sp, dict)
                                     else UniformPrior(*map(float, sp)))
    if "alpha_prior" in d:
        mean, scale = d["alpha_prior"]
        kwargs["alpha_prior"] = NormalPrior(
            float(mean), float(scale),
            scale_is_variance=d.get("normal_scale_is_variance", True))
    if "random_effect" in d:
        kwargs["random_effect"] = bool(d["random_effect"])
    if kwargs:
        from dataclasses import replace
        spec = replace(spec, **kwargs)
    return spec


def config_from_dict(d: dict) -> PipelineConfig:
    seed = int(d.get("seed", 0))
    sub = d.get("subsample", {})
    mc = d.get("mcmc", {})
    wt = dict(d.get("weights", {}))
    two_step = wt.pop("two_step", None)
    sim = d.get("simulation")
    return PipelineConfig(
        seed=seed,
        output=d["output"],
        model=_model_from_dict(d["model"]),
        subsample=SubsamplePlan(
            fraction=float(sub.get("fraction", 0.20)),
            scheme=sub.get("scheme", "first_last"),
            M=int(sub.get("M", 1)),
            master_seed=seed),
        mcmc=ChainConfig(
            chains=int(mc.get("chains", 3)),
            iterations=int(mc.get("iterations", 15000)),
            burn_in=int(mc.get("burn_in", 5000)),
            thin=int(mc.get("thin", 15)),
            seed=seed),
        weights=WeightEstimatorConfig(
            two_step=TwoStepConfig(**two_step) if two_step else None,
            **wt),
        dataset=d.get("dataset"),
        simulation=SimulationConfig(**sim) if sim else None,
        rule=d.get("combine", {}).get("rule", "equal"),
        sir_draws=int(d.get("sir", {}).get("R", 1000)),
        workers=int(d.get("workers", 1)),
    )


def load_config(path: str | Path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(yaml.safe_load(fh))


def n_workers(config: PipelineConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env) if env else config.workers)


# -- CSV helpers ------------------------------------------------------------

def write_table(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def write_draws(path: Path, draws: DrawSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(draws.names + ["logpost"])
        for k in range(draws.K):
            writer.writerow([repr(float(v)) for v in draws.values[k]]
                            + [repr(float(draws.logpost[k]))])


def read_draws(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        values = np.array([[float(c) for c in row] for row in reader])
    names = header[:-1]
    return names, values[:, :-1]


# -- per-subsample unit -----------------------------------------------------

def _run_unit(args: tuple) -> dict:
    config, data, m = args
    t0 = time.perf_counter()
    likelihood.reset_evaluation_count()
    unit_dir = Path(config.output) / f"sub_{m:03d}"
    unit_dir.mkdir(parents=True, exist_ok=True)
    record: dict[str, Any] = {"m": m}
    try:
        x1, x2 = draw_subsample(data, config.subsample, m)
        x1.to_csv(str(unit_dir / "x1.csv"))
        x2.to_csv(str(unit_dir / "x2.csv"))
        with open(unit_dir / "subsample_manifest.json", "w") as fh:
            json.dump({"m": m, "seed": config.seed,
                       "fraction": config.subsample.fraction,
                       "scheme": config.subsample.scheme,
                       "x1_individuals": x1.total_individuals,
                       "x2_individuals": x2.total_individuals,
                       "strata": stratum_table(data, config.subsample)},
                      fh, indent=1)
        t_sub = time.perf_counter()

        draws = run_subposterior_mcmc(x1, config.model, config.mcmc,
                                      stream_path=(m,))
        write_draws(unit_dir / "draws.csv", draws)
        sub_summary = summary_table(draws.names, draws.values)
        write_table(unit_dir / "subposterior_summary.csv", sub_summary)
        t_mcmc = time.perf_counter()

        wd = compute_weights(draws, x2, config.model, config.weights,
                             config.seed, m)
        write_table(unit_dir / "weights.csv",
                    [{"draw": k, "log_w_star": wd.log_w_star[k], "w": wd.w[k]}
                     for k in range(draws.K)])
        corrected = summary_table(draws.names, draws.values, weights=wd.w)
        write_table(unit_dir / "corrected_summary.csv", corrected)
        sir = sir_resample(wd, config.sir_draws,
                           streams.substream(config.seed, streams.SIR, m))
        write_draws(unit_dir / "sir_draws.csv", sir)
        t_weights = time.perf_counter()

        record.update({
            "status": "ok",
            "names": draws.names,
            "corrected_mean": posterior_mean_vector(wd).tolist(),
            "weight_variance": float(np.var(wd.w)),
            "ess": wd.ess,
            "n_nonneg": wd.n_nonneg,
            "sub_quantiles": [[r["q2.5"], r["q97.5"]] for r in sub_summary],
            "corrected_quantiles": [[r["q2.5"], r["q97.5"]] for r in corrected],
            "sir_values": sir.values.tolist(),
            "acceptance": draws.acceptance,
            "timing": {"subsample_s": t_sub - t0,
                       "mcmc_s": t_mcmc - t_sub,
                       "weights_s": t_weights - t_mcmc},
            "likelihood_evaluations": likelihood.evaluation_count(),
        })
    except TotalDepletionError as exc:
        record.update({"status": "depleted", "error": str(exc)})
    with open(unit_dir / "diagnostics.json", "w") as fh:
        json.dump({k: v for k, v in record.items() if k != "sir_values"},
                  fh, indent=1)
    return record


def run_pipeline(config: PipelineConfig, dry_run: bool = False) -> dict:
    """Execute the full pipeline; returns the combined run record."""
    out = Path(config.output)
    plan = {
        "seed": config.seed,
        "M": config.subsample.M,
        "fraction": config.subsample.fraction,
        "scheme": config.subsample.scheme,
        "mcmc": config.mcmc.digest(),
        "weights": asdict(config.weights),
        "rule": config.rule,
        "workers": n_workers(config),
        "source": config.dataset or "simulation",
    }
    if dry_run:
        return {"plan": plan}
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    if config.dataset is not None:
        with open(config.dataset, encoding="utf-8") as fh:
            data = parse_dataset(fh.read(),
                                 cohort_age=config.model.needs_cohort_age)
    else:
        sim = config.simulation
        theta = sim.theta()
        data = simulate_dataset(
            config.model, theta,
            default_releases(sim.n_individuals, sim.n_occasions),
            seed=config.seed)
        data.to_csv(str(out / "data.csv"))
        with open(out / "truth.json", "w") as fh:
            json.dump({"alpha": sim.alpha, "p": sim.p,
                       "sigma_eps": sim.sigma_eps, "seed": config.seed}, fh)
    t_data = time.perf_counter()

    M = config.subsample.M
    jobs = [(config, data, m) for m in range(1, M + 1)]
    workers = n_workers(config)
    if workers > 1 and M > 1:
        with multiprocessing.get_context("spawn").Pool(min(workers, M)) as pool:
            records = pool.map(_run_unit, jobs)
    else:
        records = [_run_unit(j) for j in jobs]
    t_units = time.perf_counter()

    ok = [r for r in records if r["status"] == "ok"]
    failed = [r for r in records if r["status"] != "ok"]
    result: dict[str, Any] = {"plan": plan, "failed": [r["m"] for r in failed]}
    if ok:
        names = ok[0]["names"]
        diagnostics = [SubsampleDiagnostics(r["weight_variance"], r["ess"],
                                            r["n_nonneg"]) for r in ok]
        estimates = np.array([r["corrected_mean"] for r in ok])
        z = combination_weights(diagnostics, config.rule)
        drawsets = [DrawSet(names=names, values=np.array(r["sir_values"]),
                            logpost=np.zeros(len(r["sir_values"])))
                    for r in ok]
        combined = combined_quantiles(
            drawsets, diagnostics, config.rule,
            rng=streams.substream(config.seed, streams.SIR, 0))
        combined_mean = z @ estimates
        for j, row in enumerate(combined):
            row["mean"] = float(combined_mean[j])
            row["rule"] = config.rule
            row["M"] = len(ok)
        write_table(out / "combined_summary.csv", combined)
        report = subsample_report(
            names,
            np.array([r["sub_quantiles"] for r in ok]),
            np.array([r["corrected_quantiles"] for r in ok]))
        sub_w, cor_w = report.mean_widths()
        with open(out / "report.json", "w") as fh:
            json.dump({
                "parameters": names,
                "mean_sub_lower": report.sub_lower.tolist(),
                "mean_sub_upper": report.sub_upper.tolist(),
                "mean_corrected_lower": report.corrected_lower.tolist(),
                "mean_corrected_upper": report.corrected_upper.tolist(),
                "mean_sub_width": sub_w.tolist(),
                "mean_corrected_width": cor_w.tolist(),
            }, fh, indent=1)
        result["combined"] = combined
        result["report"] = {"sub_width": sub_w.tolist(),
                            "corrected_width": cor_w.tolist()}

    timing = {
        "data_s": t_data - t0,
        "units_s": t_units - t_data,
        "total_s": time.perf_counter() - t0,
        "per_unit": {str(r["m"]): r.get("timing") for r in ok},
        "likelihood_evaluations": int(sum(r.get("likelihood_evaluations", 0)
                                          for r in ok)),
    }
    with open(out / "timing.json", "w") as fh:
        json.dump(timing, fh, indent=1)
    with open(out / "manifest.json", "w") as fh:
        json.dump({"plan": plan, "failed": result["failed"],
                   "n_ok": len(ok)}, fh, indent=1)
    result["timing"] = timing
    result["exit_code"] = 0 if not failed else 1
    return result


def full_data_fit(data: CompressedDataset, spec: ModelSpec,
                  config: ChainConfig,
                  warn_above: int = 20000) -> tuple[list[dict], DrawSet]:
    """Direct full-data fit for head-to-head comparison with the pipeline."""
    if data.total_individuals == 0:
        raise ValueError("empty dataset")
    if data.total_individuals > warn_above:
        import warnings
        warnings.warn(
            f"direct augmentation over {data.total_individuals} individuals "
            "may be very slow; the subsampling pipeline is the intended path")
    draws = run_subposterior_mcmc(data, spec, config, stream_path=(0,))
    return summary_table(draws.names, draws.values), draws


def robustness_audit(run_dir: str | Path, subset_sizes: Sequence[int],
                     repeats: int = 100, seed: int = 0) -> list[dict]:
    """Recombine random subsets of the per-subsample corrected posteriors and
    report RMSE of subset-combined mean and SD against the all-M combination."""
    run_dir = Path(run_dir)
    unit_dirs = sorted(run_dir.glob("sub_*"))
    sirs = []
    names: list[str] | None = None
    for d in unit_dirs:
        f = d / "sir_draws.csv"
        if f.exists():
            names, values = read_draws(f)
            sirs.append(values)
    M = len(sirs)
    if M == 0:
        raise ValueError(f"no subsample results under {run_dir}")
    if max(subset_sizes) > M:
        raise ValueError("subset size exceeds available subsamples")

    def pooled_stats(idx: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        pool = np.concatenate([sirs[i] for i in idx], axis=0)
        return pool.mean(axis=0), pool.std(axis=0)

    base_mean, base_sd = pooled_stats(range(M))
    rng = streams.substream(seed, streams.AUDIT)
    rows = []
    for size in subset_sizes:
        err_mean = np.zeros(len(names))
        err_sd = np.zeros(len(names))
        for _ in range(repeats):
            idx = rng.choice(M, size=size, replace=False)
            mu, sd = pooled_stats(idx)
            err_mean += (mu - base_mean) ** 2
            err_sd += (sd - base_sd) ** 2
        rmse_mean = np.sqrt(err_mean / repeats)
        rmse_sd = np.sqrt(err_sd / repeats)
        for j, name in enumerate(names):
            rows.append({"subset_size": size, "parameter": name,
                         "rmse_mean": float(rmse_mean[j]),
                         "rmse_sd": float(rmse_sd[j])})
    return rows
