"""Experiment execution: problem setup, tuning, budget accounting, seeded replicates, persistence."""

import csv
import hashlib
import json
import pickle
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..core import RngStream
from ..diagnostics import ComparisonReport, posterior_mean_error, reference_posterior_moments
from ..estimators import estimate_expectation_single, estimate_expectation_weighted
from ..estimators import ess_vs_dimension_curve, select_active_dimension
from ..models import build_model, generate_dataset, load_dataset
from ..samplers import (
    ALGORITHMS,
    ProposalSpec,
    SmcConfig,
    adaptive_pilot,
    run_as_mh,
    run_as_mwg,
    run_as_mwpg,
    run_as_pmmh,
    run_as_pmmh_inverted,
    run_mh,
)
from ..smc import RW_SCALE
from ..subspace import SubspaceSplit, estimate_gradient_matrix, factorize_gaussian_prior, split_from_matrix
from .config import ConfigError

# substreams of the subspace seed
_GRADIENT_STREAM, _ESS_STREAM = 0, 1


class BudgetError(ValueError):
    pass


def _smc_cost(spec, T):
    return spec.n_particles * (1 + (T - 1) * spec.n_moves)


def projected_evaluations(spec, iterations, num_stages):
    """Likelihood evaluations of a run, initialisation included.

    For AS-MwPG this is an upper bound: it assumes every inactive update is
    accepted, which forces the retained trajectory to be re-evaluated.
    """
    T, n = num_stages, int(iterations)
    name = spec.name
    if name == "mh":
        return n + 1
    if name == "as_mh":
        return spec.n_inactive * (n + 1)
    if name in ("as_pmmh", "as_pmmh_i"):
        return (n + 1) * _smc_cost(spec, T)
    if name == "as_mwg":
        return 2 * n + 1
    if name == "as_mwpg":
        per_sweep = 1 + (spec.n_particles - 1) * (1 + (T - 1) * spec.n_moves) + T
        return _smc_cost(spec, T) + n * per_sweep
    raise ConfigError("algorithms.name", f"unknown algorithm {name!r}")


def iterations_for_budget(spec, budget, num_stages):
    """Largest iteration count whose projected evaluations fit in ``budget``."""
    T = num_stages
    name = spec.name
    if name == "mh":
        n = budget - 1
    elif name == "as_mh":
        n = budget // spec.n_inactive - 1
    elif name in ("as_pmmh", "as_pmmh_i"):
        n = budget // _smc_cost(spec, T) - 1
    elif name == "as_mwg":
        n = (budget - 1) // 2
    elif name == "as_mwpg":
        per_sweep = 1 + (spec.n_particles - 1) * (1 + (T - 1) * spec.n_moves) + T
        n = (budget - _smc_cost(spec, T)) // per_sweep
    else:
        raise ConfigError("algorithms.name", f"unknown algorithm {name!r}")
    if n < 1:
        raise BudgetError(f"budget {budget} is too small for one iteration of {name}")
    return int(n)


def resolve_iterations(cfg):
    """Iteration count per algorithm; raises :class:`BudgetError` if any run would exceed the cap."""
    T = cfg.model.num_stages
    cap = cfg.budget * (1.0 + cfg.budget_tolerance)
    out = {}
    for spec in cfg.algorithms:
        n = spec.iterations if spec.iterations is not None else iterations_for_budget(spec, cfg.budget, T)
        projected = projected_evaluations(spec, n, T)
        if projected > cap:
            raise BudgetError(
                f"{spec.name}: {n} iterations project {projected} likelihood evaluations, "
                f"above the cap {int(cap)} (budget {cfg.budget}, tolerance {cfg.budget_tolerance})"
            )
        out[spec.name] = (int(n), int(projected))
    return out


@dataclass
class Problem:
    """Everything shared by the replicates of one experiment."""

    config: object
    data: np.ndarray
    data_sha256: str
    model: object
    split: SubspaceSplit
    factorization: object
    tuning_cov: np.ndarray
    pilot_samples: np.ndarray = None
    reference_mean: np.ndarray = None
    reference_info: dict = field(default_factory=dict)
    gradient_matrix: np.ndarray = None
    ess_curve: list = None


def _dataset_text(y):
    return "\n".join(f"{v:.17g}" for v in y) + "\n"


def load_data(cfg, base_dir=None):
    m = cfg.model
    if m.data_path:
        path = Path(m.data_path)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError("model.data_path", f"no such file {str(path)!r}")
        return load_dataset(path)
    return generate_dataset(m.name, m.n_data, m.data_seed)


def make_model(cfg, data):
    m = cfg.model
    try:
        return build_model(m.name, data, num_stages=m.num_stages, tempering=m.tempering, **m.params)
    except TypeError as exc:
        raise ConfigError("model.params", str(exc)) from None


def identify_subspace(cfg, model, curve=True):
    """Gradient matrix, full eigen-split and (optionally) the ESS-vs-dimension curve."""
    s = cfg.subspace
    C = estimate_gradient_matrix(model, s.n_gradient_samples, RngStream(s.seed, _GRADIENT_STREAM))
    full = split_from_matrix(C, 1)
    rows = None
    if curve:
        rows = ess_vs_dimension_curve(model, full, s.ess_inactive,
                                      rng=RngStream(s.seed, _ESS_STREAM))
    return C, full, rows


def prepare(cfg, base_dir=None):
    """Build the dataset, model, split, tuning covariance, pilot samples and reference."""
    data = load_data(cfg, base_dir)
    model = make_model(cfg, data)
    s = cfg.subspace
    C = rows = None
    if s.split_path:
        path = Path(s.split_path)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError("subspace.split_path", f"no such file {str(path)!r}")
        split = SubspaceSplit.load(path)
        if split.d != model.d:
            raise ConfigError("subspace.split_path", f"split dimension {split.d} != model dimension {model.d}")
        if s.active_dim is not None:
            split = split.with_active_dim(s.active_dim)
    else:
        C, full, rows = identify_subspace(cfg, model, curve=s.active_dim is None)
        d_a = s.active_dim if s.active_dim is not None else select_active_dimension(rows, s.ess_threshold)
        if d_a is None:
            raise ConfigError("subspace.active_dim",
                              f"no active dimension reaches {s.ess_threshold}% ESS; set it explicitly")
        if not 1 <= d_a <= model.d - 1:
            raise ConfigError("subspace.active_dim", f"must lie in [1, {model.d - 1}]")
        split = full.with_active_dim(d_a)
    fact = factorize_gaussian_prior(model.prior.mean, model.prior.cov, split)

    t = cfg.tuning
    moments = None
    if cfg.reference != "none" or t.covariance == "reference":
        method = cfg.reference if cfg.reference != "none" else "auto"
        moments = reference_posterior_moments(model, method)
    pilot = None
    pilot_cov = None
    if t.covariance == "pilot" or t.init == "pilot":
        pilot, pilot_cov = adaptive_pilot(model, t.pilot_steps, t.pilot_burn_in,
                                          rng=RngStream(t.pilot_seed, 0))
    tuning_cov = pilot_cov if t.covariance == "pilot" else moments[1]
    ref_mean, ref_info = (None, {"method": "none"}) if cfg.reference == "none" else (moments[0], moments[2])
    return Problem(cfg, data, hashlib.sha256(_dataset_text(data).encode()).hexdigest(), model, split,
                   fact, tuning_cov, pilot, ref_mean, ref_info, C, rows)


def tuned_proposals(problem):
    """Random-walk covariances: ``scale * 2.38^2 / k`` times the posterior covariance of each block."""
    S = problem.tuning_cov
    split = problem.split
    c = problem.config.tuning.scale * RW_SCALE ** 2
    return {
        "theta": c / split.d * S,
        "active": c / split.d_a * (split.B_a.T @ S @ split.B_a),
        "inactive": c / split.d_i * (split.B_i.T @ S @ split.B_i),
    }


def replicate_stream(seed, replicate, algorithm):
    """Generator for replicate ``r`` (stream ``r``); each algorithm has its own substream."""
    return RngStream(seed, replicate).substream(ALGORITHMS.index(algorithm))


def run_algorithm(problem, spec, replicate, iterations):
    cfg = problem.config
    rng = replicate_stream(cfg.seed, replicate, spec.name)
    model, fact, split = problem.model, problem.factorization, problem.split
    q = tuned_proposals(problem)
    init = None
    if cfg.tuning.init == "pilot":
        init = problem.pilot_samples[rng.integers(problem.pilot_samples.shape[0])]
    a0 = i0 = None
    if init is not None:
        a0, i0 = split.from_theta(init)
    smc = SmcConfig(spec.n_particles, spec.resample_threshold, spec.n_moves)
    name = spec.name
    if name == "mh":
        return run_mh(model, q["theta"], iterations, init, rng)
    if name == "as_mh":
        return run_as_mh(model, fact, q["active"], spec.n_inactive, iterations, a0, rng)
    if name == "as_pmmh":
        return run_as_pmmh(model, fact, q["active"], smc, iterations, a0, rng)
    if name == "as_pmmh_i":
        return run_as_pmmh_inverted(model, fact, q["inactive"], smc, iterations, i0, rng)
    if name == "as_mwg":
        return run_as_mwg(model, fact, q["active"], iterations,
                          init=None if init is None else (a0, i0), rng=rng)
    if name == "as_mwpg":
        smc.move_cov = q["active"]
        return run_as_mwpg(model, fact, smc, iterations, ProposalSpec("prior_conditional"), i0, rng)
    raise ConfigError("algorithms.name", f"unknown algorithm {name!r}")


def posterior_mean_estimate(trace, spec, burn_in_fraction):
    burn = int(burn_in_fraction * len(trace))
    if spec.estimator == "weighted":
        return estimate_expectation_weighted(trace, burn_in=burn)
    return estimate_expectation_single(trace, burn_in=burn)


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


def execute_replicate(problem, spec, replicate, iterations, out_dir):
    """Run one replicate, write its trace CSV and summary JSON, return the run record."""
    trace = run_algorithm(problem, spec, replicate, iterations)
    run_dir = Path(out_dir) / spec.name / f"rep{replicate:03d}"
    run_dir.mkdir(parents=True, exist_ok=True)
    trace_path = run_dir / "trace.csv"
    trace.to_csv(trace_path)
    estimate = posterior_mean_estimate(trace, spec, problem.config.burn_in)
    summary = trace.summary()
    summary.update({
        "replicate": replicate,
        "seed": problem.config.seed,
        "estimator": spec.estimator,
        "posterior_mean": estimate,
    })
    if problem.reference_mean is not None:
        summary["posterior_mean_error"] = posterior_mean_error(estimate, problem.reference_mean)
    if trace.theta.shape[1] >= 2:
        f = trace.theta[int(problem.config.burn_in * len(trace)):, :2].sum(axis=1)
        summary["mode_occupancy"] = [float(np.mean(f < 0)), float(np.mean(f > 0))]
    summary_path = run_dir / "summary.json"
    _write_json(summary_path, summary)
    return {
        "algorithm": spec.name,
        "replicate": replicate,
        "trace": str(trace_path),
        "summary": str(summary_path),
        "trace_sha256": file_sha256(trace_path),
        "estimate": np.asarray(estimate).tolist(),
        "evaluations": int(trace.evaluations),
        "runtime_seconds": trace.runtime,
        "mode_occupancy": summary.get("mode_occupancy"),
    }


_WORKER_PROBLEM = None


def _init_worker(payload):
    global _WORKER_PROBLEM
    _WORKER_PROBLEM = pickle.loads(payload)


def _worker_task(args):
    spec, replicate, iterations, out_dir = args
    return execute_replicate(_WORKER_PROBLEM, spec, replicate, iterations, out_dir)


def write_problem_files(problem, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "dataset.txt").write_text(_dataset_text(problem.data))
    problem.split.save(out / "split.json")
    problem.config.save(out / "config.yaml")
    if problem.reference_mean is not None:
        _write_json(out / "reference.json", {"mean": problem.reference_mean, **problem.reference_info})


def run_experiment(cfg, out_dir=None, workers=None, base_dir=None, problem=None):
    """Run every configured algorithm for every replicate and persist the results.

    The budget is checked for all algorithms before any sampling. Returns the
    manifest dict, which is also written to ``manifest.json``.
    """
    out_dir = Path(out_dir or cfg.output_dir)
    workers = workers or cfg.workers
    iters = resolve_iterations(cfg)
    started = time.perf_counter()
    problem = problem or prepare(cfg, base_dir)
    write_problem_files(problem, out_dir)
    tasks = [(spec, r, iters[spec.name][0], str(out_dir))
             for spec in cfg.algorithms for r in range(cfg.replicates)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(pickle.dumps(problem),)) as pool:
            records = list(pool.map(_worker_task, tasks))
    else:
        records = [execute_replicate(problem, *t) for t in tasks]

    report = None
    if problem.reference_mean is not None:
        report = ComparisonReport(problem.reference_mean)
        for rec in records:
            report.add(rec["algorithm"], rec["replicate"], rec["estimate"], rec["evaluations"])
        write_comparison(report, out_dir)

    manifest = {
        "experiment": cfg.name,
        "config_sha256": cfg.digest(),
        "dataset_sha256": problem.data_sha256,
        "library_version": __version__,
        "wall_clock_seconds": time.perf_counter() - started,
        "workers": workers,
        "budget": cfg.budget,
        "iterations": {k: v[0] for k, v in iters.items()},
        "projected_evaluations": {k: v[1] for k, v in iters.items()},
        "split": {"d_a": problem.split.d_a, "d_i": problem.split.d_i},
        "reference": problem.reference_info,
        "runs": [{k: rec[k] for k in ("algorithm", "replicate", "trace", "summary", "trace_sha256",
                                      "evaluations")} for rec in records],
    }
    if report is not None:
        manifest["median_error"] = report.median_errors()
    _write_json(out_dir / "manifest.json", manifest)
    return manifest, records, report


def write_comparison(report, out_dir):
    out = Path(out_dir)
    with open(out / "comparison_long.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["seed", "algorithm", "metric", "value"])
        writer.writeheader()
        writer.writerows(report.long_rows())
    _write_json(out / "comparison.json", report.summary())


def compare_experiments(configs, out_dir, workers=1, base_dir=None):
    """Run several experiments on one problem and merge their error distributions.

    All configs must share the dataset and budget. Algorithm labels are
    prefixed with the experiment name (plus its position if names repeat)
    when two configs use the same algorithm.
    """
    if not configs:
        raise ConfigError("config", "compare needs at least one config")
    budgets = {c.budget for c in configs}
    if len(budgets) > 1:
        raise ConfigError("budget", f"configs disagree on the budget: {sorted(budgets)}")
    names = [s.name for c in configs for s in c.algorithms]
    clash = {n for n in names if names.count(n) > 1}
    cfg_names = [c.name for c in configs]
    prefixes = cfg_names
    if len(set(cfg_names)) < len(cfg_names):
        prefixes = [f"{n}#{k}" for k, n in enumerate(cfg_names)]
    out = Path(out_dir)
    merged = None
    data_hash = None
    manifests = []
    for k, cfg in enumerate(configs):
        problem = prepare(cfg, base_dir)
        if data_hash is None:
            data_hash = problem.data_sha256
        elif problem.data_sha256 != data_hash:
            raise ConfigError("model", f"config {cfg.name!r} uses a different dataset")
        if problem.reference_mean is None:
            raise ConfigError("reference", "compare needs a reference posterior mean")
        manifest, records, _ = run_experiment(cfg, out / f"{k:02d}_{cfg.name}", workers, base_dir, problem)
        manifests.append(manifest)
        if merged is None:
            merged = ComparisonReport(problem.reference_mean)
        elif not np.allclose(merged.reference, problem.reference_mean):
            raise ConfigError("reference", f"config {cfg.name!r} has a different reference mean")
        for rec in records:
            label = f"{prefixes[k]}:{rec['algorithm']}" if rec["algorithm"] in clash else rec["algorithm"]
            merged.add(label, rec["replicate"], rec["estimate"], rec["evaluations"])
    write_comparison(merged, out)
    _write_json(out / "compare_manifest.json", {
        "dataset_sha256": data_hash,
        "experiments": [m["experiment"] for m in manifests],
        "config_sha256": [m["config_sha256"] for m in manifests],
        "median_error": merged.median_errors(),
    })
    return merged
