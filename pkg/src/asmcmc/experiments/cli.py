"""Command-line interface: ``asmcmc {identify,ess-curve,run,compare,report}``."""

import argparse
import csv
import json
import signal
import sys
from pathlib import Path

from ..diagnostics import spectrum_report
from ..estimators import select_active_dimension
from .config import ConfigError, ExperimentConfig
from .runner import compare_experiments, identify_subspace, load_data, make_model, run_experiment


def _load_config(path, args):
    cfg = ExperimentConfig.load(path)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "budget", None) is not None:
        cfg.budget = args.budget
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "out", None) is not None:
        cfg.output_dir = args.out
    return cfg


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def cmd_identify(args, curve_only=False):
    cfg = _load_config(args.config, args)
    base = Path(args.config).parent
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = make_model(cfg, load_data(cfg, base))
    C, full, rows = identify_subspace(cfg, model)
    _write_rows(out / "ess_curve.csv", rows)
    selected = select_active_dimension(rows, cfg.subspace.ess_threshold)
    result = {"ess_curve": str(out / "ess_curve.csv"), "ess_selected_d_a": selected}
    if not curve_only:
        report = spectrum_report(C, cfg.subspace.gap_threshold)
        _write_rows(out / "spectrum.csv", report.rows())
        d_a = cfg.subspace.active_dim or selected or report.dominant or 1
        full.with_active_dim(d_a).save(out / "split.json")
        result.update({
            "spectrum": str(out / "spectrum.csv"),
            "split": str(out / "split.json"),
            "spectrum_candidates": report.candidates,
            "spectrum_dominant": report.dominant,
            "d_a": d_a,
        })
        (out / "identify.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    _emit(result)


def cmd_run(args):
    cfg = _load_config(args.config, args)
    manifest, _, _ = run_experiment(cfg, base_dir=Path(args.config).parent)
    _emit({"manifest": str(Path(cfg.output_dir) / "manifest.json"),
           "median_error": manifest.get("median_error"),
           "iterations": manifest["iterations"]})


def cmd_compare(args):
    configs = [_load_config(p, args) for p in args.config]
    out = args.out or configs[0].output_dir
    workers = args.workers or configs[0].workers
    report = compare_experiments(configs, out, workers, Path(args.config[0]).parent)
    _emit({"comparison": str(Path(out) / "comparison.json"), "median_error": report.median_errors()})


def cmd_report(args):
    out = Path(args.out)
    comparison = out / "comparison.json"
    manifest = out / "manifest.json"
    if not comparison.exists() and not manifest.exists():
        raise FileNotFoundError(f"no comparison.json or manifest.json under {out}")
    if comparison.exists():
        summary = json.loads(comparison.read_text())
        med, rmse = summary["median_error"], summary["rmse"]
        evals = summary["mean_evaluations"]
        print(f"{'algorithm':<20}{'median error':>14}{'rmse':>12}{'evaluations':>14}")
        for alg in sorted(med, key=med.get):
            print(f"{alg:<20}{med[alg]:>14.4g}{rmse[alg]:>12.4g}{evals[alg]:>14.0f}")
    if manifest.exists():
        m = json.loads(manifest.read_text())
        print(f"runs: {len(m['runs'])}  config {m['config_sha256'][:12]}  dataset {m['dataset_sha256'][:12]}")
        for run in m["runs"]:
            s = json.loads(Path(run["summary"]).read_text())
            occ = s.get("mode_occupancy")
            occ_text = f"  occupancy {occ[0]:.3f}/{occ[1]:.3f}" if occ else ""
            print(f"  {run['algorithm']:<12} rep {run['replicate']:>3}  acceptance "
                  f"{s['acceptance_rate']:.3f}  evaluations {s['likelihood_evaluations']}{occ_text}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="asmcmc", description="Active-subspace MCMC experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi=False):
        if multi:
            sp.add_argument("--config", required=True, action="append", help="experiment YAML (repeatable)")
        else:
            sp.add_argument("--config", required=True, help="experiment YAML")
        sp.add_argument("--seed", type=int, help="override the experiment seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, help="parallel replicate workers")
        sp.add_argument("--budget", type=int, help="likelihood-evaluation budget")

    common(sub.add_parser("identify", help="estimate the subspace, spectrum and ESS curve"))
    common(sub.add_parser("ess-curve", help="ESS of the IS estimator against active dimension"))
    common(sub.add_parser("run", help="run the configured samplers"))
    common(sub.add_parser("compare", help="run several configs and merge their errors"), multi=True)
    rp = sub.add_parser("report", help="summarise a results directory")
    rp.add_argument("--out", required=True, help="results directory")
    return p


def main(argv=None):
    if argv is None and hasattr(signal, "SIGPIPE"):
        # quiet exit when piped into e.g. head
        signal.signal(signal.SIGPIPE, signal.SIG_DFL)
    args = build_parser().parse_args(argv)
    handlers = {
        "identify": cmd_identify,
        "ess-curve": lambda a: cmd_identify(a, curve_only=True),
        "run": cmd_run,
        "compare": cmd_compare,
        "report": cmd_report,
    }
    try:
        handlers[args.command](args)
    except (ConfigError, ValueError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigError):
            err["field"] = exc.field
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
