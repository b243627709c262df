"""Command-line batch interface.

    tworel run CONFIG [--seed N] [--reps N] [--out DIR]
    tworel validate CONFIG

Exit status: 0 consistent or pass, 2 violated or fail, 3 inconclusive,
1 usage error (bad config, failed hypothesis, unreadable file).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml
from scipy import stats

from . import __version__
from ._kernels import RNG_VERSION
from .config import ConfigError, ExperimentConfig, load_config, theorem_params
from .lyapunov import (
    ConstantFunction,
    CoordinateX,
    CoordinateY,
    DriftParams,
    LyapunovFunction,
    drift_check,
    grid_outside,
    k_of_delta,
)
from .recurrence import (
    check_theorem_bound,
    delta_moment_check,
    dynkin_residual,
    estimate_q,
    estimate_tau_moment,
    eta_indicator_correlation,
    excursion_check,
    regeneration_batch,
    stationary_occupation,
)
from .sampler import RngStream, derive_seed, first_events, simulate_path
from .transition import validate_identities

EXIT_OK, EXIT_USAGE, EXIT_VIOLATED, EXIT_INCONCLUSIVE = 0, 1, 2, 3
VERDICT_EXIT = {"consistent": EXIT_OK, "pass": EXIT_OK, "violated": EXIT_VIOLATED, "fail": EXIT_VIOLATED,
                "inconclusive": EXIT_INCONCLUSIVE}
KS_ALPHA = 0.001


@dataclass
class RunResult:
    verdict: str
    summary: dict
    tables: dict[str, str] = field(default_factory=dict)

    @property
    def exit_status(self) -> int:
        return VERDICT_EXIT[self.verdict]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------- experiments


def _simulate(cfg: ExperimentConfig) -> RunResult:
    horizon = cfg.params["horizon"]
    path = simulate_path(cfg.run_model, cfg.z0, horizon, RngStream(cfg.seed, 0), cfg.method)
    final = path.final_state()
    summary = {"events": len(path), "events_per_time": len(path) / horizon, "final_state": final.to_dict(),
               "first_component_share": float(np.mean(path.components == 0)) if len(path) else None}
    return RunResult("pass", summary, {"path": path.to_csv()})


def _validate_sampler(cfg: ExperimentConfig) -> RunResult:
    p = cfg.params
    model, reps = cfg.run_model, p["reps"]
    reports = {m: validate_identities(model, cfg.z0, p["deltas"], reps, derive_seed(cfg.seed, k), method=m)
               for k, m in enumerate(("thinning", "inversion"))}
    Ti, ci = first_events(model, cfg.z0, reps, derive_seed(cfg.seed, 10), method="inversion")
    Tt, ct = first_events(model, cfg.z0, reps, derive_seed(cfg.seed, 11), method="thinning")
    ks = stats.ks_2samp(Ti, Tt)
    fi, ft = float(np.mean(ci == 0)), float(np.mean(ct == 0))
    pooled = 0.5 * (fi + ft)
    se = math.sqrt(max(pooled * (1 - pooled), 0.0) * 2.0 / reps)
    z_comp = (fi - ft) / se if se > 0 else 0.0
    passed = all(r.passed for r in reports.values()) and ks.pvalue >= KS_ALPHA and abs(z_comp) <= 3.0
    summary = {
        "identities": {m: r.to_dict() for m, r in reports.items()},
        "ks_statistic": float(ks.statistic), "ks_pvalue": float(ks.pvalue), "ks_alpha": KS_ALPHA,
        "first_share_inversion": fi, "first_share_thinning": ft, "component_z": z_comp,
    }
    rows = [(m, r.delta, r.analytic, r.empirical, r.std_err, r.z_score)
            for m, rep in reports.items() for r in rep.rows]
    table = _csv(("method", "delta", "analytic", "empirical", "std_err", "z_score"), rows)
    return RunResult("pass" if passed else "fail", summary, {"identities": table})


def _drift_check(cfg: ExperimentConfig) -> RunResult:
    p = cfg.params
    params = DriftParams(cfg.model.gamma, p["delta"], p["m"])
    grid = grid_outside(k_of_delta(p["delta"], p["m"]), p["m"], p["grid_points"], p["grid_upper"])
    rep = drift_check(cfg.run_model, params, grid)
    summary = {"grid_size": len(rep.rows), "violations": len(rep.violations), "margin_coefficient": params.margin,
               "threshold_K": k_of_delta(p["delta"], p["m"])}
    return RunResult("pass" if rep.passed else "fail", summary, {"violations": rep.to_csv(only_violations=True)})


def _estimate_result(rep) -> RunResult:
    return RunResult(rep.verdict, {"estimate": rep.to_dict()}, {"estimate": rep.to_csv()})


def _hitting_moments(cfg: ExperimentConfig) -> RunResult:
    p = cfg.params
    rep = estimate_tau_moment(cfg.run_model, cfg.z0, p["K"], p["set_power"], p["p"], p["reps"], cfg.seed,
                              p["bound"], p["time_cap"], cfg.method)
    return _estimate_result(rep)


def _theorem_check(cfg: ExperimentConfig) -> RunResult:
    p = cfg.params
    tp = dataclasses.replace(theorem_params(p), method=cfg.method)
    rep = check_theorem_bound(p["part"], cfg.run_model, tp, cfg.z0, p["reps"], cfg.seed)
    return _estimate_result(rep)


def _test_function(h: dict):
    kind = h["kind"]
    if kind == "constant":
        return ConstantFunction(float(h.get("c", 1.0)))
    if kind == "lyapunov":
        return LyapunovFunction(float(h.get("m", 1.0)), float(h.get("k", 0.0)))
    return CoordinateX() if kind == "x" else CoordinateY()


def _dynkin_check(cfg: ExperimentConfig) -> RunResult:
    p = cfg.params
    rep = dynkin_residual(cfg.run_model, _test_function(p["h"]), cfg.z0, p["horizon"], p["reps"], cfg.seed,
                          cfg.method)
    return _estimate_result(rep)


def _stationary(cfg: ExperimentConfig) -> RunResult:
    p = cfg.params
    occ = stationary_occupation(cfg.run_model, cfg.z0, p["horizon"], p["burn_in"], p["bins"], cfg.seed, cfg.method)
    summary = {"occupation": occ.to_dict(), "fraction_i0": occ.fraction_i(0), "fraction_j0": occ.fraction_j(0)}
    verdict = "pass"
    ref = p["reference_rate"] or {}
    for axis, rate in ref.items():
        d = occ.ks_exponential(axis, float(rate))
        summary[f"ks_{axis}"] = d
        if not d < p["ks_threshold"]:
            verdict = "fail"
    return RunResult(verdict, summary, {"histograms": occ.histogram_csv()})


def _regeneration(cfg: ExperimentConfig) -> RunResult:
    p = cfg.params
    model = cfg.run_model
    qe = estimate_q(model, p["K"], p["K1"], p["q_reps"], derive_seed(cfg.seed, 3), p["set_power"], p["q_grid"],
                    method=cfg.method)
    batch = regeneration_batch(model, cfg.z0, p["K"], p["K1"], p["n_cycles"], p["reps"], cfg.seed, p["set_power"],
                               p["time_cap"], cfg.method)
    rows = excursion_check(batch, qe.q_low)
    structure = batch.structure_violations()
    summary = {
        "q_low": qe.q_low, "q_hat_min": qe.q_hat_min, "q_argmin": qe.argmin.to_dict(),
        "capped": int(batch.capped.sum()), "structure_violations": structure,
        "excursions": [r.__dict__ for r in rows],
        "eta_indicator_correlation": eta_indicator_correlation(batch),
    }
    if all(p.get(key) is not None for key in ("k", "m0", "delta")):
        drep = delta_moment_check(batch, p["k"], p["m0"], cfg.model.gamma, p["delta"], p["epsilon"], p["m"],
                                  cfg.seed)
        summary["delta_moment"] = drep.to_dict()
    ok = all(r.passed for r in rows) and not any(structure.values())
    verdict = "pass" if ok else "fail"
    if batch.capped.any():
        verdict = "inconclusive" if ok else verdict
    table = _csv(("ell", "frequency", "bound", "sigma", "pass"),
                 [(r.ell, r.frequency, r.bound, r.sigma, int(r.passed)) for r in rows])
    return RunResult(verdict, summary, {"excursions": table})


RUNNERS: dict[str, Callable[[ExperimentConfig], RunResult]] = {
    "simulate": _simulate,
    "validate-sampler": _validate_sampler,
    "drift-check": _drift_check,
    "hitting-moments": _hitting_moments,
    "theorem-check": _theorem_check,
    "dynkin-check": _dynkin_check,
    "stationary": _stationary,
    "regeneration": _regeneration,
}


def run(cfg: ExperimentConfig) -> RunResult:
    return RUNNERS[cfg.experiment](cfg)


# ---------------------------------------------------------------- persistence


def report_document(cfg: ExperimentConfig, result: RunResult) -> dict:
    return _jsonable({
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "rng": RNG_VERSION,
        "package_version": __version__,
        "config": cfg.resolved,
        "verdict": result.verdict,
        "exit_status": result.exit_status,
        "result": result.summary,
    })


def write_report(cfg: ExperimentConfig, result: RunResult, output_dir: str | Path | None = None) -> list[Path]:
    """Write the JSON report, one CSV per table and the resolved config.

    File names depend only on the experiment name and seed. CSV files start
    with ``#`` comment lines carrying the seed and the resolved config.
    """
    out = Path(cfg.output_dir if output_dir is None else output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.experiment}_seed{cfg.seed}"
    doc = report_document(cfg, result)
    paths = []
    p = out / f"{stem}.json"
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    paths.append(p)
    provenance = (f"# seed: {cfg.seed}\n# rng: {RNG_VERSION}\n"
                  f"# config: {json.dumps(_jsonable(cfg.resolved), sort_keys=True)}\n")
    for name, text in sorted(result.tables.items()):
        p = out / f"{stem}_{name}.csv"
        p.write_text(provenance + text)
        paths.append(p)
    p = out / f"{stem}_config.yaml"
    p.write_text(yaml.safe_dump(_jsonable(cfg.resolved), sort_keys=True))
    paths.append(p)
    return paths


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tworel", description="Two-element reliability recurrence experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment and write its report")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--reps", type=int)
    r.add_argument("--out", dest="output_dir")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    overrides = {}
    if args.command == "run":
        overrides = {"seed": args.seed, "reps": args.reps, "output_dir": args.output_dir}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.experiment})")
        return EXIT_OK
    try:
        result = run(cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        paths = write_report(cfg, result)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for p in paths:
        print(p)
    print(f"verdict: {result.verdict}")
    return result.exit_status


if __name__ == "__main__":
    sys.exit(main())
