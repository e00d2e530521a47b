"""Command-line entry points: `estimate` on a CSV, `simulate` for the study.

Both commands write machine-readable JSON plus plot-ready CSV files, and a
run manifest recording the resolved options, seed, version, and input digest
so any result can be reproduced bit-for-bit. Timing lives only in the
manifest; the result files depend on nothing but inputs and options.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .balance import balance_report
from .data import BINARY, CONTINUOUS, Dataset, find_matches
from .errors import CvMatchError
from .estimator import bias_corrected_effect
from .propensity import fit_logit
from .sim import SimConfig, run_monte_carlo
from .transform import ATE, ATET
from .cv import select_k

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RunManifest:
    command: str
    options: dict
    seed: int
    version: str
    input_digest: str | None
    started_at: str
    duration_seconds: float

    def write(self, path: Path) -> None:
        _write_json(path, asdict(self))


class CliError(CvMatchError):
    """Input problems reported as a diagnostic message and nonzero exit."""


def load_csv(
    path: str | Path,
    treatment: str,
    outcome: str,
    covariates: list[str],
) -> tuple[Dataset, list[str]]:
    """Read and validate a dataset from a headed CSV file."""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read CSV {path}: {exc}") from None
    missing = [c for c in (treatment, outcome, *covariates) if c not in frame.columns]
    if missing:
        raise CliError(f"columns not found in {path}: {', '.join(missing)}")
    used = frame[[treatment, outcome, *covariates]]
    if used.isna().any().any():
        bad = used.columns[used.isna().any()].tolist()
        raise CliError(f"missing values in columns: {', '.join(bad)}")
    for col in used.columns:
        if not np.issubdtype(used[col].dtype, np.number):
            raise CliError(f"column {col!r} is not numeric")
    d = frame[treatment].to_numpy()
    if not np.isin(d, (0, 1)).all():
        raise CliError(f"treatment column {treatment!r} must contain only 0 and 1")
    y = frame[outcome].to_numpy(dtype=float)
    outcome_kind = BINARY if np.isin(y, (0.0, 1.0)).all() else CONTINUOUS
    x = frame[list(covariates)].to_numpy(dtype=float)
    try:
        dataset = Dataset(x, d.astype(np.int64), y, outcome_kind)
    except (CvMatchError, ValueError) as exc:
        raise CliError(f"invalid dataset: {exc}") from None
    return dataset, list(covariates)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def _sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def cmd_estimate(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, names = load_csv(args.csv, args.treatment, args.outcome, args.covariates)
    propensity = fit_logit(dataset)

    cv_payload = None
    if args.k is not None:
        if args.k < 1:
            raise CliError(f"--k must be positive, got {args.k}")
        k = args.k
        estimate = bias_corrected_effect(
            dataset, k, args.estimand, args.alpha, args.standardize
        )
    else:
        cv_result, estimate = select_k(
            dataset,
            folds=args.folds,
            k_max=args.k_max,
            estimand=args.estimand,
            seed=args.seed,
            alpha=args.alpha,
            standardize=args.standardize,
            refit_propensity_per_fold=args.refit_propensity_per_fold,
            shrink_grid=True,
            propensity=propensity,
        )
        k = cv_result.k_star
        cv_payload = cv_result.to_dict()

    matches = find_matches(
        dataset,
        dataset.treated_indices,
        dataset.control_indices,
        min(k, dataset.n_control),
        args.standardize,
    )
    balance = balance_report(dataset, matches, args.alpha, names)

    result = {
        "schema_version": SCHEMA_VERSION,
        "estimand": args.estimand,
        "n": dataset.n,
        "n_treated": dataset.n_treated,
        "n_control": dataset.n_control,
        "outcome_kind": dataset.outcome_kind,
        "k_fixed": args.k,
        "estimate": estimate.to_dict(),
        "cv": cv_payload,
        "propensity": {
            "coefficients": propensity.coefficients.tolist(),
            "marginal": propensity.marginal,
            "converged": propensity.converged,
            "iterations": propensity.iterations,
        },
        "balance_passed": balance.passed,
    }
    _write_json(out_dir / "result.json", result)
    _write_csv(
        out_dir / "balance.csv",
        ["covariate", "kind", "treated_mean", "matched_control_mean",
         "statistic", "critical_value", "balanced"],
        [list(row.values()) for row in balance.to_rows()],
    )
    RunManifest(
        command="estimate",
        options=_option_dict(args),
        seed=args.seed,
        version=__version__,
        input_digest=_sha256(args.csv),
        started_at=datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        duration_seconds=time.time() - started,
    ).write(out_dir / "manifest.json")
    print(f"point={estimate.point:.6g} ci=({estimate.ci_low:.6g}, {estimate.ci_high:.6g}) k={k}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = list(range(1, 7)) if args.curve == "all" else [int(args.curve)]

    runs = []
    for curve in curves:
        config = SimConfig(
            n=args.n,
            curve=curve,
            outcome_kind=args.outcome,
            estimand=args.estimand,
            replications=args.reps,
            k_max=args.k_max,
            folds=args.folds,
            alpha=args.alpha,
            seed=args.seed,
        )
        runs.append(run_monte_carlo(config, jobs=args.jobs))

    _write_json(
        out_dir / "sim_result.json",
        {"schema_version": SCHEMA_VERSION, "runs": [r.to_dict() for r in runs]},
    )

    mrse_rows, ratio_rows, type1_rows, hist_rows = [], [], [], []
    for run in runs:
        curve = run.config.curve
        mean_mrse, s_k = run.mrse()
        median_mrse, _ = run.mrse(aggregate="median")
        ratios = run.ci_length_ratio()
        type1 = run.type1_rate()
        hist = run.kstar_histogram()
        # k=0 row reports the CV-selected policy
        type1_rows.append([curve, 0, run.type1_rate_at_kstar()])
        for j, k in enumerate(run.k_grid):
            if s_k[j] > 0:
                mrse_rows.append([curve, int(k), int(s_k[j]),
                                  float(mean_mrse[j]), float(median_mrse[j])])
            if not np.isnan(ratios[j]):
                ratio_rows.append([curve, int(k), float(ratios[j])])
            if not np.isnan(type1[j]):
                type1_rows.append([curve, int(k), float(type1[j])])
            hist_rows.append([curve, int(k), int(hist[j])])

    _write_csv(out_dir / "mrse.csv",
               ["curve", "k", "s_k", "mrse", "mrse_median"], mrse_rows)
    _write_csv(out_dir / "ci_ratio.csv",
               ["curve", "k", "mean_ci_length_ratio"], ratio_rows)
    _write_csv(out_dir / "type1.csv",
               ["curve", "k", "rejection_rate"], type1_rows)
    _write_csv(out_dir / "kstar_hist.csv", ["curve", "k", "count"], hist_rows)
    RunManifest(
        command="simulate",
        options=_option_dict(args),
        seed=args.seed,
        version=__version__,
        input_digest=None,
        started_at=datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        duration_seconds=time.time() - started,
    ).write(out_dir / "manifest.json")
    total_failures = sum(len(r.failures) for r in runs)
    print(f"simulated {len(runs)} curve(s) x {args.reps} replications "
          f"({total_failures} failures) -> {out_dir}")
    return 0


def _option_dict(args: argparse.Namespace) -> dict:
    options = {k: v for k, v in vars(args).items() if k != "func"}
    return options


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvmatch",
        description="Bias-corrected k-NN matching treatment effects with "
                    "cross-validated choice of k.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate a treatment effect from a CSV file")
    est.add_argument("csv", help="input CSV with a header row")
    est.add_argument("--treatment", required=True, help="0/1 treatment column name")
    est.add_argument("--outcome", required=True, help="outcome column name")
    est.add_argument("--covariates", required=True, nargs="+",
                     help="covariate column names")
    est.add_argument("--estimand", choices=[ATET, ATE], default=ATET)
    est.add_argument("--k", type=int, default=None,
                     help="fixed number of neighbors (skips cross-validation)")
    est.add_argument("--k-max", type=int, default=20)
    est.add_argument("--folds", type=int, default=5)
    est.add_argument("--alpha", type=float, default=0.05)
    est.add_argument("--standardize", action="store_true",
                     help="z-score covariates before computing distances")
    est.add_argument("--refit-propensity-per-fold", action="store_true",
                     help="refit the propensity model on each training fold")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--out-dir", default=".")
    est.set_defaults(func=cmd_estimate)

    simp = sub.add_parser("simulate", help="run the Monte Carlo study")
    simp.add_argument("--curve", default="1",
                      choices=[str(c) for c in range(1, 7)] + ["all"])
    simp.add_argument("--outcome", choices=[CONTINUOUS, BINARY], default=CONTINUOUS)
    simp.add_argument("--estimand", choices=[ATET, ATE], default=ATET)
    simp.add_argument("--n", type=int, default=100)
    simp.add_argument("--reps", type=int, default=200)
    simp.add_argument("--k-max", type=int, default=20)
    simp.add_argument("--folds", type=int, default=10)
    simp.add_argument("--alpha", type=float, default=0.05)
    simp.add_argument("--seed", type=int, default=0)
    simp.add_argument("--jobs", type=int, default=1,
                      help="parallel worker processes for replications")
    simp.add_argument("--out-dir", default=".")
    simp.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CvMatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
