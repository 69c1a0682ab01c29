"""Command-line interface: ``gen``, ``search``, ``score`` and ``report``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 every search
trial failed. Errors are also printed to stderr as a one-line JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DEFAULT_FRACTIONS, Schema, load_csv, make_split, write_csv
from .errors import CausalScoreError, ConfigError, DataError, NoGroundTruth
from .estimators import EffectEstimate, EstimatorSpec
from .reporting import (
    config_hash,
    load_truth,
    plot_rows,
    read_trials_csv,
    read_trials_stamp,
    summary_markdown,
    write_json,
    write_plot_data,
    write_trials_csv,
    write_truth_csv,
)
from .scoring import AUDIT_ONLY, DEFAULT_MAX_PAIRS
from .search import (
    PROBLEM_KINDS,
    Budget,
    Scorer,
    SearchReport,
    applicable_scores,
    default_space,
    run_search,
    score_spec,
)
from .synthdata import DgpConfig, gen_confounded, gen_iv, gen_rct

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ALL_FAILED = 0, 2, 3, 4

_GENERATORS = {"rct": gen_rct, "confounded": gen_confounded, "iv": gen_iv}
_DGP_KIND = {"rct": "rct_cate", "confounded": "confounded_cate", "iv": "iv"}


class AllTrialsFailed(Exception):
    pass


def _fractions(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return tuple(parts)


def _add_schema_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("schema")
    g.add_argument("--treatment-col", default="T")
    g.add_argument("--outcome-col", default="Y")
    g.add_argument(
        "--instrument-col", default="auto", help="column name, 'none', or 'auto' (use 'Z' if present)"
    )
    g.add_argument(
        "--propensity-col", default="auto", help="column name, 'none', or 'auto' (use 'p' if present)"
    )
    g.add_argument("--covariate-cols", default=None, help="comma-separated; default: all other columns")


def _schema(args) -> Schema:
    with open(args.data, encoding="utf-8") as fh:
        header = next(csv.reader(line for line in fh if not line.startswith("#")))

    def resolve(value, auto_name):
        if value == "none":
            return None
        if value == "auto":
            return auto_name if auto_name in header else None
        return value

    covs = None if args.covariate_cols is None else tuple(c.strip() for c in args.covariate_cols.split(","))
    return Schema(
        treatment=args.treatment_col,
        outcome=args.outcome_col,
        instrument=resolve(args.instrument_col, "Z"),
        propensity=resolve(args.propensity_col, "p"),
        covariates=covs,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalscore", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset with ground truth")
    g.add_argument("--dgp", choices=sorted(_GENERATORS), required=True)
    g.add_argument("--n", type=int, default=20_000)
    g.add_argument("--covariates", type=int, default=None, help="default 5 (10 for iv)")
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--b-low", type=float, default=0.4)
    g.add_argument("--b-high", type=float, default=0.7)
    g.add_argument("--effect-noise-sd", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("search", help="select and tune an estimator")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--truth", type=Path, default=None, help="ground-truth CSV (audit scores only)")
    _add_schema_flags(s)
    s.add_argument("--problem-kind", choices=PROBLEM_KINDS, required=True)
    s.add_argument("--objective", required=True)
    s.add_argument("--families", default=None, help="comma-separated subset of the default families")
    s.add_argument("--max-trials", type=int, default=None)
    s.add_argument("--max-seconds", type=float, default=None)
    s.add_argument("--split", type=_fractions, default=DEFAULT_FRACTIONS, help="train,valid,test fractions")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--max-pairs", type=int, default=DEFAULT_MAX_PAIRS)
    s.add_argument("--run-id", default=None)
    s.add_argument("--out", type=Path, required=True)

    c = sub.add_parser("score", help="score a search winner or an impact vector")
    c.add_argument("--data", type=Path, required=True)
    c.add_argument("--truth", type=Path, default=None)
    _add_schema_flags(c)
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--report", type=Path, help="search report JSON; its winner is refitted and scored")
    src.add_argument("--impact", type=Path, help="CSV with an 'impact' column, one row per data row")
    c.add_argument("--problem-kind", choices=PROBLEM_KINDS, default=None)
    c.add_argument("--split", type=_fractions, default=DEFAULT_FRACTIONS)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--max-pairs", type=int, default=DEFAULT_MAX_PAIRS)
    c.add_argument("--scores", default=None, help="comma-separated score names (default: all applicable)")
    c.add_argument("--out", type=Path, required=True)

    r = sub.add_parser("report", help="plot-ready data and a Markdown summary from trials CSVs")
    r.add_argument("--trials", type=Path, nargs="+", required=True)
    r.add_argument("--out", type=Path, required=True)
    return parser


def _manifest(command: str, config: dict) -> dict:
    return {"command": command, "config": config, "config_hash": config_hash(config), "version": __version__}


def cmd_gen(args) -> int:
    n_cov = args.covariates if args.covariates is not None else (10 if args.dgp == "iv" else 5)
    cfg = DgpConfig(
        n_rows=args.n,
        n_covariates=n_cov,
        sigma=args.sigma,
        b_low=args.b_low,
        b_high=args.b_high,
        effect_noise_sd=args.effect_noise_sd,
        seed=args.seed,
    )
    frame, truth = _GENERATORS[args.dgp](cfg)
    config = {
        "dgp": args.dgp,
        "n_rows": cfg.n_rows,
        "n_covariates": cfg.n_covariates,
        "sigma": cfg.sigma,
        "b_low": cfg.b_low,
        "b_high": cfg.b_high,
        "effect_noise_sd": cfg.effect_noise_sd,
        "seed": cfg.seed,
        "rng": "numpy PCG64 via default_rng(seed)",
    }
    manifest = _manifest("gen", config)
    stamp = f"seed={cfg.seed} config_hash={manifest['config_hash']}"
    args.out.mkdir(parents=True, exist_ok=True)
    schema = write_csv(frame, args.out / "data.csv", comment=stamp)
    write_truth_csv(truth, args.out / "truth.csv", comment=stamp)
    manifest.update(
        seed=cfg.seed,
        problem_kind=_DGP_KIND[args.dgp],
        files={"data": "data.csv", "truth": "truth.csv"},
        schema={"treatment": schema.treatment, "outcome": schema.outcome, "instrument": schema.instrument,
                "propensity": schema.propensity, "covariates": list(schema.covariates)},
    )
    if hasattr(truth, "effect_weights"):
        manifest["effect_weights"] = truth.effect_weights.tolist()
    write_json(args.out / "manifest.json", manifest)
    return EXIT_OK


def _load(args):
    schema = _schema(args)
    frame = load_csv(args.data, schema)
    truth = load_truth(args.truth) if args.truth else None
    if truth is not None:
        n_truth = len(truth.tau) if hasattr(truth, "tau") else len(truth.theta)
        if n_truth != frame.n_rows:
            raise ConfigError(f"truth has {n_truth} rows, data has {frame.n_rows}")
    return schema, frame, truth


def cmd_search(args) -> int:
    schema, frame, truth = _load(args)
    budget = Budget(args.max_trials, args.max_seconds)
    families = None if args.families is None else [f.strip() for f in args.families.split(",")]
    space = default_space(args.problem_kind, families)
    split = make_split(frame.n_rows, args.split, args.seed)
    config = {
        "data": args.data.name,
        "truth": None if args.truth is None else args.truth.name,
        "schema": {"treatment": schema.treatment, "outcome": schema.outcome, "instrument": schema.instrument,
                   "propensity": schema.propensity, "covariates": list(frame.column_names)},
        "problem_kind": args.problem_kind,
        "objective": args.objective,
        "families": families,
        "max_trials": args.max_trials,
        "max_seconds": args.max_seconds,
        "split_fractions": list(args.split),
        "seed": args.seed,
        "max_pairs": args.max_pairs,
    }
    cfg_hash = config_hash(config)
    report = run_search(
        space, frame, split, args.objective, budget, seed=args.seed, truth=truth,
        workers=args.workers, max_pairs=args.max_pairs, config={"config_hash": cfg_hash, "cli": config},
    )
    run_id = args.run_id or f"{args.objective}-{args.seed}-{cfg_hash[:8]}"
    args.out.mkdir(parents=True, exist_ok=True)
    out = report.to_dict()
    out.update(run_id=run_id, config_hash=cfg_hash, seed=args.seed)
    write_json(args.out / "report.json", out)
    write_trials_csv(report, args.out / "trials.csv", run_id, cfg_hash)
    if report.best_trial_id is None:
        reasons = sorted({t.reason for t in report.trials if t.reason})
        err = {"error": "AllTrialsFailed", "message": "every trial failed", "reasons": reasons,
               "config_hash": cfg_hash, "seed": args.seed}
        write_json(args.out / "error.json", err)
        raise AllTrialsFailed(json.dumps(err))
    return EXIT_OK


def cmd_score(args) -> int:
    _, frame, truth = _load(args)
    report_dict = None
    if args.report is not None:
        with open(args.report, encoding="utf-8") as fh:
            report_dict = json.load(fh)
        report = SearchReport.from_dict(report_dict)
        split = report.split
        problem_kind = args.problem_kind or report.config["problem_kind"]
        objective = report.objective
        max_pairs = report.config.get("max_pairs", args.max_pairs)
        seed = int(report.config["seed"])
    else:
        split = make_split(frame.n_rows, args.split, args.seed)
        if args.problem_kind is None:
            raise ConfigError("--problem-kind is required with --impact")
        problem_kind = args.problem_kind
        objective = applicable_scores(problem_kind)[0]
        max_pairs, seed = args.max_pairs, args.seed
    if split.n_rows != frame.n_rows:
        raise ConfigError(f"split covers {split.n_rows} rows, data has {frame.n_rows}")

    wanted = None if args.scores is None else [s.strip() for s in args.scores.split(",")]
    if wanted and truth is None and any(w in AUDIT_ONLY for w in wanted):
        raise NoGroundTruth("ground-truth scores requested without --truth")
    scorer = Scorer.for_run(frame, split, problem_kind, objective, truth, max_pairs, seed)
    names = wanted or scorer.valid_names()
    errors: dict[str, str] = {}
    scores = []
    if report_dict is not None:
        best = report.best
        if best is None:
            raise ConfigError("report has no successful trial")
        scores = score_spec(scorer, best.spec, best.seed, ["valid", "test"], errors, names)
        source = {"report": args.report.name, "trial_id": best.trial_id, "spec": best.spec.to_dict()}
    else:
        impact = _read_impact(args.impact, frame.n_rows)
        for part in ("valid", "test"):
            idx = split.part(part)
            est = EffectEstimate.from_impact(frame, idx, impact[idx])
            for name in names:
                try:
                    scores.append(scorer.compute(name, est, part))
                except CausalScoreError as exc:
                    errors[f"{name}/{part}"] = f"{type(exc).__name__}: {exc}"
        source = {"impact": args.impact.name}
    config = {"source": source, "problem_kind": problem_kind, "seed": seed, "scores": names,
              "split_seed": split.seed}
    out = {
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "scores": [s.to_dict() for s in scores],
    }
    if errors:
        out["score_errors"] = dict(sorted(errors.items()))
    args.out.mkdir(parents=True, exist_ok=True)
    write_json(args.out / "scores.json", out)
    return EXIT_OK


def _read_impact(path: Path, n: int) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    if not rows or "impact" not in rows[0]:
        raise DataError(f"{path}: needs an 'impact' column")
    impact = np.array([float(r["impact"]) for r in rows])
    if impact.shape[0] != n or not np.all(np.isfinite(impact)):
        raise DataError(f"{path}: expected {n} finite impact values, got {impact.shape[0]}")
    return impact


def cmd_report(args) -> int:
    trial_rows = []
    for p in args.trials:
        trial_rows += read_trials_csv(p)
    rows = plot_rows(trial_rows)
    runs = sorted({r["run_id"] for r in trial_rows})
    config = {"inputs": [p.name for p in args.trials], "runs": runs}
    h = config_hash(config)
    args.out.mkdir(parents=True, exist_ok=True)
    write_plot_data(rows, args.out / "plot_data.csv")
    seeds = sorted({read_trials_stamp(p).get("seed", "?") for p in args.trials})
    md = summary_markdown(rows, header=f"<!-- config_hash={h} seeds={','.join(seeds)} -->\n\n# Score vs. MSE\n")
    (args.out / "summary.md").write_text(md, encoding="utf-8")
    return EXIT_OK


_COMMANDS = {"gen": cmd_gen, "search": cmd_search, "score": cmd_score, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except AllTrialsFailed as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ALL_FAILED
    except ConfigError as exc:
        code, err = EXIT_CONFIG, exc
    except (DataError, OSError, ValueError) as exc:
        code, err = EXIT_DATA, exc
    print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
