"""Serialization of search results and plot-ready summaries."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import spearmanr

from .dataset import format_float, write_table
from .scoring import DIRECTIONS, SELECTABLE
from .search import SearchReport
from .synthdata import GroundTruth, IvGroundTruth

__all__ = [
    "config_hash",
    "write_json",
    "write_trials_csv",
    "read_trials_csv",
    "read_trials_stamp",
    "plot_rows",
    "write_plot_data",
    "summary_markdown",
    "write_truth_csv",
    "load_truth",
]

SPLITS = ("train", "valid", "test")
SCORE_NAMES = tuple(DIRECTIONS)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_json(path, obj: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format_float(v)
    return str(v)


def write_trials_csv(report: SearchReport, path, run_id: str, cfg_hash: str):
    """One row per trial: identity, resolved hyperparameters (JSON) and
    ``<score>.<split>`` columns. Wall times are left out so the file is
    reproducible byte for byte."""
    score_cols = [f"{n}.{s}" for n in SCORE_NAMES for s in SPLITS]
    header = ["run_id", "trial_id", "origin", "family", "status", "seed", "objective", "hyperparams", "reason"]
    header += score_cols
    seed = report.config.get("seed")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# seed={seed} config_hash={cfg_hash} objective={report.objective}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in report.trials:
            vals = {f"{s.name}.{s.split}": s.value for s in t.scores}
            row = [
                run_id,
                t.trial_id,
                t.origin,
                t.spec.family,
                t.status,
                t.seed,
                report.objective,
                json.dumps(t.spec.hyperparams, sort_keys=True),
                t.reason or "",
            ]
            row += [_fmt(vals.get(c)) for c in score_cols]
            w.writerow(row)


def read_trials_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        return list(csv.DictReader(lines))


def read_trials_stamp(path) -> dict[str, str]:
    """``key=value`` pairs from the leading ``#`` line of a trials CSV."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.startswith("#"):
        return {}
    return dict(tok.split("=", 1) for tok in first[1:].split() if "=" in tok)


def _num(x: str) -> float | None:
    return None if x in ("", None) else float(x)


def plot_rows(trial_rows: Iterable[dict]) -> list[dict]:
    """Tidy rows ``(run_id, trial_id, family, split, score_name, score, mse_tau)``
    for every selectable score present, paired with ground-truth MSE on the
    same split when available."""
    out = []
    for r in trial_rows:
        if r.get("status") != "ok":
            continue
        for split in SPLITS:
            mse = _num(r.get(f"mse_tau.{split}", ""))
            for name in SELECTABLE:
                v = _num(r.get(f"{name}.{split}", ""))
                if v is None:
                    continue
                out.append(
                    {
                        "run_id": r["run_id"],
                        "trial_id": int(r["trial_id"]),
                        "family": r["family"],
                        "objective": r["objective"],
                        "split": split,
                        "score_name": name,
                        "score": v,
                        "mse_tau": mse,
                    }
                )
    return out


def write_plot_data(rows: Sequence[dict], path):
    cols = ["run_id", "trial_id", "family", "objective", "split", "score_name", "score", "mse_tau"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation (average ranks for ties); NaN if undefined."""
    if len(x) < 3 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(spearmanr(x, y)[0])


def summary_table(rows: Sequence[dict]) -> list[dict]:
    """Per (run, score, split): trial count, best trial and rank correlation with MSE.

    ``spearman`` correlates the raw score with ``mse_tau``; ``spearman_oriented``
    correlates the score oriented so that larger is better with ``-mse_tau``,
    so positive values mean the score points towards accurate models.
    """
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["run_id"], r["score_name"], r["split"]), []).append(r)
    table = []
    for (run_id, name, split), rs in sorted(groups.items()):
        sign = 1.0 if DIRECTIONS[name] == "higher_better" else -1.0
        best = max(rs, key=lambda r: (sign * r["score"], -r["trial_id"]))
        paired = [r for r in rs if r["mse_tau"] is not None]
        rho = rho_o = float("nan")
        if paired:
            s = [r["score"] for r in paired]
            m = [r["mse_tau"] for r in paired]
            rho = spearman(s, m)
            rho_o = -sign * rho if not math.isnan(rho) else rho
        table.append(
            {
                "run_id": run_id,
                "score_name": name,
                "split": split,
                "n_trials": len(rs),
                "best_trial_id": best["trial_id"],
                "best_family": best["family"],
                "best_score": best["score"],
                "best_mse_tau": best["mse_tau"],
                "spearman": rho,
                "spearman_oriented": rho_o,
            }
        )
    return table


def summary_markdown(rows: Sequence[dict], header: str = "") -> str:
    table = summary_table(rows)
    cols = list(table[0]) if table else ["run_id"]
    lines = [header] if header else []
    lines += ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for t in table:
        cells = []
        for c in cols:
            v = t[c]
            cells.append(f"{v:.6g}" if isinstance(v, float) else str(v))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_truth_csv(truth, path, comment: str | None = None):
    if isinstance(truth, GroundTruth):
        header = ["tau", "mu0", "true_propensity"]
        cols = [truth.tau, truth.mu0, truth.true_propensity]
    else:
        header = ["theta", "nu", "compliance", "always_taker_draw"]
        cols = [truth.theta, truth.nu, truth.compliance, truth.always_taker_draw]
    write_table(path, header, cols, comment)


def load_truth(path):
    """Read a ground-truth CSV written by :func:`write_truth_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        rows = list(csv.DictReader(lines))
    cols = rows[0].keys() if rows else []

    def col(name, dtype=float):
        return np.array([float(r[name]) for r in rows]).astype(dtype)

    if "tau" in cols:
        return GroundTruth(col("tau"), col("true_propensity"), col("mu0"), np.empty(0))
    if "theta" in cols:
        return IvGroundTruth(col("theta"), col("nu"), col("compliance", np.int64), col("always_taker_draw", np.int64))
    raise ValueError(f"{path}: no tau or theta column")
