"""Out-of-sample scores for effect estimates.

Policy-value scores (ERUPT and its normalized variant), the Qini coefficient,
energy-distance scores on extended feature vectors, and ground-truth audits
(``mse_tau``, ``ate``) for synthetic data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import CausalFrame, fit_standardization
from .errors import (
    ColumnMismatch,
    EmptySample,
    MissingPropensity,
    NoGroundTruth,
    NoMatchedRows,
    ShapeMismatch,
    SingleArm,
    SingleInstrumentArm,
)
from .estimators import EffectEstimate
from .learners import PROBA_CLIP_HIGH, PROBA_CLIP_LOW
from .synthdata import GroundTruth, IvGroundTruth

__all__ = [
    "ScoreValue",
    "Policy",
    "DIRECTIONS",
    "SELECTABLE",
    "AUDIT_ONLY",
    "erupt",
    "normalized_erupt",
    "qini",
    "energy_distance",
    "energy_score_iv",
    "energy_score_cate",
    "mse_tau",
    "ate_error",
    "DEFAULT_MAX_PAIRS",
]

DIRECTIONS = {
    "erupt": "higher_better",
    "norm_erupt": "higher_better",
    "qini": "higher_better",
    "energy_cate": "lower_better",
    "energy_iv": "lower_better",
    "mse_tau": "lower_better",
    "ate": "lower_better",
}
SELECTABLE = ("norm_erupt", "qini", "energy_cate", "energy_iv")
AUDIT_ONLY = ("mse_tau", "ate")

DEFAULT_MAX_PAIRS = 20_000_000
_TILE = 1024


@dataclass(frozen=True)
class ScoreValue:
    name: str
    value: float
    split: str
    n_effective: int
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def direction(self) -> str:
        return DIRECTIONS[self.name]

    def oriented(self) -> float:
        """Value with sign flipped so that larger is always better."""
        return self.value if self.direction == "higher_better" else -self.value

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "value": self.value,
            "direction": self.direction,
            "split": self.split,
            "n_effective": self.n_effective,
        }
        if self.details:
            d["details"] = self.details
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreValue":
        return cls(d["name"], float(d["value"]), d["split"], int(d["n_effective"]), dict(d.get("details", {})))


@dataclass(frozen=True, eq=False)
class Policy:
    """Binary treatment assignment for a set of rows."""

    assignment: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment).reshape(-1)
        if np.any((a != 0) & (a != 1)):
            raise ValueError("policy assignment must be binary")
        object.__setattr__(self, "assignment", a.astype(np.int64))

    @classmethod
    def above_mean(cls, impact) -> "Policy":
        """Treat iff the estimated impact is strictly above its mean."""
        impact = np.asarray(impact, dtype=float)
        if impact.size and np.ptp(impact) == 0:
            # the float mean of equal values can round below them
            return cls(np.zeros(impact.size, dtype=np.int64))
        return cls((impact > impact.mean()).astype(np.int64))

    @property
    def is_constant(self) -> bool:
        return self.assignment.min() == self.assignment.max()


def _propensity_for(frame: CausalFrame, idx: np.ndarray, propensity) -> np.ndarray:
    if propensity is not None:
        p = np.asarray(propensity, dtype=float).reshape(-1)
        if p.shape[0] != idx.shape[0]:
            raise ShapeMismatch(f"{p.shape[0]} propensities for {idx.shape[0]} rows")
    elif frame.propensity is not None:
        p = frame.propensity[idx]
    else:
        raise MissingPropensity("ERUPT needs a propensity column or explicit propensities")
    return np.clip(p, PROBA_CLIP_LOW, PROBA_CLIP_HIGH)


def erupt(policy: Policy, frame: CausalFrame, idx, propensity=None, split: str = "valid") -> ScoreValue:
    """Inverse-propensity estimate of the mean outcome under ``policy``.

    ``(1/|idx|) * sum_j Y_j 1[policy_j = T_j] / P(T = T_j | x_j)``. Propensities
    come from ``propensity`` (aligned with ``idx``) or the frame's known column,
    clipped to ``[0.01, 0.99]``.

    Raises:
        NoMatchedRows: no row's observed treatment agrees with the policy.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise EmptySample("erupt needs at least one row")
    a = policy.assignment
    if a.shape[0] != idx.shape[0]:
        raise ShapeMismatch(f"policy covers {a.shape[0]} rows, idx has {idx.shape[0]}")
    T = frame.treatment[idx]
    Y = frame.outcome[idx]
    p = _propensity_for(frame, idx, propensity)
    match = a == T
    n_match = int(match.sum())
    if n_match == 0:
        raise NoMatchedRows("policy agrees with the observed assignment on no row")
    p_obs = np.where(T == 1, p, 1.0 - p)
    value = float(np.sum(np.where(match, Y / p_obs, 0.0)) / idx.size)
    return ScoreValue("erupt", value, split, n_match)


def normalized_erupt(estimate: EffectEstimate, frame: CausalFrame, propensity=None, split: str = "valid") -> ScoreValue:
    """ERUPT of the policy "treat iff impact > mean impact" on the scored rows."""
    policy = Policy.above_mean(estimate.impact)
    base = erupt(policy, frame, estimate.idx, propensity, split)
    details = {"treated_fraction": float(policy.assignment.mean())}
    if policy.is_constant:
        details["warnings"] = ["DegeneratePolicy"]
    return ScoreValue("norm_erupt", base.value, split, base.n_effective, details)


def qini(estimate: EffectEstimate, frame: CausalFrame, split: str = "valid") -> ScoreValue:
    """Area between the cumulative uplift curve and the random-targeting line.

    Rows are ranked by impact (descending, stable). For each prefix ``k``,
    ``uplift(k) = Y1(k) - Y0(k) * N1(k) / N0(k)`` (or ``Y1(k)`` while the prefix
    has no control rows); the value is ``(1/N) sum_k [uplift(k) - k/N uplift(N)]``.

    Raises:
        SingleArm: the scored rows contain only one treatment arm.
    """
    idx = estimate.idx
    T = frame.treatment[idx]
    if T.min() == T.max():
        raise SingleArm("qini needs treated and control rows")
    order = np.argsort(-estimate.impact, kind="stable")
    T = T[order].astype(float)
    Y = frame.outcome[idx][order]
    n1 = np.cumsum(T)
    n0 = np.cumsum(1.0 - T)
    y1 = np.cumsum(Y * T)
    y0 = np.cumsum(Y * (1.0 - T))
    with np.errstate(divide="ignore", invalid="ignore"):
        uplift = np.where(n0 > 0, y1 - y0 * n1 / n0, y1)
    n = idx.size
    k = np.arange(1, n + 1)
    value = float(np.sum(uplift - k / n * uplift[-1]) / n)
    return ScoreValue("qini", value, split, int(n))


def _cross_sum(A: np.ndarray, B: np.ndarray) -> float:
    total = 0.0
    for s in range(0, A.shape[0], _TILE):
        total += float(cdist(A[s : s + _TILE], B).sum())
    return total


def _within_sum(A: np.ndarray) -> float:
    """Sum of ||a - a'|| over ordered pairs (i.e. twice the unordered sum)."""
    total = 0.0
    n = A.shape[0]
    for s in range(0, n, _TILE):
        e = min(s + _TILE, n)
        D = cdist(A[s:e], A[s:])
        total += float(np.triu(D[:, : e - s], 1).sum()) + float(D[:, e - s :].sum())
    return 2.0 * total


def energy_distance(A, B, max_pairs: int | None = DEFAULT_MAX_PAIRS, seed: int = 0, return_info: bool = False):
    """Energy distance between two samples of row vectors.

    ``2/(nm) sum ||a-b|| - 1/n^2 sum ||a-a'|| - 1/m^2 sum ||b-b'||``. When
    ``n * m`` exceeds ``max_pairs`` both samples are uniformly subsampled
    (without replacement, from ``default_rng(seed)``) by the same factor.

    Returns:
        The distance, or ``(distance, info)`` when ``return_info`` is set.

    Raises:
        EmptySample, ColumnMismatch.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise EmptySample("energy distance needs two non-empty samples")
    if A.shape[1] != B.shape[1]:
        raise ColumnMismatch(f"samples have {A.shape[1]} and {B.shape[1]} columns")
    # canonical argument order makes d(A, B) and d(B, A) bit-identical
    if (B.shape[0], B.tobytes()) < (A.shape[0], A.tobytes()):
        A, B = B, A
    n, m = A.shape[0], B.shape[0]
    info: dict[str, Any] = {"n_a": n, "n_b": m, "subsampled": False}
    if max_pairs is not None and n * m > max_pairs:
        f = math.sqrt(max_pairs / (n * m))
        na, nb = max(1, int(n * f)), max(1, int(m * f))
        rng = np.random.default_rng(seed)
        A = A[np.sort(rng.choice(n, na, replace=False))]
        B = B[np.sort(rng.choice(m, nb, replace=False))]
        info.update(subsampled=True, subsample_seed=int(seed), n_a_used=na, n_b_used=nb)
        n, m = na, nb
    value = 2.0 * _cross_sum(A, B) / (n * m) - _within_sum(A) / n**2 - _within_sum(B) / m**2
    return (value, info) if return_info else value


def _energy_between_arms(estimate, frame, arm, name, split, max_pairs, seed, with_raw) -> ScoreValue:
    idx = estimate.idx
    ext = np.column_stack([frame.covariates[idx], estimate.corrected_outcome])
    arm = np.asarray(arm)
    ref = np.flatnonzero(arm == 0)
    std = fit_standardization(ext, ref).apply(ext)
    value, info = energy_distance(std[arm == 0], std[arm == 1], max_pairs, seed, return_info=True)
    if with_raw:
        info["raw_value"] = energy_distance(ext[arm == 0], ext[arm == 1], max_pairs, seed)
    return ScoreValue(name, float(value), split, int(idx.size), info)


def energy_score_iv(
    estimate: EffectEstimate,
    frame: CausalFrame,
    split: str = "valid",
    max_pairs: int | None = DEFAULT_MAX_PAIRS,
    seed: int = 0,
    with_raw: bool = True,
) -> ScoreValue:
    """Energy distance between ``[x, y - i T]`` vectors of the two instrument arms.

    Columns are standardized with statistics of the ``Z = 0`` rows. The
    unstandardized distance is reported as ``details["raw_value"]``.

    Raises:
        SingleInstrumentArm: scored rows lack one instrument arm.
    """
    if frame.instrument is None:
        raise SingleInstrumentArm("frame has no instrument column")
    Z = frame.instrument[estimate.idx]
    if Z.min() == Z.max():
        raise SingleInstrumentArm("energy_iv needs rows with Z = 0 and Z = 1")
    return _energy_between_arms(estimate, frame, Z, "energy_iv", split, max_pairs, seed, with_raw)


def energy_score_cate(
    estimate: EffectEstimate,
    frame: CausalFrame,
    split: str = "valid",
    max_pairs: int | None = DEFAULT_MAX_PAIRS,
    seed: int = 0,
    with_raw: bool = True,
) -> ScoreValue:
    """Energy distance between ``[x, y - i T]`` vectors of treated and control rows.

    Raises:
        SingleArm: scored rows lack one treatment arm.
    """
    T = frame.treatment[estimate.idx]
    if T.min() == T.max():
        raise SingleArm("energy_cate needs treated and control rows")
    return _energy_between_arms(estimate, frame, T, "energy_cate", split, max_pairs, seed, with_raw)


def _truth_pair(estimate: EffectEstimate, frame: CausalFrame | None, truth):
    idx = estimate.idx
    if isinstance(truth, GroundTruth):
        return estimate.impact, truth.tau[idx]
    if isinstance(truth, IvGroundTruth):
        if frame is None:
            raise NoGroundTruth("IV truth is defined on treated rows; pass the frame")
        T = frame.treatment[idx]
        return estimate.impact * T, truth.theta[idx] * T
    raise NoGroundTruth("no ground truth available")


def mse_tau(estimate: EffectEstimate, truth, frame: CausalFrame | None = None, split: str = "valid") -> ScoreValue:
    """Mean squared error of the impact against the true effect.

    For IV truth the comparison is on realized effects ``i_j T_j`` vs
    ``theta_j T_j`` (the effect exists only for treated units).
    """
    est, true = _truth_pair(estimate, frame, truth)
    return ScoreValue("mse_tau", float(np.mean((est - true) ** 2)), split, int(est.size))


def ate_error(estimate: EffectEstimate, truth, frame: CausalFrame | None = None, split: str = "valid") -> ScoreValue:
    """Absolute error of the average effect (over treated rows for IV truth)."""
    est, true = _truth_pair(estimate, frame, truth)
    if isinstance(truth, IvGroundTruth):
        treated = frame.treatment[estimate.idx] == 1
        if not treated.any():
            raise NoGroundTruth("no treated rows to average over")
        est, true = est[treated], true[treated]
        n = int(treated.sum())
    else:
        n = int(est.size)
    return ScoreValue(
        "ate",
        float(abs(np.mean(est) - np.mean(true))),
        split,
        n,
        {"estimated": float(np.mean(est)), "true": float(np.mean(true))},
    )
