"""Causal effect estimators with a shared fit / estimate contract.

Every family is fitted on a set of training rows of a :class:`CausalFrame`
and produces a per-row impact estimate on any rows of the same frame. The
CATE families (meta-learners, transformed outcome, naive baseline) treat ``T``
as the treatment; the IV families (``wald``, ``linear_iv``) use the instrument
column ``Z`` to identify the effect of ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from . import learners
from .dataset import CausalFrame
from .errors import (
    ConfigError,
    MissingInstrument,
    MissingPropensity,
    ShapeMismatch,
    SingleArmTrainingData,
    UnknownFamily,
    WeakInstrument,
)
from .learners import LearnerSpec

__all__ = [
    "EstimatorSpec",
    "EffectEstimate",
    "FittedEstimator",
    "fit_estimator",
    "estimate_effect",
    "family_defaults",
    "register_family",
    "FAMILIES",
    "CATE_FAMILIES",
    "IV_FAMILIES",
    "NAIVE_NOISE_SD",
]

NAIVE_NOISE_SD = 0.01
WEAK_INSTRUMENT_TOL = 1e-6

_REGRESSOR_DEFAULTS = {
    "regressor": "boosted_stumps",
    "ridge_l2": 1.0,
    "n_rounds": 100,
    "learning_rate": 0.1,
    "max_depth": 2,
}
_PROPENSITY_DEFAULTS = {"propensity": "logistic", "propensity_l2": 1.0}


@dataclass(frozen=True)
class _Family:
    name: str
    fit: Callable[..., tuple]
    defaults: Mapping[str, Any]
    uses_instrument: bool = False
    uses_propensity: bool = False


FAMILIES: dict[str, _Family] = {}


def register_family(
    name: str,
    fit: Callable[..., tuple],
    defaults: Mapping[str, Any] | None = None,
    uses_instrument: bool = False,
    uses_propensity: bool = False,
) -> None:
    """Add (or replace) an estimator family.

    ``fit(spec, frame, train_idx, rng)`` returns ``(effect_fn, details)`` where
    ``effect_fn(frame, idx)`` gives per-row impacts and ``details`` is a dict of
    diagnostics.
    """
    FAMILIES[name] = _Family(name, fit, dict(defaults or {}), uses_instrument, uses_propensity)


def family_defaults(family: str, problem_kind: str | None = None) -> dict[str, Any]:
    """Documented default hyperparameters; the propensity model is ``prior``
    for randomized problems and ``logistic`` otherwise."""
    if family not in FAMILIES:
        raise UnknownFamily(f"unknown estimator family {family!r}")
    fam = FAMILIES[family]
    out = dict(fam.defaults)
    if fam.uses_propensity and problem_kind == "rct_cate":
        out["propensity"] = "prior"
    return out


@dataclass(frozen=True)
class EstimatorSpec:
    """Estimator family plus its hyperparameters.

    Missing hyperparameters are filled from :func:`family_defaults`; unknown
    keys are rejected.
    """

    family: str
    hyperparams: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        defaults = family_defaults(self.family)
        unknown = set(self.hyperparams) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown hyperparameters for {self.family}: {sorted(unknown)}")
        object.__setattr__(self, "hyperparams", {**defaults, **dict(self.hyperparams)})

    @property
    def is_iv(self) -> bool:
        return FAMILIES[self.family].uses_instrument

    def to_dict(self) -> dict:
        return {"family": self.family, "hyperparams": dict(sorted(self.hyperparams.items()))}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EstimatorSpec":
        return cls(d["family"], d.get("hyperparams", {}))


@dataclass(frozen=True, eq=False)
class EffectEstimate:
    """Per-row impact ``i_j``, its mean and the corrected outcome ``y_j - i_j T_j``."""

    idx: np.ndarray
    impact: np.ndarray
    corrected_outcome: np.ndarray
    mean_impact: float

    @classmethod
    def from_impact(cls, frame: CausalFrame, idx, impact) -> "EffectEstimate":
        idx = np.asarray(idx, dtype=np.int64)
        impact = np.asarray(impact, dtype=float).reshape(-1)
        if impact.shape[0] != idx.shape[0]:
            raise ShapeMismatch(f"{impact.shape[0]} impacts for {idx.shape[0]} rows")
        corrected = frame.outcome[idx] - impact * frame.treatment[idx]
        return cls(idx=idx, impact=impact, corrected_outcome=corrected, mean_impact=float(np.mean(impact)))


@dataclass(frozen=True, eq=False)
class FittedEstimator:
    spec: EstimatorSpec
    n_features: int
    effect_fn: Callable[[CausalFrame, np.ndarray], np.ndarray]
    details: Mapping[str, Any] = field(default_factory=dict)

    def effect(self, frame: CausalFrame, idx) -> np.ndarray:
        if frame.n_covariates != self.n_features:
            raise ShapeMismatch(f"estimator fitted on {self.n_features} covariates, frame has {frame.n_covariates}")
        return np.asarray(self.effect_fn(frame, np.asarray(idx, dtype=np.int64)), dtype=float)


def _regressor_spec(hp: Mapping[str, Any]) -> LearnerSpec:
    if hp["regressor"] == "ridge":
        return LearnerSpec("ridge", {"l2": hp["ridge_l2"]})
    if hp["regressor"] == "boosted_stumps":
        return LearnerSpec(
            "boosted_stumps",
            {"n_rounds": hp["n_rounds"], "learning_rate": hp["learning_rate"], "max_depth": hp["max_depth"]},
        )
    raise ConfigError(f"unknown regressor {hp['regressor']!r}")


def _propensity_spec(hp: Mapping[str, Any]) -> LearnerSpec:
    if hp["propensity"] == "prior":
        return LearnerSpec("prior")
    if hp["propensity"] == "logistic":
        return LearnerSpec("logistic", {"l2": hp["propensity_l2"]})
    raise ConfigError(f"unknown propensity model {hp['propensity']!r}")


def _require_arms(values: np.ndarray, name: str, min_per_arm: int = 1):
    n1 = int(values.sum())
    n0 = values.shape[0] - n1
    if min(n0, n1) < min_per_arm:
        raise SingleArmTrainingData(f"training rows need both {name} arms (got {n0} zeros, {n1} ones)")


def _clip(p):
    return np.clip(p, learners.PROBA_CLIP_LOW, learners.PROBA_CLIP_HIGH)


def _propensity_provider(spec: EstimatorSpec, frame: CausalFrame, train_idx: np.ndarray):
    """Known propensity column wins; otherwise fit the configured classifier."""
    model = None
    if frame.propensity is None:
        model = learners.fit(
            _propensity_spec(spec.hyperparams), frame.covariates[train_idx], frame.treatment[train_idx]
        )

    def provide(fr: CausalFrame, idx):
        if fr.propensity is not None:
            return _clip(fr.propensity[idx])
        if model is None:
            raise MissingPropensity("estimator was fitted with a known propensity column the frame lacks")
        return model.predict(fr.covariates[idx])

    return provide


def _fit_s_learner(spec, frame, train_idx, rng):
    T = frame.treatment[train_idx]
    _require_arms(T, "treatment")
    X = frame.covariates[train_idx]
    model = learners.fit(_regressor_spec(spec.hyperparams), np.column_stack([X, T]), frame.outcome[train_idx])

    def effect(fr, idx):
        Xi = fr.covariates[idx]
        ones = np.ones(len(idx))
        return model.predict(np.column_stack([Xi, ones])) - model.predict(np.column_stack([Xi, 0 * ones]))

    return effect, {}


def _fit_arms(spec, frame, train_idx):
    T = frame.treatment[train_idx]
    _require_arms(T, "treatment", min_per_arm=2)
    X = frame.covariates[train_idx]
    Y = frame.outcome[train_idx]
    rs = _regressor_spec(spec.hyperparams)
    m0 = learners.fit(rs, X[T == 0], Y[T == 0])
    m1 = learners.fit(rs, X[T == 1], Y[T == 1])
    return m0, m1


def _fit_t_learner(spec, frame, train_idx, rng):
    m0, m1 = _fit_arms(spec, frame, train_idx)
    return lambda fr, idx: m1.predict(fr.covariates[idx]) - m0.predict(fr.covariates[idx]), {}


def _fit_x_learner(spec, frame, train_idx, rng):
    m0, m1 = _fit_arms(spec, frame, train_idx)
    T = frame.treatment[train_idx]
    X = frame.covariates[train_idx]
    Y = frame.outcome[train_idx]
    X0, X1 = X[T == 0], X[T == 1]
    imputed1 = Y[T == 1] - m0.predict(X1)
    imputed0 = m1.predict(X0) - Y[T == 0]
    rs = _regressor_spec(spec.hyperparams)
    tau1 = learners.fit(rs, X1, imputed1)
    tau0 = learners.fit(rs, X0, imputed0)
    prop = _propensity_provider(spec, frame, train_idx)

    def effect(fr, idx):
        Xi = fr.covariates[idx]
        g = prop(fr, idx)
        return g * tau0.predict(Xi) + (1 - g) * tau1.predict(Xi)

    return effect, {}


def transformed_outcome(treatment, outcome, propensity) -> np.ndarray:
    """``T Y / p - (1 - T) Y / (1 - p)``; its mean is the IPW ATE."""
    return treatment * outcome / propensity - (1 - treatment) * outcome / (1 - propensity)


def _fit_transformed_outcome(spec, frame, train_idx, rng):
    _require_arms(frame.treatment[train_idx], "treatment")
    prop = _propensity_provider(spec, frame, train_idx)
    p = prop(frame, train_idx)
    ystar = transformed_outcome(frame.treatment[train_idx], frame.outcome[train_idx], p)
    model = learners.fit(_regressor_spec(spec.hyperparams), frame.covariates[train_idx], ystar)
    return lambda fr, idx: model.predict(fr.covariates[idx]), {}


def _fit_naive_pw(spec, frame, train_idx, rng):
    _require_arms(frame.treatment[train_idx], "treatment")
    prop = _propensity_provider(spec, frame, train_idx)
    p = prop(frame, train_idx)
    ipw = float(np.mean(transformed_outcome(frame.treatment[train_idx], frame.outcome[train_idx], p)))
    eta = float(rng.normal(0.0, NAIVE_NOISE_SD))
    value = ipw * (1.0 + eta)
    return lambda fr, idx: np.full(len(idx), value), {"ipw_ate": ipw, "noise": eta}


def _instrumented(frame, train_idx):
    if frame.instrument is None:
        raise MissingInstrument("IV estimators need an instrument column")
    Z = frame.instrument[train_idx]
    _require_arms(Z, "instrument")
    return Z


def wald_ratio(outcome, treatment, instrument) -> float:
    """``(E[Y|Z=1] - E[Y|Z=0]) / (E[T|Z=1] - E[T|Z=0])``.

    Raises:
        WeakInstrument: the denominator is below ``WEAK_INSTRUMENT_TOL`` in magnitude.
    """
    z = instrument == 1
    den = treatment[z].mean() - treatment[~z].mean()
    if abs(den) < WEAK_INSTRUMENT_TOL:
        raise WeakInstrument(f"first-stage difference {den!r} is too small")
    return float((outcome[z].mean() - outcome[~z].mean()) / den)


def _fit_wald(spec, frame, train_idx, rng):
    Z = _instrumented(frame, train_idx)
    value = wald_ratio(frame.outcome[train_idx], frame.treatment[train_idx], Z)
    return lambda fr, idx: np.full(len(idx), value), {}


def effect_features(X: np.ndarray, kind: str) -> np.ndarray:
    """Effect modifiers for ``linear_iv``: none, the covariates, or covariates plus pairwise products."""
    n, d = X.shape
    if kind == "constant":
        return np.empty((n, 0))
    if kind == "linear":
        return X
    if kind == "quadratic":
        iu, ju = np.triu_indices(d)
        return np.column_stack([X, X[:, iu] * X[:, ju]])
    raise ConfigError(f"unknown effect_features {kind!r}")


def _fit_linear_iv(spec, frame, train_idx, rng):
    """Two-stage least squares with an effect linear in the effect features.

    Endogenous regressors are ``T * [1, phi(x)]``, excluded instruments
    ``Z * [1, phi(x)]`` and exogenous controls ``[x, phi(x)]``. Stage one
    projects every endogenous column on instruments and controls; stage two
    regresses ``Y`` on the projections and the controls.
    """
    hp = spec.hyperparams
    Z = _instrumented(frame, train_idx).astype(float)
    X = frame.covariates[train_idx]
    T = frame.treatment[train_idx].astype(float)
    Y = frame.outcome[train_idx]
    kind = hp["effect_features"]
    phi = effect_features(X, kind)
    basis = np.column_stack([np.ones(len(T)), phi])
    controls = X if kind != "quadratic" else phi
    endog = basis * T[:, None]
    instr = basis * Z[:, None]
    l2 = float(hp["l2"])
    stage1 = np.column_stack([instr, controls])
    b1, c1 = learners.ridge_solve(stage1, endog, l2)
    endog_hat = stage1 @ b1 + c1
    stage2 = np.column_stack([endog_hat, controls])
    b2, c2 = learners.ridge_solve(stage2, Y, l2)
    k = basis.shape[1]
    effect_coef = b2[:k]

    # homoskedastic 2SLS standard errors (structural residuals use the observed T)
    resid = Y - (np.column_stack([endog, controls]) @ b2 + c2)
    design = np.column_stack([np.ones(len(Y)), stage2])
    dof = max(len(Y) - design.shape[1], 1)
    sigma2 = float(resid @ resid) / dof
    try:
        cov = sigma2 * np.linalg.inv(design.T @ design)
        stderr = np.sqrt(np.clip(np.diag(cov)[1 : k + 1], 0, None))
    except np.linalg.LinAlgError:
        stderr = np.full(k, np.nan)

    def effect(fr, idx):
        Xi = fr.covariates[idx]
        return np.column_stack([np.ones(len(idx)), effect_features(Xi, kind)]) @ effect_coef

    return effect, {"effect_coef": effect_coef.tolist(), "effect_stderr": stderr.tolist()}


register_family("s_learner", _fit_s_learner, _REGRESSOR_DEFAULTS)
register_family("t_learner", _fit_t_learner, _REGRESSOR_DEFAULTS)
register_family("x_learner", _fit_x_learner, {**_REGRESSOR_DEFAULTS, **_PROPENSITY_DEFAULTS}, uses_propensity=True)
register_family(
    "transformed_outcome", _fit_transformed_outcome, {**_REGRESSOR_DEFAULTS, **_PROPENSITY_DEFAULTS}, uses_propensity=True
)
register_family("naive_pw", _fit_naive_pw, _PROPENSITY_DEFAULTS, uses_propensity=True)
register_family("wald", _fit_wald, {}, uses_instrument=True)
register_family("linear_iv", _fit_linear_iv, {"effect_features": "linear", "l2": 1e-3}, uses_instrument=True)

CATE_FAMILIES = ("s_learner", "t_learner", "x_learner", "transformed_outcome", "naive_pw")
IV_FAMILIES = ("wald", "linear_iv")


def fit_estimator(spec: EstimatorSpec, frame: CausalFrame, train_idx, seed: int = 0) -> FittedEstimator:
    """Fit ``spec`` on ``train_idx`` rows.

    ``seed`` drives any randomness inside the fit (the naive baseline's
    multiplicative noise).

    Raises:
        MissingInstrument, SingleArmTrainingData, WeakInstrument, SingularSystem.
    """
    if spec.family not in FAMILIES:
        raise UnknownFamily(f"unknown estimator family {spec.family!r}")
    train_idx = np.asarray(train_idx, dtype=np.int64)
    rng = np.random.default_rng(seed)
    effect_fn, details = FAMILIES[spec.family].fit(spec, frame, train_idx, rng)
    return FittedEstimator(spec=spec, n_features=frame.n_covariates, effect_fn=effect_fn, details=details)


def estimate_effect(model: FittedEstimator, frame: CausalFrame, idx) -> EffectEstimate:
    """Impact estimates and corrected outcomes for rows ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    return EffectEstimate.from_impact(frame, idx, model.effect(frame, idx))
