"""Budgeted estimator selection and hyperparameter tuning.

The search first fits every family in the space at its default
hyperparameters, then proposes new configurations until the budget runs out.
Each proposal is, with probability ``LOCAL_PROB``, a one-parameter mutation of
the current best configuration and otherwise a uniform draw from the whole
space. Proposals are generated in fixed-size batches from a single seeded
stream, and the "current best" is only updated between batches, so the set of
trials does not depend on the number of worker threads.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import learners
from .dataset import CausalFrame, Split
from .errors import EmptyBudget, InvalidObjective, UnknownFamily
from .estimators import (
    CATE_FAMILIES,
    FAMILIES,
    IV_FAMILIES,
    EstimatorSpec,
    estimate_effect,
    family_defaults,
    fit_estimator,
)
from .scoring import (
    AUDIT_ONLY,
    DEFAULT_MAX_PAIRS,
    DIRECTIONS,
    ScoreValue,
    ate_error,
    energy_score_cate,
    energy_score_iv,
    mse_tau,
    normalized_erupt,
    qini,
)

__all__ = [
    "Float",
    "Int",
    "Choice",
    "FamilySpace",
    "SearchSpace",
    "Budget",
    "TrialRecord",
    "SearchReport",
    "default_space",
    "default_spec",
    "run_search",
    "score_spec",
    "Scorer",
    "payload_hash",
    "applicable_scores",
    "PROBLEM_KINDS",
    "LOCAL_PROB",
    "PROPOSAL_BATCH",
]

PROBLEM_KINDS = ("rct_cate", "confounded_cate", "iv")
LOCAL_PROB = 0.7
PROPOSAL_BATCH = 4
_LINEAR_STEP = 0.1
_LOG_STEP = 0.5


@dataclass(frozen=True)
class Float:
    low: float
    high: float
    log: bool = False

    def sample(self, rng: np.random.Generator) -> float:
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        return float(rng.uniform(self.low, self.high))

    def mutate(self, value, rng: np.random.Generator) -> float:
        if self.log:
            new = float(value) * math.exp(rng.normal(0.0, _LOG_STEP))
        else:
            new = float(value) + rng.normal(0.0, _LINEAR_STEP * (self.high - self.low))
        return float(min(max(new, self.low), self.high))


@dataclass(frozen=True)
class Int:
    low: int
    high: int
    log: bool = False

    def sample(self, rng):
        return int(round(Float(self.low, self.high, self.log).sample(rng)))

    def mutate(self, value, rng):
        return int(round(Float(self.low, self.high, self.log).mutate(value, rng)))


@dataclass(frozen=True)
class Choice:
    options: tuple

    def sample(self, rng):
        return self.options[int(rng.integers(len(self.options)))]

    def mutate(self, value, rng):
        return self.sample(rng)


@dataclass(frozen=True)
class FamilySpace:
    family: str
    domains: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SearchSpace:
    families: tuple[FamilySpace, ...]
    problem_kind: str

    def __post_init__(self):
        if self.problem_kind not in PROBLEM_KINDS:
            raise InvalidObjective(f"unknown problem kind {self.problem_kind!r}")
        if not self.families:
            raise UnknownFamily("search space has no families")
        for fs in self.families:
            if fs.family not in FAMILIES:
                raise UnknownFamily(f"unknown estimator family {fs.family!r}")
            if FAMILIES[fs.family].uses_instrument and self.problem_kind != "iv":
                raise UnknownFamily(f"{fs.family} is an IV family; problem kind is {self.problem_kind}")

    def get(self, family: str) -> FamilySpace:
        for fs in self.families:
            if fs.family == family:
                return fs
        raise UnknownFamily(family)

    def to_dict(self) -> dict:
        return {
            "problem_kind": self.problem_kind,
            "families": [
                {"family": fs.family, "domains": {k: _domain_dict(v) for k, v in sorted(fs.domains.items())}}
                for fs in self.families
            ],
        }


def _domain_dict(d) -> dict:
    if isinstance(d, Choice):
        return {"type": "choice", "options": list(d.options)}
    return {"type": type(d).__name__.lower(), "low": d.low, "high": d.high, "log": d.log}


_REGRESSOR_DOMAINS = {
    "regressor": Choice(("boosted_stumps", "ridge")),
    "ridge_l2": Float(1e-3, 1e3, log=True),
    "n_rounds": Int(10, 200, log=True),
    "learning_rate": Float(0.01, 1.0, log=True),
    "max_depth": Choice((1, 2, 3)),
}
_PROPENSITY_DOMAINS = {
    "propensity": Choice(("prior", "logistic")),
    "propensity_l2": Float(1e-3, 1e2, log=True),
}
_DOMAINS = {
    "s_learner": _REGRESSOR_DOMAINS,
    "t_learner": _REGRESSOR_DOMAINS,
    "x_learner": {**_REGRESSOR_DOMAINS, **_PROPENSITY_DOMAINS},
    "transformed_outcome": {**_REGRESSOR_DOMAINS, **_PROPENSITY_DOMAINS},
    "naive_pw": _PROPENSITY_DOMAINS,
    "wald": {},
    "linear_iv": {"effect_features": Choice(("constant", "linear", "quadratic")), "l2": Float(1e-6, 10.0, log=True)},
}


def default_space(problem_kind: str, families: Sequence[str] | None = None) -> SearchSpace:
    """Built-in search space: every applicable family with its standard ranges."""
    if families is None:
        families = IV_FAMILIES if problem_kind == "iv" else CATE_FAMILIES
    return SearchSpace(
        tuple(FamilySpace(f, dict(_DOMAINS.get(f, {}))) for f in families),
        problem_kind,
    )


def default_spec(family: str, problem_kind: str = "rct_cate") -> EstimatorSpec:
    """Default configuration of ``family`` (regressors: 100 rounds of depth-2
    boosting at rate 0.1; ridge l2 1.0; propensity ``prior`` for randomized
    data, ``logistic`` otherwise; ``linear_iv`` with linear effect features)."""
    return EstimatorSpec(family, family_defaults(family, problem_kind))


@dataclass(frozen=True)
class Budget:
    max_trials: int | None = None
    max_seconds: float | None = None

    def __post_init__(self):
        if self.max_trials is None and self.max_seconds is None:
            raise EmptyBudget("budget needs max_trials and/or max_seconds")
        if self.max_trials is not None and self.max_trials < 1:
            raise EmptyBudget("max_trials must be positive")
        if self.max_seconds is not None and not self.max_seconds > 0:
            raise EmptyBudget("max_seconds must be positive")


@dataclass
class TrialRecord:
    trial_id: int
    spec: EstimatorSpec
    seed: int
    origin: str
    status: str = "ok"
    reason: str | None = None
    scores: list[ScoreValue] = field(default_factory=list)
    wall_time: float = 0.0
    score_errors: dict[str, str] = field(default_factory=dict)

    def score(self, name: str, split: str = "valid") -> ScoreValue | None:
        for s in self.scores:
            if s.name == name and s.split == split:
                return s
        return None

    def to_dict(self) -> dict:
        d = {
            "trial_id": self.trial_id,
            "spec": self.spec.to_dict(),
            "seed": self.seed,
            "origin": self.origin,
            "status": self.status,
            "wall_time": self.wall_time,
            "scores": [s.to_dict() for s in self.scores],
        }
        if self.reason is not None:
            d["reason"] = self.reason
        if self.score_errors:
            d["score_errors"] = dict(sorted(self.score_errors.items()))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(
            trial_id=int(d["trial_id"]),
            spec=EstimatorSpec.from_dict(d["spec"]),
            seed=int(d["seed"]),
            origin=d["origin"],
            status=d["status"],
            reason=d.get("reason"),
            scores=[ScoreValue.from_dict(s) for s in d.get("scores", [])],
            wall_time=float(d.get("wall_time", 0.0)),
            score_errors=dict(d.get("score_errors", {})),
        )


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in ("wall_time", "elapsed_seconds")}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def payload_hash(obj) -> str:
    """SHA-256 of the canonical JSON of ``obj`` with wall-clock fields removed."""
    return hashlib.sha256(_canonical(_strip_timing(obj)).encode()).hexdigest()


@dataclass
class SearchReport:
    trials: list[TrialRecord]
    objective: str
    best_trial_id: int | None
    split: Split
    config: dict
    elapsed_seconds: float = 0.0

    @property
    def direction(self) -> str:
        return DIRECTIONS[self.objective]

    @property
    def best(self) -> TrialRecord | None:
        if self.best_trial_id is None:
            return None
        return next(t for t in self.trials if t.trial_id == self.best_trial_id)

    @property
    def ok_trials(self) -> list[TrialRecord]:
        return [t for t in self.trials if t.status == "ok"]

    def to_dict(self) -> dict:
        d = {
            "objective": self.objective,
            "direction": self.direction,
            "best_trial_id": self.best_trial_id,
            "config": self.config,
            "split": self.split.to_dict(),
            "trials": [t.to_dict() for t in self.trials],
            "elapsed_seconds": self.elapsed_seconds,
        }
        d["payload_sha256"] = payload_hash(d)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchReport":
        return cls(
            trials=[TrialRecord.from_dict(t) for t in d["trials"]],
            objective=d["objective"],
            best_trial_id=d["best_trial_id"],
            split=Split.from_dict(d["split"]),
            config=d["config"],
            elapsed_seconds=float(d.get("elapsed_seconds", 0.0)),
        )


def applicable_scores(problem_kind: str) -> tuple[str, ...]:
    if problem_kind == "iv":
        return ("energy_iv",)
    return ("norm_erupt", "qini", "energy_cate")


def _check_objective(objective: str, problem_kind: str, frame: CausalFrame):
    if objective in AUDIT_ONLY:
        raise InvalidObjective(f"{objective} uses ground truth and cannot drive selection")
    if objective not in applicable_scores(problem_kind):
        raise InvalidObjective(f"objective {objective!r} is not valid for problem kind {problem_kind!r}")
    if objective == "energy_iv" and frame.instrument is None:
        raise InvalidObjective("energy_iv needs an instrument column")


@dataclass
class Scorer:
    """Scores effect estimates of one run with run-wide settings.

    Holds the ERUPT propensities (known column or a logistic model fitted on
    the training rows) and the energy-distance subsampling seed, so every
    trial is scored against exactly the same reference.
    """

    frame: CausalFrame
    split: Split
    objective: str
    problem_kind: str
    truth: Any
    scoring_propensity: np.ndarray | None
    max_pairs: int | None
    energy_seed: int

    def compute(self, name: str, est, split: str, with_raw: bool = True) -> ScoreValue:
        if name == "norm_erupt":
            p = None if self.scoring_propensity is None else self.scoring_propensity[est.idx]
            return normalized_erupt(est, self.frame, p, split)
        if name == "qini":
            return qini(est, self.frame, split)
        if name == "energy_cate":
            return energy_score_cate(est, self.frame, split, self.max_pairs, self.energy_seed, with_raw)
        if name == "energy_iv":
            return energy_score_iv(est, self.frame, split, self.max_pairs, self.energy_seed, with_raw)
        if name == "mse_tau":
            return mse_tau(est, self.truth, self.frame, split)
        if name == "ate":
            return ate_error(est, self.truth, self.frame, split)
        raise InvalidObjective(name)

    def score_split(self, model, split: str, names: Sequence[str], errors: dict, with_raw: bool = True):
        est = estimate_effect(model, self.frame, self.split.part(split))
        out = []
        for name in names:
            try:
                out.append(self.compute(name, est, split, with_raw))
            except Exception as exc:
                if name == self.objective:
                    raise
                errors[f"{name}/{split}"] = f"{type(exc).__name__}: {exc}"
        return out

    def valid_names(self) -> list[str]:
        names = [self.objective] + [s for s in applicable_scores(self.problem_kind) if s != self.objective]
        if self.truth is not None:
            names += list(AUDIT_ONLY)
        return names

    @classmethod
    def for_run(cls, frame, split, problem_kind, objective, truth=None, max_pairs=DEFAULT_MAX_PAIRS, seed=0):
        scoring_prop = None
        if frame.propensity is None and problem_kind != "iv":
            scoring_prop = _fit_scoring_propensity(frame, split)
        return cls(frame, split, objective, problem_kind, truth, scoring_prop, max_pairs, seed)


def _trial_seed(seed: int, trial_id: int) -> int:
    return int(np.random.SeedSequence([seed, trial_id]).generate_state(1, np.uint32)[0])


def _run_trial(ctx: Scorer, trial: TrialRecord) -> TrialRecord:
    start = time.perf_counter()
    try:
        model = fit_estimator(trial.spec, ctx.frame, ctx.split.train_idx, seed=trial.seed)
        errors: dict[str, str] = {}
        scores = ctx.score_split(model, "train", [ctx.objective], errors, with_raw=False)
        scores += ctx.score_split(model, "valid", ctx.valid_names(), errors)
        trial.scores = scores
        trial.score_errors = errors
        if not math.isfinite(trial.score(ctx.objective, "valid").value):
            raise FloatingPointError("objective is not finite")
    except Exception as exc:
        trial.status = "failed"
        trial.reason = f"{type(exc).__name__}: {exc}"
        trial.scores = []
        trial.score_errors = {}
    trial.wall_time = time.perf_counter() - start
    return trial


def _best(trials: Sequence[TrialRecord], objective: str) -> TrialRecord | None:
    best, best_val = None, -math.inf
    for t in sorted(trials, key=lambda t: t.trial_id):
        if t.status != "ok":
            continue
        v = t.score(objective, "valid").oriented()
        if v > best_val:
            best, best_val = t, v
    return best


def _uniform(space: SearchSpace, rng: np.random.Generator) -> EstimatorSpec:
    fs = space.families[int(rng.integers(len(space.families)))]
    hp = family_defaults(fs.family, space.problem_kind)
    for name in sorted(fs.domains):
        hp[name] = fs.domains[name].sample(rng)
    return EstimatorSpec(fs.family, hp)


def _local(space: SearchSpace, best: EstimatorSpec, rng: np.random.Generator) -> EstimatorSpec | None:
    fs = space.get(best.family)
    if not fs.domains:
        return None
    names = sorted(fs.domains)
    name = names[int(rng.integers(len(names)))]
    hp = dict(best.hyperparams)
    hp[name] = fs.domains[name].mutate(hp[name], rng)
    return EstimatorSpec(best.family, hp)


def propose(space: SearchSpace, best: EstimatorSpec | None, rng: np.random.Generator) -> tuple[EstimatorSpec, str]:
    """One proposal: local mutation of ``best`` (prob. 0.7) or uniform draw."""
    if best is not None and rng.random() < LOCAL_PROB:
        spec = _local(space, best, rng)
        if spec is not None:
            return spec, "local"
    return _uniform(space, rng), "random"


def _fit_scoring_propensity(frame: CausalFrame, split: Split) -> np.ndarray:
    spec = learners.LearnerSpec("logistic")
    model = learners.fit(spec, frame.covariates[split.train_idx], frame.treatment[split.train_idx])
    return model.predict(frame.covariates)


def score_spec(
    scorer: Scorer,
    spec: EstimatorSpec,
    seed: int,
    splits: Sequence[str],
    errors: dict | None = None,
    names: Sequence[str] | None = None,
):
    """Refit ``spec`` on the training rows and score it on ``splits``.

    Fitting is deterministic for a fixed ``seed``, so this reproduces the
    scores recorded for a trial.
    """
    errors = {} if errors is None else errors
    model = fit_estimator(spec, scorer.frame, scorer.split.train_idx, seed=seed)
    out = []
    for split in splits:
        out += scorer.score_split(model, split, names or scorer.valid_names(), errors)
    return out


def run_search(
    space: SearchSpace,
    frame: CausalFrame,
    split: Split,
    objective: str,
    budget: Budget,
    seed: int = 0,
    truth=None,
    workers: int = 1,
    max_pairs: int | None = DEFAULT_MAX_PAIRS,
    config: dict | None = None,
) -> SearchReport:
    """Run the two-phase search and re-score the winner on the test rows.

    Every trial trains on ``split.train_idx`` and is ranked by ``objective`` on
    ``split.valid_idx``; the objective is also recorded on the training rows
    for information. Failing fits are recorded as ``failed`` trials. When the
    frame has no known propensity, ERUPT-based scores use a logistic model
    fitted once on the training rows.

    Raises:
        InvalidObjective: objective unknown, audit-only, or not applicable.
        EmptyBudget: budget has no positive limit.
    """
    _check_objective(objective, space.problem_kind, frame)
    if split.n_rows != frame.n_rows:
        raise InvalidObjective(f"split covers {split.n_rows} rows, frame has {frame.n_rows}")
    started = time.perf_counter()
    ctx = Scorer.for_run(frame, split, space.problem_kind, objective, truth, max_pairs, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EA5C4]))
    max_trials = budget.max_trials if budget.max_trials is not None else math.inf

    def out_of_time():
        return budget.max_seconds is not None and time.perf_counter() - started >= budget.max_seconds

    trials: list[TrialRecord] = []

    def execute(batch: list[TrialRecord]):
        if workers > 1 and len(batch) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                done = list(pool.map(lambda t: _run_trial(ctx, t), batch))
        else:
            done = [_run_trial(ctx, t) for t in batch]
        trials.extend(done)

    defaults = [
        TrialRecord(i, default_spec(fs.family, space.problem_kind), _trial_seed(seed, i), "default")
        for i, fs in enumerate(space.families)
    ]
    defaults = defaults[: int(min(len(defaults), max_trials))]
    if workers > 1:
        execute(defaults)
    else:
        for t in defaults:
            if trials and out_of_time():
                break
            execute([t])

    while len(trials) < max_trials and not out_of_time():
        best = _best(trials, objective)
        batch = []
        for _ in range(int(min(PROPOSAL_BATCH, max_trials - len(trials)))):
            spec, origin = propose(space, None if best is None else best.spec, rng)
            tid = len(trials) + len(batch)
            batch.append(TrialRecord(tid, spec, _trial_seed(seed, tid), origin))
        execute(batch)

    trials.sort(key=lambda t: t.trial_id)
    winner = _best(trials, objective)
    if winner is not None:
        errors: dict[str, str] = {}
        winner.scores += score_spec(ctx, winner.spec, winner.seed, ["test"], errors)
        winner.score_errors.update(errors)

    cfg = {
        "problem_kind": space.problem_kind,
        "objective": objective,
        "seed": seed,
        "max_trials": budget.max_trials,
        "max_seconds": budget.max_seconds,
        "max_pairs": max_pairs,
        "space": space.to_dict(),
        "scoring_propensity": "known" if frame.propensity is not None else (
            None if ctx.scoring_propensity is None else "logistic(l2=1.0) fitted on train"
        ),
        "has_ground_truth": truth is not None,
    }
    cfg.update(config or {})
    return SearchReport(
        trials=trials,
        objective=objective,
        best_trial_id=None if winner is None else winner.trial_id,
        split=split,
        config=cfg,
        elapsed_seconds=time.perf_counter() - started,
    )
