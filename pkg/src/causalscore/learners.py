"""Small supervised component models used inside the causal estimators.

Regressors: ``ridge`` and ``boosted_stumps`` (gradient boosting of shallow
axis-aligned trees on squared loss). Classifiers: ``logistic`` (penalized IRLS)
and ``prior`` (constant class frequency). Classifier outputs are clipped to
``[PROBA_CLIP_LOW, PROBA_CLIP_HIGH]`` so inverse-propensity weights stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, NonBinaryTarget, ShapeMismatch, SingularSystem

__all__ = [
    "LearnerSpec",
    "FittedLearner",
    "fit",
    "predict",
    "ridge_solve",
    "REGRESSORS",
    "CLASSIFIERS",
    "PROBA_CLIP_LOW",
    "PROBA_CLIP_HIGH",
]

PROBA_CLIP_LOW = 0.01
PROBA_CLIP_HIGH = 0.99

REGRESSORS = ("ridge", "boosted_stumps")
CLASSIFIERS = ("logistic", "prior")

_DEFAULTS: dict[str, dict[str, Any]] = {
    "ridge": {"l2": 1.0},
    "boosted_stumps": {"n_rounds": 100, "learning_rate": 0.1, "max_depth": 2},
    "logistic": {"l2": 1.0, "max_iter": 100},
    "prior": {},
}

# fixed tree-growing constants
MAX_BINS = 255
MIN_SAMPLES_LEAF = 1
_IRLS_TOL = 1e-8


def _check_params(kind: str, params: Mapping[str, Any]) -> dict[str, Any]:
    if kind not in _DEFAULTS:
        raise ConfigError(f"unknown learner kind {kind!r}")
    unknown = set(params) - set(_DEFAULTS[kind])
    if unknown:
        raise ConfigError(f"unknown parameters for {kind}: {sorted(unknown)}")
    p = {**_DEFAULTS[kind], **params}
    if kind in ("ridge", "logistic") and not float(p["l2"]) >= 0:
        raise ConfigError("l2 must be >= 0")
    if kind == "logistic" and int(p["max_iter"]) < 1:
        raise ConfigError("max_iter must be >= 1")
    if kind == "boosted_stumps":
        if int(p["n_rounds"]) < 1:
            raise ConfigError("n_rounds must be >= 1")
        if not 0 < float(p["learning_rate"]) <= 1:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if int(p["max_depth"]) not in (1, 2, 3):
            raise ConfigError("max_depth must be 1, 2 or 3")
        p["n_rounds"] = int(p["n_rounds"])
        p["max_depth"] = int(p["max_depth"])
        p["learning_rate"] = float(p["learning_rate"])
    if kind == "logistic":
        p["max_iter"] = int(p["max_iter"])
    if "l2" in p:
        p["l2"] = float(p["l2"])
    return p


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", _check_params(self.kind, dict(self.params)))

    @property
    def is_classifier(self) -> bool:
        return self.kind in CLASSIFIERS

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(sorted(self.params.items()))}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LearnerSpec":
        return cls(d["kind"], d.get("params", {}))


def ridge_solve(X: np.ndarray, y: np.ndarray, l2: float) -> tuple[np.ndarray, np.ndarray]:
    """Penalized least squares with an unpenalized intercept.

    Solves ``(Xc'Xc + l2 I) b = Xc'yc`` on centered data. ``y`` may be a
    matrix, in which case each column is fitted independently.

    Returns:
        ``(coef, intercept)`` with shapes ``(d,)``/``()`` or ``(d, k)``/``(k,)``.
    """
    x_mean = X.mean(axis=0)
    y_mean = y.mean(axis=0)
    Xc = X - x_mean
    yc = y - y_mean
    A = Xc.T @ Xc
    if l2 > 0:
        A[np.diag_indices_from(A)] += l2
    elif np.linalg.matrix_rank(Xc) < X.shape[1]:
        raise SingularSystem("design matrix is rank deficient and l2 = 0")
    try:
        coef = np.linalg.solve(A, Xc.T @ yc)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    return coef, y_mean - x_mean @ coef


class _Ridge:
    def __init__(self, X, y, l2):
        self.coef, self.intercept = ridge_solve(X, y, l2)

    def predict(self, X):
        return X @ self.coef + self.intercept


class _Prior:
    def __init__(self, y):
        self.rate = float(np.mean(y))

    def predict(self, X):
        return np.full(X.shape[0], self.rate)


class _Logistic:
    """Newton-Raphson / IRLS for L2-penalized logistic regression."""

    def __init__(self, X, y, l2, max_iter):
        n, d = X.shape
        A = np.column_stack([np.ones(n), X])
        penalty = np.full(d + 1, l2)
        penalty[0] = 0.0
        beta = np.zeros(d + 1)
        self.n_iter = 0
        for it in range(max_iter):
            eta = np.clip(A @ beta, -30, 30)
            p = 1.0 / (1.0 + np.exp(-eta))
            w = p * (1 - p)
            grad = A.T @ (y - p) - penalty * beta
            H = (A * w[:, None]).T @ A + np.diag(penalty)
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            beta = beta + step
            self.n_iter = it + 1
            if np.max(np.abs(step)) < _IRLS_TOL:
                break
        self.intercept = float(beta[0])
        self.coef = beta[1:]

    def predict(self, X):
        eta = np.clip(X @ self.coef + self.intercept, -30, 30)
        return 1.0 / (1.0 + np.exp(-eta))


def _thresholds(x: np.ndarray) -> np.ndarray:
    u = np.unique(x)
    if u.size <= MAX_BINS + 1:
        return (u[:-1] + u[1:]) / 2.0
    q = np.quantile(x, np.linspace(0, 1, MAX_BINS + 2)[1:-1])
    return np.unique(q)


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: int

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[np.arange(X.shape[0]), np.maximum(f, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, nxt, node)
        return node

    def predict(self, X):
        return self.value[self.apply(X)]


class _BoostedTrees:
    """Least-squares gradient boosting of depth-limited trees on binned features.

    Candidate thresholds are midpoints between distinct values (or quantile
    cut points when a feature has more than ``MAX_BINS + 1`` distinct values).
    Trees grow level by level; each leaf predicts the mean residual of its rows.
    """

    def __init__(self, X, y, n_rounds, learning_rate, max_depth):
        n, d = X.shape
        self.thresholds = [_thresholds(X[:, f]) for f in range(d)]
        n_thr = np.array([len(t) for t in self.thresholds])
        B = int(n_thr.max()) + 1
        bins = np.column_stack([np.searchsorted(t, X[:, f], side="left") for f, t in enumerate(self.thresholds)])
        flat_bins = (bins + (np.arange(d) * B)[None, :]).ravel()
        # split s on feature f is valid iff s < n_thr[f]
        valid_split = np.arange(B)[None, :] < n_thr[:, None]
        self.base = float(np.mean(y))
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.trees: list[_Tree] = []
        self.train_loss = []
        F = np.full(n, self.base)
        for _ in range(n_rounds):
            r = y - F
            self.train_loss.append(float(np.mean(r**2)))
            tree, leaf_of_row = self._grow(r, bins, flat_bins, B, valid_split)
            self.trees.append(tree)
            F = F + learning_rate * tree.value[leaf_of_row]
        self.train_loss.append(float(np.mean((y - F) ** 2)))

    def _grow(self, r, bins, flat_bins, B, valid_split):
        n, d = bins.shape
        feature, threshold, split_bin = [-1], [0.0], [-1]
        left, right, value = [-1], [-1], [float(r.mean())]
        node = np.zeros(n, dtype=np.int64)
        active = [0]
        r_rep = np.repeat(r, d)
        for _ in range(self.max_depth):
            k = max(active) + 1
            key = np.repeat(node, d) * (d * B) + flat_bins
            G = np.bincount(key, weights=r_rep, minlength=k * d * B).reshape(k, d, B)
            C = np.bincount(key, minlength=k * d * B).reshape(k, d, B).astype(float)
            GL = np.cumsum(G, axis=2)
            CL = np.cumsum(C, axis=2)
            Gt = GL[:, :, -1:]
            Ct = CL[:, :, -1:]
            GR = Gt - GL
            CR = Ct - CL
            ok = (CL >= MIN_SAMPLES_LEAF) & (CR >= MIN_SAMPLES_LEAF) & valid_split[None]
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = np.where(ok, GL**2 / CL + GR**2 / CR - Gt**2 / Ct, -np.inf)
            new_active = []
            for nd in active:
                best = int(np.argmax(gain[nd]))
                f, s = divmod(best, B)
                if not gain[nd, f, s] > 1e-12:
                    continue
                li = len(feature)
                feature[nd], threshold[nd], split_bin[nd] = f, float(self.thresholds[f][s]), s
                left[nd], right[nd] = li, li + 1
                gl, cl = GL[nd, f, s], CL[nd, f, s]
                feature += [-1, -1]
                threshold += [0.0, 0.0]
                split_bin += [-1, -1]
                left += [-1, -1]
                right += [-1, -1]
                value += [gl / cl, (Gt[nd, f, 0] - gl) / (Ct[nd, f, 0] - cl)]
                new_active += [li, li + 1]
            if not new_active:
                break
            f_arr = np.asarray(feature)
            s_arr = np.asarray(split_bin)
            rows = np.flatnonzero(f_arr[node] >= 0)
            nd_rows = node[rows]
            go_left = bins[rows, f_arr[nd_rows]] <= s_arr[nd_rows]
            node[rows] = np.where(go_left, np.asarray(left)[nd_rows], np.asarray(right)[nd_rows])
            active = new_active
        tree = _Tree(
            feature=np.asarray(feature, dtype=np.int64),
            threshold=np.asarray(threshold),
            left=np.asarray(left, dtype=np.int64),
            right=np.asarray(right, dtype=np.int64),
            value=np.asarray(value),
            depth=self.max_depth,
        )
        return tree, node

    def predict(self, X):
        out = np.full(X.shape[0], self.base)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out


@dataclass(frozen=True, eq=False)
class FittedLearner:
    spec: LearnerSpec
    n_features: int
    model: Any

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def fit(spec: LearnerSpec, X, target) -> FittedLearner:
    """Fit a component model; deterministic for fixed inputs.

    Raises:
        SingularSystem: ridge with ``l2 = 0`` on a rank-deficient design.
        NonBinaryTarget: classifier target outside ``{0, 1}``.
        ShapeMismatch: row counts disagree or fewer than 2 rows.
    """
    X = _as_matrix(X)
    y = np.asarray(target, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"X has {X.shape[0]} rows, target has {y.shape[0]}")
    if y.shape[0] < 2:
        raise ShapeMismatch("need at least 2 training rows")
    if spec.is_classifier and np.any((y != 0) & (y != 1)):
        raise NonBinaryTarget(f"{spec.kind} needs a 0/1 target")
    p = spec.params
    if spec.kind == "ridge":
        model = _Ridge(X, y, p["l2"])
    elif spec.kind == "boosted_stumps":
        model = _BoostedTrees(X, y, p["n_rounds"], p["learning_rate"], p["max_depth"])
    elif spec.kind == "logistic":
        model = _Logistic(X, y, p["l2"], p["max_iter"])
    else:
        model = _Prior(y)
    return FittedLearner(spec=spec, n_features=X.shape[1], model=model)


def predict(model: FittedLearner, X) -> np.ndarray:
    """Predictions for ``X``; classifier probabilities are clipped.

    Raises:
        ShapeMismatch: column count differs from training.
    """
    X = _as_matrix(X)
    if X.shape[1] != model.n_features:
        raise ShapeMismatch(f"model trained on {model.n_features} columns, got {X.shape[1]}")
    out = model.model.predict(X)
    if model.spec.is_classifier:
        out = np.clip(out, PROBA_CLIP_LOW, PROBA_CLIP_HIGH)
    return out
