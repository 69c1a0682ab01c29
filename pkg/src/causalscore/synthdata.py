"""Synthetic benchmark datasets with known treatment effects.

Three generators are provided: a randomized trial (:func:`gen_rct`), the same
outcome model with covariate-dependent assignment (:func:`gen_confounded`) and
an instrumented feature-adoption model (:func:`gen_iv`).

Random draws come from ``numpy.random.Generator(PCG64(SeedSequence(seed)))``
(i.e. ``numpy.random.default_rng(seed)``) and are consumed in a fixed order.
Covariate matrices are drawn column by column (an ``(d, N)`` block, then
transposed). The CATE generators draw, in order: effect weights ``b`` (d),
covariates (d x N), treatment uniforms (N), effect noise (N). The IV generator
draws: covariates (d x N), instrument uniforms (N), unobserved confounder (N),
compliance uniforms (N), always-taker uniforms (N), outcome noise (N).
Binary variables are ``uniform < p``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import CausalFrame
from .errors import ConfigError

__all__ = [
    "DgpConfig",
    "GroundTruth",
    "IvGroundTruth",
    "gen_rct",
    "gen_confounded",
    "gen_iv",
    "mu0",
    "confounded_propensity",
    "ALWAYS_TAKER_RATE",
]

ALWAYS_TAKER_RATE = 0.006
COMPLIANCE_SCALE = 0.8
PROPENSITY_CLIP = (0.1, 0.9)


@dataclass(frozen=True)
class DgpConfig:
    n_rows: int = 1000
    n_covariates: int = 5
    sigma: float = 1.0
    b_low: float = 0.4
    b_high: float = 0.7
    effect_noise_sd: float = 0.05
    seed: int = 0
    # Fixed effect weights replace the U(b_low, b_high) draw (the draw is still consumed).
    effect_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_rows < 10:
            raise ConfigError(f"n_rows must be >= 10, got {self.n_rows}")
        if self.n_covariates < 1:
            raise ConfigError("n_covariates must be >= 1")
        if not self.b_low < self.b_high:
            raise ConfigError(f"need b_low < b_high, got {self.b_low}, {self.b_high}")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.effect_noise_sd < 0:
            raise ConfigError("effect_noise_sd must be non-negative")
        if self.effect_weights is not None and len(self.effect_weights) != self.n_covariates:
            raise ConfigError("effect_weights must have one entry per covariate")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    tau: np.ndarray
    true_propensity: np.ndarray
    mu0: np.ndarray
    effect_weights: np.ndarray

    @property
    def ate(self) -> float:
        return float(np.mean(self.tau))

    def subset(self, idx) -> "GroundTruth":
        return GroundTruth(self.tau[idx], self.true_propensity[idx], self.mu0[idx], self.effect_weights)


@dataclass(frozen=True, eq=False)
class IvGroundTruth:
    theta: np.ndarray
    nu: np.ndarray
    compliance: np.ndarray
    always_taker_draw: np.ndarray

    def subset(self, idx) -> "IvGroundTruth":
        return IvGroundTruth(self.theta[idx], self.nu[idx], self.compliance[idx], self.always_taker_draw[idx])


def mu0(X: np.ndarray) -> np.ndarray:
    """Baseline outcome ``x1*x2 + x3 + x4*x5`` (1-based covariate numbering)."""
    return X[:, 0] * X[:, 1] + X[:, 2] + X[:, 3] * X[:, 4]


def confounded_propensity(X: np.ndarray) -> np.ndarray:
    z = X[:, 0] * X[:, 1] + 3.0 * X[:, 2]
    # 1/(1+exp(z)) written via exp(-|z|) to avoid overflow
    e = np.exp(-np.abs(z))
    p = np.where(z >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    return np.clip(p, *PROPENSITY_CLIP)


def _covariates(rng: np.random.Generator, n: int, d: int, sigma: float) -> np.ndarray:
    return (sigma * rng.standard_normal((d, n))).T.copy()


def _cate(config: DgpConfig, confounded: bool) -> tuple[CausalFrame, GroundTruth]:
    if config.n_covariates < 5:
        raise ConfigError(f"CATE generators need at least 5 covariates, got {config.n_covariates}")
    n, d = config.n_rows, config.n_covariates
    rng = np.random.default_rng(config.seed)
    b = rng.uniform(config.b_low, config.b_high, size=d)
    if config.effect_weights is not None:
        b = np.asarray(config.effect_weights, dtype=float)
    X = _covariates(rng, n, d, config.sigma)
    p = confounded_propensity(X) if confounded else np.full(n, 0.5)
    T = (rng.random(n) < p).astype(np.int64)
    e = rng.normal(0.0, config.effect_noise_sd, size=n)
    tau = X @ b + e
    base = mu0(X)
    Y = tau * T + base
    frame = CausalFrame(
        covariates=X,
        treatment=T,
        outcome=Y,
        propensity=None if confounded else p,
        column_names=tuple(f"X{k}" for k in range(d)),
    )
    return frame, GroundTruth(tau=tau, true_propensity=p, mu0=base, effect_weights=b)


def gen_rct(config: DgpConfig) -> tuple[CausalFrame, GroundTruth]:
    """Randomized trial: ``T ~ Bernoulli(0.5)``, known propensity column 0.5."""
    return _cate(config, confounded=False)


def gen_confounded(config: DgpConfig) -> tuple[CausalFrame, GroundTruth]:
    """Observational variant: assignment follows the clipped logistic propensity.

    The propensity is not included in the frame; it has to be learned.
    """
    return _cate(config, confounded=True)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def default_theta(X: np.ndarray) -> np.ndarray:
    return 7.5 * X[:, 2] * X[:, 8]


def gen_iv(
    config: DgpConfig, theta_fn: Callable[[np.ndarray], np.ndarray] | None = None
) -> tuple[CausalFrame, IvGroundTruth]:
    """Feature-access instrument with one-sided noncompliance.

    ``theta_fn`` replaces the default effect ``7.5 * X[2] * X[8]``; it is a
    test hook and does not change the random stream.
    """
    if config.n_covariates < 10:
        raise ConfigError(f"gen_iv needs at least 10 covariates, got {config.n_covariates}")
    n, d = config.n_rows, config.n_covariates
    rng = np.random.default_rng(config.seed)
    X = _covariates(rng, n, d, config.sigma)
    Z = (rng.random(n) < 0.5).astype(np.int64)
    nu = rng.uniform(0.0, 5.0, size=n)
    C = (rng.random(n) < COMPLIANCE_SCALE * _sigmoid(0.4 * X[:, 0] + nu)).astype(np.int64)
    C0 = (rng.random(n) < ALWAYS_TAKER_RATE).astype(np.int64)
    noise = rng.random(n)
    theta = (theta_fn or default_theta)(X)
    T = C * Z + C0 * (1 - Z)
    y = theta * T + 2.0 * nu + 5.0 * (X[:, 3] > 0) + 0.1 * noise
    frame = CausalFrame(
        covariates=X,
        treatment=T,
        outcome=y,
        instrument=Z,
        column_names=tuple(f"X{k}" for k in range(d)),
    )
    return frame, IvGroundTruth(theta=theta, nu=nu, compliance=C, always_taker_draw=C0)
