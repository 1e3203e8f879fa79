"""Exact Gaussian-process regression with an RBF-ARD kernel.

Kernel: ``k(s, s') = sf^2 * exp(-sum_d (s_d - s'_d)^2 / l_d^2)``; note there
is no 1/2 in the exponent. Hyperparameters live in log space.

The objective is the standard log evidence
``-1/2 y^T Ky^-1 y - 1/2 log|Ky| - n/2 log(2 pi)`` with ``Ky = K + sv^2 I``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, optimize

from .errors import DimensionMismatch, NonFiniteObjective, NotPositiveDefinite, ValidationError

JITTER_START = 1e-10
JITTER_MAX = 1e-4

_LOG_BOUNDS_LENGTH = (math.log(1e-3), math.log(1e4))
_LOG_BOUNDS_SIGNAL = (math.log(1e-4), math.log(1e4))
_LOG_BOUNDS_NOISE = (math.log(1e-6), math.log(1e4))


@dataclass(frozen=True)
class GpHyperparams:
    log_length_scales: np.ndarray
    log_signal_std: float
    log_noise_std: float

    def __post_init__(self):
        ll = np.array(self.log_length_scales, dtype=float).ravel()
        ll.flags.writeable = False
        object.__setattr__(self, "log_length_scales", ll)
        object.__setattr__(self, "log_signal_std", float(self.log_signal_std))
        object.__setattr__(self, "log_noise_std", float(self.log_noise_std))
        if not (np.all(np.isfinite(ll)) and math.isfinite(self.log_signal_std) and math.isfinite(self.log_noise_std)):
            raise ValidationError("hyperparameters must be finite")

    @classmethod
    def from_natural(cls, length_scales, signal_std: float, noise_std: float) -> "GpHyperparams":
        ls = np.asarray(length_scales, dtype=float)
        if np.any(ls <= 0) or signal_std <= 0 or noise_std < 0:
            raise ValidationError("length scales and signal std must be positive, noise std nonnegative")
        # noise_std == 0 maps to the lower bound; the jitter keeps Ky factorizable
        return cls(np.log(ls), math.log(signal_std), math.log(max(noise_std, 1e-300)))

    @classmethod
    def from_vector(cls, theta) -> "GpHyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-2], theta[-2], theta[-1])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.log_length_scales, [self.log_signal_std, self.log_noise_std]])

    @property
    def dim(self) -> int:
        return self.log_length_scales.size

    @property
    def length_scales(self) -> np.ndarray:
        return np.exp(self.log_length_scales)

    @property
    def signal_std(self) -> float:
        return math.exp(self.log_signal_std)

    @property
    def noise_std(self) -> float:
        return math.exp(self.log_noise_std)


def rbf_ard(s, s_prime, theta: GpHyperparams) -> float:
    s = np.asarray(s, dtype=float).ravel()
    t = np.asarray(s_prime, dtype=float).ravel()
    if s.shape != t.shape or s.size != theta.dim:
        raise DimensionMismatch(f"inputs of size {s.size}, {t.size} for a {theta.dim}-dim kernel")
    r2 = np.sum(((s - t) / theta.length_scales) ** 2)
    return theta.signal_std ** 2 * math.exp(-r2)


def _sq_dists(a: np.ndarray, b: np.ndarray, length_scales: np.ndarray) -> np.ndarray:
    """Per-dimension scaled squared differences, shape (n_a, n_b, D)."""
    return ((a[:, None, :] - b[None, :, :]) / length_scales) ** 2


def gram(a, b, theta: GpHyperparams) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != theta.dim or b.shape[1] != theta.dim:
        raise DimensionMismatch(f"inputs have {a.shape[1]}/{b.shape[1]} columns, kernel has {theta.dim}")
    return theta.signal_std ** 2 * np.exp(-_sq_dists(a, b, theta.length_scales).sum(axis=2))


def _gram_symmetric(S: np.ndarray, theta: GpHyperparams):
    d = _sq_dists(S, S, theta.length_scales)
    K = theta.signal_std ** 2 * np.exp(-d.sum(axis=2))
    K = 0.5 * (K + K.T)
    return K, d


def cholesky_jittered(Ky: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``Ky + jitter*I`` with escalating jitter."""
    jitter = JITTER_START
    eye = np.eye(Ky.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            L = linalg.cholesky(Ky + jitter * eye, lower=True, check_finite=True)
            return L, jitter
        except (linalg.LinAlgError, ValueError):
            jitter *= 10.0
    raise NotPositiveDefinite(f"covariance not positive definite even with jitter {JITTER_MAX:g}")


def _evidence(theta: GpHyperparams, S: np.ndarray, Y: np.ndarray, want_grad: bool):
    n = Y.size
    K, d = _gram_symmetric(S, theta)
    Ky = K + theta.noise_std ** 2 * np.eye(n)
    L, _ = cholesky_jittered(Ky)
    alpha = linalg.cho_solve((L, True), Y)
    value = -0.5 * Y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi)
    if not want_grad:
        return value, None
    W = np.outer(alpha, alpha) - linalg.cho_solve((L, True), np.eye(n))
    grad = np.empty(theta.dim + 2)
    # dK/dlog(l_d) = K * 2 d_d ; dK/dlog(sf) = 2K ; dKy/dlog(sv) = 2 sv^2 I
    grad[:-2] = np.einsum("ij,ijd->d", W * K, 2.0 * d) * 0.5
    grad[-2] = 0.5 * np.sum(W * 2.0 * K)
    grad[-1] = 0.5 * np.trace(W) * 2.0 * theta.noise_std ** 2
    return value, grad


def log_marginal(theta: GpHyperparams, S, Y) -> float:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    _check_training(S, Y, theta, min_n=1)
    return float(_evidence(theta, S, Y, want_grad=False)[0])


def log_marginal_grad(theta: GpHyperparams, S, Y) -> tuple[float, np.ndarray]:
    """Log evidence and its gradient w.r.t. ``theta.to_vector()`` (log space)."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    _check_training(S, Y, theta, min_n=1)
    value, grad = _evidence(theta, S, Y, want_grad=True)
    return float(value), grad


def _check_training(S, Y, theta, min_n):
    if S.shape[0] != Y.size:
        raise DimensionMismatch(f"{S.shape[0]} inputs but {Y.size} targets")
    if Y.size < min_n:
        raise ValidationError(f"need at least {min_n} training points")
    if theta is not None and S.shape[1] != theta.dim:
        raise DimensionMismatch(f"{S.shape[1]} features but {theta.dim} length scales")


@dataclass(frozen=True)
class GpOptConfig:
    restarts: int = 3
    max_iter: int = 200
    seed: int = 0
    restart_scale: float = 1.0


@dataclass(frozen=True)
class GpModel:
    S: np.ndarray
    Y: np.ndarray
    theta: GpHyperparams
    feature_mean: np.ndarray
    feature_std: np.ndarray
    feature_names: Optional[tuple] = None
    L: np.ndarray = field(init=False, repr=False, compare=False)
    alpha: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        K, _ = _gram_symmetric(self.S, self.theta)
        L, _ = cholesky_jittered(K + self.theta.noise_std ** 2 * np.eye(self.Y.size))
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "alpha", linalg.cho_solve((L, True), self.Y))

    def standardize(self, S_raw) -> np.ndarray:
        return (np.atleast_2d(np.asarray(S_raw, dtype=float)) - self.feature_mean) / self.feature_std

    def to_dict(self) -> dict:
        return {
            "hyperparams": {
                "log_length_scales": self.theta.log_length_scales.tolist(),
                "log_signal_std": self.theta.log_signal_std,
                "log_noise_std": self.theta.log_noise_std,
            },
            "standardization": {"mean": self.feature_mean.tolist(), "std": self.feature_std.tolist()},
            "feature_names": list(self.feature_names) if self.feature_names else None,
            "S": self.S.tolist(),
            "Y": self.Y.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpModel":
        hp = d["hyperparams"]
        names = d.get("feature_names")
        return cls(
            np.array(d["S"], dtype=float),
            np.array(d["Y"], dtype=float),
            GpHyperparams(hp["log_length_scales"], hp["log_signal_std"], hp["log_noise_std"]),
            np.array(d["standardization"]["mean"], dtype=float),
            np.array(d["standardization"]["std"], dtype=float),
            tuple(names) if names else None,
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "GpModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_init(Y, dim: int) -> GpHyperparams:
    sd = float(np.std(Y))
    if not sd > 0:
        sd = 1.0
    return GpHyperparams(np.zeros(dim), math.log(sd), math.log(0.1 * sd))


def _bounds(dim: int) -> list:
    return [_LOG_BOUNDS_LENGTH] * dim + [_LOG_BOUNDS_SIGNAL, _LOG_BOUNDS_NOISE]


def _maximize(theta0: np.ndarray, S, Y, max_iter: int):
    """One L-BFGS-B run; returns (theta, value) never worse than the start."""

    def objective(v):
        try:
            value, grad = _evidence(GpHyperparams.from_vector(v), S, Y, want_grad=True)
        except NotPositiveDefinite:
            return np.inf, np.zeros_like(v)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            return np.inf, np.zeros_like(v)
        return -value, -grad

    start_value = -objective(theta0)[0]
    res = optimize.minimize(objective, theta0, jac=True, method="L-BFGS-B",
                            bounds=_bounds(theta0.size - 2), options={"maxiter": max_iter})
    value = -float(res.fun)
    if not np.isfinite(value) or value < start_value:
        return theta0, start_value
    return np.asarray(res.x, dtype=float), value


def fit(S_raw, Y, init: Optional[GpHyperparams] = None, opt_cfg: GpOptConfig = GpOptConfig(),
        feature_names: Optional[Sequence[str]] = None, return_trace: bool = False):
    """Standardize features, then maximize the log evidence with restarts.

    Restart 0 starts at ``init`` (default: unit length scales, sf = std(Y),
    sv = 0.1 std(Y)); further restarts perturb it with seeded Gaussian noise in
    log space. With ``return_trace`` a list of (start, end) evidence values
    per restart is returned alongside the model.
    """
    S_raw = np.atleast_2d(np.asarray(S_raw, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    _check_training(S_raw, Y, init, min_n=2)
    if not np.all(np.isfinite(S_raw)) or not np.all(np.isfinite(Y)):
        raise NonFiniteObjective("training data contains non-finite values")
    mean = S_raw.mean(axis=0)
    std = S_raw.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    S = (S_raw - mean) / std
    if init is None:
        init = default_init(Y, S.shape[1])
    lo, hi = np.array(_bounds(init.dim)).T
    rng = np.random.default_rng(opt_cfg.seed)
    best_theta, best_value, trace = None, -np.inf, []
    for r in range(max(1, opt_cfg.restarts)):
        theta0 = init.to_vector()
        if r > 0:
            theta0 = theta0 + opt_cfg.restart_scale * rng.standard_normal(theta0.size)
        theta0 = np.clip(theta0, lo, hi)
        try:
            start = float(_evidence(GpHyperparams.from_vector(theta0), S, Y, False)[0])
        except NotPositiveDefinite:
            trace.append((None, None))
            continue
        theta, value = _maximize(theta0, S, Y, opt_cfg.max_iter)
        trace.append((start, value))
        if value > best_value:
            best_theta, best_value = theta, value
    if best_theta is None or not np.isfinite(best_value):
        raise NonFiniteObjective("no restart produced a finite log evidence")
    model = GpModel(S, Y, GpHyperparams.from_vector(best_theta), mean, std,
                    tuple(feature_names) if feature_names is not None else None)
    if return_trace:
        return model, trace
    return model


def predict(model: GpModel, s_star):
    """Predictive mean and latent variance at raw feature vector(s).

    A single D-vector gives scalars; an (m, D) array gives two m-vectors.
    """
    x = np.asarray(s_star, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.theta.dim:
        raise DimensionMismatch(f"{x.shape[1]} features, model expects {model.theta.dim}")
    k_star = gram(model.standardize(x), model.S, model.theta)
    mean = k_star @ model.alpha
    v = linalg.solve_triangular(model.L, k_star.T, lower=True)
    var = model.theta.signal_std ** 2 - np.sum(v * v, axis=0)
    var = np.maximum(var, 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def relevance(model: GpModel) -> dict:
    """-ln(length scale) per feature; higher means more relevant."""
    names = model.feature_names or tuple(f"f{i}" for i in range(model.theta.dim))
    return {name: float(-v) for name, v in zip(names, model.theta.log_length_scales)}
