"""Closed-form estimators for high-frequency (complete) observations."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import DomainError, ModelKind, ModelSpec
from .simulate import ObservationSet, linear_coordinate, uniform_step


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class EstimateCont:
    kind: ModelKind
    drift_hat: float
    sigma_hat: float
    n_used: int


@dataclass(frozen=True)
class GompertzRegression:
    """Lag-1 regression of y_i = log x_i on y_{i-1}.

    ``c1`` slope, ``c2`` intercept, ``c3`` mean squared residual.
    """

    c1: float
    c2: float
    c3: float


@dataclass(frozen=True)
class VonBertalanffySums:
    a: float  # sum log g_i
    b: float  # sum log g_{i-1}
    c: float  # sum log^2 g_i
    d: float  # sum log g_{i-1} log g_i
    e: float  # sum log^2 g_{i-1}
    n: int


def _require_points(obs: ObservationSet, minimum: int) -> int:
    n = len(obs) - 1
    if n < minimum:
        raise EstimationError(f"need at least {minimum} increments, got {n}")
    return n


def gompertz_regression(y: np.ndarray, max_iter: int = 100) -> GompertzRegression:
    """AR(1) fit of y with its mean level tied to the noise variance.

    For the log-Gompertz OU process the stationary level is
    -sigma^2/(2b) = -c3/(1 - c1^2); iterating that relation to a fixed point
    gives the maximiser of the exact Gaussian transition likelihood.
    """
    y_prev, y_next = y[:-1], y[1:]
    level = 0.0
    for _ in range(max_iter):
        u_prev, u_next = y_prev - level, y_next - level
        denom = np.dot(u_prev, u_prev)
        if denom == 0:
            raise EstimationError("degenerate regression (constant log path)")
        c1 = float(np.dot(u_prev, u_next) / denom)
        if not 0.0 < c1 < 1.0:
            raise EstimationError(f"lag-1 slope c1={c1:.6g} outside (0, 1): "
                                  "no admissible mean-reversion rate")
        resid = u_next - c1 * u_prev
        c3 = float(np.dot(resid, resid) / resid.size)
        new_level = -c3 / (1.0 - c1 * c1)
        if abs(new_level - level) <= 1e-15 * (1.0 + abs(level)):
            level = new_level
            break
        level = new_level
    return GompertzRegression(c1, level * (1.0 - c1), c3)


def gompertz_mle(obs: ObservationSet) -> EstimateCont:
    dt = uniform_step(obs.times)
    n = _require_points(obs, 3)
    if np.any(obs.values <= 0):
        raise DomainError("Gompertz observations must be > 0")
    reg = gompertz_regression(np.log(obs.values))
    b_hat = -math.log(reg.c1) / dt
    # 1 - exp(-2 b_hat dt) == 1 - c1^2
    sigma2 = 2.0 * b_hat * reg.c3 / (1.0 - reg.c1 ** 2)
    return EstimateCont(ModelKind.GOMPERTZ, b_hat, math.sqrt(sigma2), n)


def gompertz_loglik(obs: ObservationSet, b: float, sigma: float) -> float:
    """Exact discrete log-likelihood of log X under the OU transition."""
    dt = uniform_step(obs.times)
    y = np.log(obs.values)
    phi = math.exp(-b * dt)
    mean = y[:-1] * phi - sigma ** 2 / (2 * b) * (1 - phi)
    var = sigma ** 2 * (-math.expm1(-2 * b * dt)) / (2 * b)
    r = y[1:] - mean
    return float(-0.5 * r.size * math.log(2 * math.pi * var) - np.dot(r, r) / (2 * var))


def vonbert_sums(obs: ObservationSet, l_infinity: float) -> VonBertalanffySums:
    spec = ModelSpec(ModelKind.VON_BERTALANFFY, 1.0, 1.0, l_infinity)
    lg = np.log(linear_coordinate(spec, obs))
    prev, nxt = lg[:-1], lg[1:]
    return VonBertalanffySums(float(nxt.sum()), float(prev.sum()), float(np.dot(nxt, nxt)),
                              float(np.dot(prev, nxt)), float(np.dot(prev, prev)), nxt.size)


def vonbert_sigma2_from_sums(s: VonBertalanffySums, horizon: float) -> float:
    n = s.n
    return (-s.a ** 2 + 2 * s.a * s.b - s.b ** 2 + s.c * n - 2 * s.d * n + s.e * n) / (n * horizon)


def vonbert_mle(obs: ObservationSet, l_infinity: float) -> EstimateCont:
    """MLE of (kappa, sigma) from the log-normal transitions of g = Linf - L."""
    dt = uniform_step(obs.times)
    n = _require_points(obs, 3)
    spec = ModelSpec(ModelKind.VON_BERTALANFFY, 1.0, 1.0, l_infinity)
    d = np.diff(np.log(linear_coordinate(spec, obs)))
    horizon = n * dt
    # same value as the a..e sums formula, without its cancellation
    sigma2 = float(np.dot(d - d.mean(), d - d.mean())) / horizon
    if sigma2 < 0:
        raise EstimationError("negative variance estimate")
    kappa = -float(d.sum()) / horizon - 0.5 * sigma2
    return EstimateCont(ModelKind.VON_BERTALANFFY, kappa, math.sqrt(sigma2), n)


def vonbert_loglik(obs: ObservationSet, l_infinity: float, kappa: float, sigma: float) -> float:
    dt = uniform_step(obs.times)
    spec = ModelSpec(ModelKind.VON_BERTALANFFY, 1.0, 1.0, l_infinity)
    lg = np.log(linear_coordinate(spec, obs))
    r = np.diff(lg) - (-kappa - 0.5 * sigma ** 2) * dt
    var = sigma ** 2 * dt
    return float(-0.5 * r.size * math.log(2 * math.pi * var) - np.dot(r, r) / (2 * var)
                 - lg[1:].sum())


def _check_logistic(obs: ObservationSet) -> None:
    if np.any(obs.values <= 0) or not np.all(np.isfinite(obs.values)):
        raise DomainError("Logistic observations must be finite and > 0")


def logistic_sigma_qv(obs: ObservationSet) -> float:
    """Quadratic-variation estimate of sigma with a trapezoidal int P^2 dt."""
    dt = uniform_step(obs.times)
    _require_points(obs, 1)
    _check_logistic(obs)
    p = obs.values
    num = 2.0 * np.sum(np.diff(p) ** 2)
    den = np.sum(p[1:] ** 2 + p[:-1] ** 2) * dt
    if den == 0:
        raise EstimationError("zero denominator in quadratic-variation estimator")
    return math.sqrt(num / den)


def _logistic_r(left: np.ndarray, dp: np.ndarray, dt: float) -> float:
    den = np.sum((1.0 - left) ** 2) * dt
    if den == 0:
        raise EstimationError("zero denominator in Logistic drift estimator")
    return float(np.sum((1.0 - left) * dp / left) / den)


def logistic_r_mle(obs: ObservationSet, sigma_hat: float | None = None) -> float:
    """Itô (left-endpoint) ratio estimator of r; independent of sigma."""
    dt = uniform_step(obs.times)
    _require_points(obs, 1)
    _check_logistic(obs)
    p = obs.values
    return _logistic_r(p[:-1], np.diff(p), dt)


def logistic_mle(obs: ObservationSet) -> EstimateCont:
    sigma = logistic_sigma_qv(obs)
    return EstimateCont(ModelKind.LOGISTIC, logistic_r_mle(obs, sigma), sigma, len(obs) - 1)


def estimate(kind, obs: ObservationSet, l_infinity: float = 1.0) -> EstimateCont:
    kind = ModelKind.parse(kind)
    if kind is ModelKind.GOMPERTZ:
        return gompertz_mle(obs)
    if kind is ModelKind.VON_BERTALANFFY:
        return vonbert_mle(obs, l_infinity)
    return logistic_mle(obs)
