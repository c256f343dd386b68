"""Stochastic EM for sparse observations: bridge imputation + closed-form M-step."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Callable

import numpy as np

from .bridges import DEFAULT_MAX_ATTEMPTS, BridgeError, impute
from .mle import (EstimateCont, estimate, gompertz_mle, logistic_r_mle,
                  logistic_sigma_qv, vonbert_mle)
from .models import ModelKind, ModelSpec
from .simulate import ObservationSet, Path, RngStream, format_float

MAX_SWEEPS = 10


class EMError(RuntimeError):
    pass


@dataclass(frozen=True)
class EmConfig:
    iterations: int = 100
    burn_in: int | None = None  # defaults to iterations // 2
    delta_target: float = 0.01
    theta0: tuple[float, float] | None = None
    # crossing-bridge budget per interval; the single-bridge default (100) fails
    # too often on steep early-growth gaps
    bridge_attempts: int = 10 * DEFAULT_MAX_ATTEMPTS

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 2:
            raise ValueError("iterations must be an integer >= 2")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.iterations // 2)
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if not self.delta_target > 0:
            raise ValueError("delta_target must be > 0")
        if int(self.bridge_attempts) != self.bridge_attempts or self.bridge_attempts < 1:
            raise ValueError("bridge_attempts must be a positive integer")
        if self.theta0 is not None:
            drift0, sigma0 = (float(v) for v in self.theta0)
            if not (drift0 > 0 and sigma0 > 0):
                raise ValueError("theta0 entries must be > 0")
            object.__setattr__(self, "theta0", (drift0, sigma0))


@dataclass
class EmTrace:
    """Iterates theta_0..theta_K; index 0 is the starting value."""

    kind: ModelKind
    drift: np.ndarray
    sigma: np.ndarray
    burn_in: int

    @property
    def drift_ml(self) -> float:
        return float(np.mean(self.drift[self.burn_in:]))

    @property
    def sigma_ml(self) -> float:
        return float(np.mean(self.sigma[self.burn_in:]))

    def write_csv(self, dest) -> None:
        lines = ["iter,drift,sigma"]
        lines += [f"{k},{format_float(d)},{format_float(s)}"
                  for k, (d, s) in enumerate(zip(self.drift, self.sigma))]
        lines.append(f"ml,{format_float(self.drift_ml)},{format_float(self.sigma_ml)}")
        FsPath(dest).write_text("\n".join(lines) + "\n")


def _run(kind: ModelKind, obs: ObservationSet, cfg: EmConfig, stream: RngStream,
         l_infinity: float, m_step: Callable[[Path], tuple[float, float]]) -> EmTrace:
    if cfg.theta0 is None:
        start: EstimateCont = estimate(kind, obs, l_infinity)
        theta = (start.drift_hat, start.sigma_hat)
    else:
        theta = cfg.theta0
    drift = np.empty(cfg.iterations + 1)
    sigma = np.empty(cfg.iterations + 1)
    drift[0], sigma[0] = theta
    for k in range(1, cfg.iterations + 1):
        try:
            spec = ModelSpec(kind, drift[k - 1], sigma[k - 1], l_infinity)
            base = stream.child(k)
            for sweep in range(MAX_SWEEPS):
                try:
                    path = impute(spec, obs, cfg.delta_target,
                                  base if sweep == 0 else base.child(sweep),
                                  max_attempts=cfg.bridge_attempts)
                    break
                except BridgeError as exc:
                    failure = exc
            else:
                raise EMError(f"{MAX_SWEEPS} imputation sweeps failed: {failure}")
            drift[k], sigma[k] = m_step(path)
        except (ValueError, ArithmeticError, EMError) as exc:
            raise EMError(f"iteration {k}: {exc}") from exc
    return EmTrace(kind, drift, sigma, cfg.burn_in)


def em_gompertz(obs: ObservationSet, cfg: EmConfig, stream: RngStream) -> EmTrace:
    def m_step(path):
        est = gompertz_mle(path)
        return est.drift_hat, est.sigma_hat
    return _run(ModelKind.GOMPERTZ, obs, cfg, stream, 1.0, m_step)


def em_vonbert(obs: ObservationSet, l_infinity: float, cfg: EmConfig,
               stream: RngStream) -> EmTrace:
    def m_step(path):
        est = vonbert_mle(path, l_infinity)
        return est.drift_hat, est.sigma_hat
    return _run(ModelKind.VON_BERTALANFFY, obs, cfg, stream, l_infinity, m_step)


def em_logistic(obs: ObservationSet, cfg: EmConfig, stream: RngStream) -> EmTrace:
    """Crossing-bridge E-step; r from the Itô ratio and sigma from quadratic variation."""
    def m_step(path):
        return logistic_r_mle(path), logistic_sigma_qv(path)
    return _run(ModelKind.LOGISTIC, obs, cfg, stream, 1.0, m_step)


def run_em(kind, obs: ObservationSet, cfg: EmConfig, stream: RngStream,
           l_infinity: float = 1.0) -> EmTrace:
    kind = ModelKind.parse(kind)
    if kind is ModelKind.GOMPERTZ:
        return em_gompertz(obs, cfg, stream)
    if kind is ModelKind.VON_BERTALANFFY:
        return em_vonbert(obs, l_infinity, cfg, stream)
    return em_logistic(obs, cfg, stream)
