"""Girsanov log-likelihood, AIC and model selection across the three growth SDEs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Callable

import numpy as np

from .mle import estimate
from .models import GirsanovShape, ModelKind, ModelSpec, girsanov_shape
from .simulate import ObservationSet, RngStream, TimeGrid, format_float, simulate


class LikelihoodError(ValueError):
    pass


def girsanov_terms(shape: GirsanovShape, sigma: float, path: ObservationSet) -> tuple[float, float]:
    """(A, B) with logL(alpha) = A*alpha - B*alpha^2/2, using left-endpoint sums."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    x = path.values
    left = x[:-1]
    with np.errstate(all="ignore"):
        f = shape.f_eval(left)
        g = shape.g_eval(left)
    if np.any(g == 0):
        raise LikelihoodError("diffusion shape vanishes on the path")
    w = f / (sigma * sigma * g * g)
    a = float(np.sum(w * np.diff(x)))
    b = float(np.sum(w * f * np.diff(path.times)))
    if not (math.isfinite(a) and math.isfinite(b)):
        raise LikelihoodError("path leaves the model's domain (non-finite likelihood terms)")
    return a, b


def girsanov_loglik(shape: GirsanovShape, alpha: float, sigma: float,
                    path: ObservationSet) -> float:
    a, b = girsanov_terms(shape, sigma, path)
    return alpha * a - 0.5 * alpha * alpha * b


def girsanov_argmax(shape: GirsanovShape, sigma: float, path: ObservationSet) -> float:
    a, b = girsanov_terms(shape, sigma, path)
    if not b > 0:
        raise LikelihoodError("likelihood is not strictly concave in alpha")
    return a / b


def aic(loglik: float, k: int) -> float:
    if k < 0:
        raise ValueError("k must be >= 0")
    return -2.0 * loglik + 2.0 * k


@dataclass(frozen=True)
class FitResult:
    kind: ModelKind
    drift_hat: float
    sigma_hat: float
    loglik: float
    aic: float
    reason: str | None = None


@dataclass(frozen=True)
class SelectionReport:
    fits: tuple[FitResult, ...]  # ranked, best first
    k: int

    @property
    def winner(self) -> ModelKind | None:
        best = self.fits[0]
        return best.kind if math.isfinite(best.aic) else None

    @property
    def margins(self) -> dict[ModelKind, float]:
        best = self.fits[0].aic
        return {f.kind: f.aic - best for f in self.fits}

    def fit(self, kind) -> FitResult:
        kind = ModelKind.parse(kind)
        return next(f for f in self.fits if f.kind is kind)

    def write_csv(self, dest) -> None:
        lines = ["model,drift_hat,sigma_hat,loglik,aic,rank"]
        for rank, f in enumerate(self.fits, start=1):
            lines.append(",".join([f.kind.value, format_float(f.drift_hat),
                                   format_float(f.sigma_hat), format_float(f.loglik),
                                   format_float(f.aic), str(rank)]))
        FsPath(dest).write_text("\n".join(lines) + "\n")


def fit_model(kind, path: ObservationSet, l_infinity: float = 1.0, k: int = 2) -> FitResult:
    kind = ModelKind.parse(kind)
    try:
        est = estimate(kind, path, l_infinity)
        ll = girsanov_loglik(girsanov_shape(kind, l_infinity), est.drift_hat,
                             est.sigma_hat, path)
    except (ValueError, ArithmeticError) as exc:
        return FitResult(kind, math.nan, math.nan, math.nan, math.inf, str(exc))
    return FitResult(kind, est.drift_hat, est.sigma_hat, ll, aic(ll, k))


def fit_all_and_rank(path: ObservationSet, l_infinity: float = 1.0, k: int = 2) -> SelectionReport:
    """Fit every model by its closed-form estimator and rank by AIC (ties by model order)."""
    fits = [fit_model(kind, path, l_infinity, k) for kind in ModelKind]
    fits.sort(key=lambda f: (f.aic, f.kind.order))
    return SelectionReport(tuple(fits), k)


@dataclass(frozen=True)
class SelectionRecord:
    rep: int
    winner: ModelKind | None
    correct: bool
    reason: str | None = None


@dataclass(frozen=True)
class PcResult:
    kind: ModelKind
    records: tuple[SelectionRecord, ...]

    @property
    def pc(self) -> float:
        return sum(r.correct for r in self.records) / len(self.records)

    def write_csv(self, dest) -> None:
        lines = ["rep,winner,correct"]
        lines += [f"{r.rep},{r.winner.value if r.winner else 'none'},{int(r.correct)}"
                  for r in self.records]
        lines.append(f"pc,{self.kind.value},{format_float(self.pc)}")
        FsPath(dest).write_text("\n".join(lines) + "\n")


def selection_replicate(true_spec: ModelSpec, rep: int, grid: TimeGrid, x0: float, k: int,
                        stream: RngStream, scheme: str = "milstein") -> SelectionRecord:
    try:
        path = simulate(true_spec, x0, grid, stream.child(rep), scheme)
        winner = fit_all_and_rank(path, true_spec.l_infinity, k).winner
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        return SelectionRecord(rep, None, False, str(exc))
    return SelectionRecord(rep, winner, winner is true_spec.kind)


def pc_estimate(true_spec: ModelSpec, reps: int, grid: TimeGrid,
                x0_policy: float | Callable[[int], float], k: int, stream: RngStream,
                scheme: str = "milstein") -> PcResult:
    """Monte Carlo probability that AIC picks the generating model.

    ``x0_policy`` is a fixed initial state or a function of the replication index.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    records = []
    for rep in range(reps):
        x0 = x0_policy(rep) if callable(x0_policy) else float(x0_policy)
        records.append(selection_replicate(true_spec, rep, grid, x0, k, stream, scheme))
    return PcResult(true_spec.kind, tuple(records))
