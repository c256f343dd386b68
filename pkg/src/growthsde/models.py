"""Gompertz, Von Bertalanffy and Logistic growth SDEs.

All three share the form ``dX = drift(X) dt + diffusion(X) dW``:

    Gompertz          dX = -b X log(X) dt + sigma X dW
    Von Bertalanffy   dL = kappa (Linf - L) dt + sigma (Linf - L) dW
    Logistic          dP = r P (1 - P) dt + sigma P dW

Gompertz is an Ornstein-Uhlenbeck process in ``log X`` and Von Bertalanffy is
a geometric Brownian motion in ``Linf - L``; ``to_linear``/``from_linear`` map
between the state and those coordinates.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class DomainError(ValueError):
    """A state or parameter lies outside the model's domain."""


class ModelKind(enum.Enum):
    GOMPERTZ = "gompertz"
    VON_BERTALANFFY = "vonbertalanffy"
    LOGISTIC = "logistic"

    @classmethod
    def parse(cls, name: "str | ModelKind") -> "ModelKind":
        if isinstance(name, ModelKind):
            return name
        key = str(name).strip().lower().replace("_", "").replace("-", "").replace(" ", "")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown model {name!r}; expected one of "
                         f"{[k.value for k in cls]}")

    @property
    def order(self) -> int:
        # tie-break order for model selection
        return list(ModelKind).index(self)


# integer codes used by the compiled kernels
KIND_CODE = {ModelKind.GOMPERTZ: 0, ModelKind.VON_BERTALANFFY: 1, ModelKind.LOGISTIC: 2}


@dataclass(frozen=True)
class ModelSpec:
    """One growth SDE with its parameters.

    ``drift_param`` is b (Gompertz), kappa (Von Bertalanffy) or r (Logistic).
    ``l_infinity`` is only used by Von Bertalanffy; the other two models have
    carrying capacity 1.
    """

    kind: ModelKind
    drift_param: float
    sigma: float
    l_infinity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        for name in ("drift_param", "sigma", "l_infinity"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value <= 0:
                raise DomainError(f"{name} must be finite and > 0, got {value}")
            object.__setattr__(self, name, value)

    def with_params(self, drift_param: float, sigma: float) -> "ModelSpec":
        return ModelSpec(self.kind, drift_param, sigma, self.l_infinity)


@dataclass(frozen=True)
class GirsanovShape:
    """Drift shape F and diffusion shape G with drift = alpha*F, diffusion = sigma*G."""

    f_eval: Callable[[np.ndarray], np.ndarray]
    g_eval: Callable[[np.ndarray], np.ndarray]
    kind: ModelKind | None = None


def _as_array(x):
    return np.asarray(x, dtype=float)


def _unwrap(x, out):
    return float(out) if np.ndim(x) == 0 else out


def check_state(spec: ModelSpec, x) -> np.ndarray:
    """Raise DomainError unless every entry of ``x`` is an interior state."""
    arr = _as_array(x)
    if not np.all(np.isfinite(arr)):
        raise DomainError("state is not finite")
    if spec.kind is ModelKind.VON_BERTALANFFY:
        if np.any(arr >= spec.l_infinity):
            raise DomainError(f"Von Bertalanffy state must be < L_inf={spec.l_infinity}")
    elif np.any(arr <= 0):
        raise DomainError(f"{spec.kind.value} state must be > 0")
    return arr


def drift(spec: ModelSpec, x):
    arr = _as_array(x)
    if spec.kind is ModelKind.GOMPERTZ:
        check_state(spec, arr)
        out = -spec.drift_param * arr * np.log(arr)
    elif spec.kind is ModelKind.VON_BERTALANFFY:
        if not np.all(np.isfinite(arr)) or np.any(arr > spec.l_infinity):
            raise DomainError(f"Von Bertalanffy state must be <= L_inf={spec.l_infinity}")
        out = spec.drift_param * (spec.l_infinity - arr)
    else:
        check_state(spec, arr)
        out = spec.drift_param * arr * (1.0 - arr)
    return _unwrap(x, out)


def diffusion(spec: ModelSpec, x):
    arr = _as_array(x)
    if spec.kind is ModelKind.VON_BERTALANFFY:
        if not np.all(np.isfinite(arr)) or np.any(arr > spec.l_infinity):
            raise DomainError(f"Von Bertalanffy state must be <= L_inf={spec.l_infinity}")
        out = spec.sigma * (spec.l_infinity - arr)
    else:
        check_state(spec, arr)
        out = spec.sigma * arr
    return _unwrap(x, out)


def diffusion_deriv(spec: ModelSpec, x):
    """d(diffusion)/dx; constant because every diffusion here is affine."""
    value = -spec.sigma if spec.kind is ModelKind.VON_BERTALANFFY else spec.sigma
    if np.ndim(x) == 0:
        return value
    return np.full(np.shape(x), value)


def to_linear(spec: ModelSpec, x):
    """log(x) for Gompertz, Linf - x for Von Bertalanffy, identity for Logistic."""
    arr = _as_array(x)
    if spec.kind is ModelKind.GOMPERTZ:
        check_state(spec, arr)
        out = np.log(arr)
    elif spec.kind is ModelKind.VON_BERTALANFFY:
        if not np.all(np.isfinite(arr)) or np.any(arr > spec.l_infinity):
            raise DomainError(f"Von Bertalanffy state must be <= L_inf={spec.l_infinity}")
        out = spec.l_infinity - arr
    else:
        out = arr.copy() if arr.ndim else arr
    return _unwrap(x, out)


def from_linear(spec: ModelSpec, y):
    arr = _as_array(y)
    if spec.kind is ModelKind.GOMPERTZ:
        out = np.exp(arr)
    elif spec.kind is ModelKind.VON_BERTALANFFY:
        if np.any(arr < 0):
            raise DomainError("Von Bertalanffy linear coordinate must be >= 0")
        out = spec.l_infinity - arr
    else:
        out = arr.copy() if arr.ndim else arr
    return _unwrap(y, out)


def analytic_mean(spec: ModelSpec, t, x0: float):
    """E[X_t | X_0 = x0]; no closed form is implemented for the Logistic model."""
    t = _as_array(t)
    if np.any(t < 0):
        raise DomainError("t must be >= 0")
    if spec.kind is ModelKind.GOMPERTZ:
        check_state(spec, x0)
        b, s2 = spec.drift_param, spec.sigma ** 2
        decay = np.exp(-b * t)
        out = np.exp(math.log(x0) * decay - s2 / (2 * b) * (1 - decay)
                     - s2 / (4 * b) * np.expm1(-2 * b * t))
    elif spec.kind is ModelKind.VON_BERTALANFFY:
        out = spec.l_infinity - (spec.l_infinity - x0) * np.exp(-spec.drift_param * t)
    else:
        raise NotImplementedError("no closed-form mean for the Logistic model")
    return float(out) if out.ndim == 0 else out


def gompertz_mean_limit(spec: ModelSpec) -> float:
    """lim E[X_t] = exp(-sigma^2 / (4 b))."""
    if spec.kind is not ModelKind.GOMPERTZ:
        raise NotImplementedError("limit only defined here for Gompertz")
    return math.exp(-spec.sigma ** 2 / (4 * spec.drift_param))


def girsanov_shape(kind: ModelKind, l_infinity: float = 1.0) -> GirsanovShape:
    """Shapes with drift = alpha*F(x), alpha > 0, for every model.

    Gompertz uses F(x) = -x log x so that the drift rate b stays positive.
    """
    kind = ModelKind.parse(kind)
    if kind is ModelKind.GOMPERTZ:
        return GirsanovShape(lambda x: -x * np.log(x), lambda x: x, kind)
    if kind is ModelKind.VON_BERTALANFFY:
        return GirsanovShape(lambda x: l_infinity - x, lambda x: l_infinity - x, kind)
    return GirsanovShape(lambda x: x * (1.0 - x), lambda x: x, kind)
