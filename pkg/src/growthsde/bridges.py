"""Diffusion bridges between consecutive observations and full-path imputation.

Gompertz and Von Bertalanffy bridges are exact Gaussian bridges in the
linear coordinate (OU in log X, Brownian motion with drift in log(Linf - L)).
The Logistic model uses the forward/time-reversed crossing construction of
Bladt and Sørensen, which is approximate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import KIND_CODE, ModelKind, ModelSpec
from .simulate import (ObservationSet, Path, RngStream, _milstein_kernel,
                       linear_coordinate)

DEFAULT_MAX_ATTEMPTS = 100


class BridgeError(RuntimeError):
    def __init__(self, reason: str, interval: int | None = None):
        super().__init__(reason if interval is None else f"interval {interval}: {reason}")
        self.reason = reason
        self.interval = interval


@dataclass(frozen=True)
class BridgeRequest:
    a: float
    t1: float
    b: float
    t2: float
    substeps: int

    def __post_init__(self):
        if not self.t2 > self.t1:
            raise ValueError("bridge needs t2 > t1")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be a positive integer")

    @property
    def times(self) -> np.ndarray:
        h = (self.t2 - self.t1) / self.substeps
        t = self.t1 + np.arange(self.substeps + 1) * h
        t[-1] = self.t2
        return t


@dataclass
class BridgePath:
    times: np.ndarray
    values: np.ndarray
    attempts_used: int = 1


# --- batched samplers: one row per interval, all with the same substep count ---

def _ou_var(b: float, sigma: float, h):
    return sigma * sigma * (-np.expm1(-2.0 * b * h)) / (2.0 * b)


def _ou_bridge_rows(b: float, sigma: float, a: np.ndarray, end: np.ndarray, tau: float,
                    substeps: int, z: np.ndarray) -> np.ndarray:
    """Sequential conditional sampling of the pinned OU process dY = (-sigma^2/2 - bY)dt + sigma dW."""
    k = a.size
    out = np.empty((k, substeps + 1))
    out[:, 0] = a
    out[:, -1] = end
    level = -sigma * sigma / (2.0 * b)
    h = tau / substeps
    phi_h = math.exp(-b * h)
    v_h = _ou_var(b, sigma, h)
    cur = a - level
    target = end - level
    for l in range(1, substeps):
        rest = tau - l * h
        phi_r = math.exp(-b * rest)
        v_r = _ou_var(b, sigma, rest)
        var = v_h * v_r / (v_r + phi_r * phi_r * v_h)
        mean = var * (cur * phi_h / v_h + phi_r * target / v_r)
        cur = mean + math.sqrt(var) * z[:, l - 1]
        out[:, l] = cur + level
    return out


def _bm_bridge_rows(sigma: float, a: np.ndarray, end: np.ndarray, tau: float,
                    substeps: int, z: np.ndarray) -> np.ndarray:
    frac = np.arange(substeps + 1) / substeps
    w = np.zeros((a.size, substeps + 1))
    w[:, 1:] = np.cumsum(math.sqrt(tau / substeps) * z, axis=1)
    out = a[:, None] + (end - a)[:, None] * frac + sigma * (w - frac * w[:, -1:])
    out[:, 0] = a
    out[:, -1] = end
    return out


def _sim_coord(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    return spec.l_infinity - x if spec.kind is ModelKind.VON_BERTALANFFY else x


def _bs_bridge_rows(spec: ModelSpec, a: np.ndarray, end: np.ndarray, tau: float,
                    substeps: int, gens: list, max_attempts: int):
    """Crossing bridges in the simulation coordinate; returns (rows, attempts)."""
    k = a.size
    out = np.empty((k, substeps + 1))
    attempts = np.zeros(k, dtype=np.int64)
    pending = np.arange(k)
    h = tau / substeps
    sqrt_h = math.sqrt(h)
    code = KIND_CODE[spec.kind]
    ca, cb = _sim_coord(spec, a), _sim_coord(spec, end)
    while pending.size:
        dw = np.empty((2 * pending.size, substeps))
        for row, i in enumerate(pending):
            draw = gens[i].standard_normal(2 * substeps)
            dw[row] = draw[:substeps]
            dw[pending.size + row] = draw[substeps:]
        dw *= sqrt_h
        x0 = np.concatenate([ca[pending], cb[pending]])
        paths, _ = _milstein_kernel(code, spec.drift_param, spec.sigma, x0, h, dw)
        fwd = paths[:pending.size]
        rev = paths[pending.size:, ::-1]
        attempts[pending] += 1
        diff = fwd - rev
        d0 = diff[:, :1]
        crossed = (diff[:, 1:] * d0 <= 0) | (d0 == 0)
        hit = crossed.any(axis=1)
        first = np.argmax(crossed, axis=1) + 1
        for row in np.flatnonzero(hit):
            i = pending[row]
            cut = first[row]
            out[i, :cut] = fwd[row, :cut]
            out[i, cut:] = rev[row, cut:]
            out[i, 0] = ca[i]
            out[i, -1] = cb[i]
        pending = pending[~hit]
        if pending.size and attempts[pending].max() >= max_attempts:
            i = int(pending[np.argmax(attempts[pending])])
            raise BridgeError(f"no crossing after {max_attempts} attempts", interval=i)
    return out, attempts


# --- single-interval API ---------------------------------------------------------

def ou_bridge(b_param: float, sigma: float, req: BridgeRequest, stream: RngStream) -> BridgePath:
    """Exact OU bridge; endpoints given in log coordinates."""
    if not (b_param > 0 and sigma > 0):
        raise ValueError("OU bridge needs b_param > 0 and sigma > 0")
    z = stream.generator().standard_normal(req.substeps - 1)[None, :]
    row = _ou_bridge_rows(b_param, sigma, np.array([req.a]), np.array([req.b]),
                          req.t2 - req.t1, req.substeps, z)[0]
    return BridgePath(req.times, row)


def bm_bridge(sigma: float, req: BridgeRequest, stream: RngStream) -> BridgePath:
    """Brownian bridge with scale sigma; the drift of ln G does not enter."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    z = stream.generator().standard_normal(req.substeps)[None, :]
    row = _bm_bridge_rows(sigma, np.array([req.a]), np.array([req.b]),
                          req.t2 - req.t1, req.substeps, z)[0]
    return BridgePath(req.times, row)


def bs_bridge(spec: ModelSpec, req: BridgeRequest, stream: RngStream,
              max_attempts: int = DEFAULT_MAX_ATTEMPTS) -> BridgePath:
    """Bladt-Sørensen crossing bridge in the state coordinates of ``spec``."""
    rows, attempts = _bs_bridge_rows(spec, np.array([float(req.a)]), np.array([float(req.b)]),
                                     req.t2 - req.t1, req.substeps, [stream.generator()],
                                     max_attempts)
    values = rows[0]
    if spec.kind is ModelKind.VON_BERTALANFFY:
        values = spec.l_infinity - values
        values[0], values[-1] = req.a, req.b
    return BridgePath(req.times, values, int(attempts[0]))


# --- imputation ------------------------------------------------------------------

def substep_counts(obs: ObservationSet, delta_target: float) -> np.ndarray:
    if not delta_target > 0:
        raise ValueError("delta_target must be > 0")
    return np.maximum(1, np.rint(np.diff(obs.times) / delta_target)).astype(np.int64)


def impute(spec: ModelSpec, obs: ObservationSet, delta_target: float,
           stream: RngStream, max_attempts: int = DEFAULT_MAX_ATTEMPTS) -> Path:
    """Fill every gap of ``obs`` with a bridge under ``spec``.

    Interval i draws from ``stream.child(i)``. The returned path passes through
    every observation exactly.
    """
    counts = substep_counts(obs, delta_target)
    gaps = np.diff(obs.times)
    n_int = counts.size
    if spec.kind is ModelKind.GOMPERTZ:
        coord = np.log(obs.values)
    elif spec.kind is ModelKind.VON_BERTALANFFY:
        gap_obs = linear_coordinate(spec, obs)
        coord = np.log(gap_obs)
    else:
        coord = obs.values

    pieces: list[np.ndarray | None] = [None] * n_int
    for L in np.unique(counts):
        idx = np.flatnonzero(counts == L)
        L = int(L)
        # uniform spacing makes every tau equal; otherwise sample per gap
        taus = gaps[idx]
        groups = [idx] if np.all(taus == taus[0]) else [idx[[j]] for j in range(idx.size)]
        for group in groups:
            tau = float(gaps[group[0]])
            a, end = coord[group], coord[group + 1]
            if L == 1:
                rows = np.stack([a, end], axis=1)
            elif spec.kind is ModelKind.LOGISTIC:
                gens = [stream.child(int(i)).generator() for i in group]
                try:
                    rows, _ = _bs_bridge_rows(spec, a, end, tau, L, gens, max_attempts)
                except BridgeError as exc:
                    raise BridgeError(exc.reason, interval=int(group[exc.interval])) from None
            else:
                z = np.stack([stream.child(int(i)).generator().standard_normal(L)
                              for i in group])
                if spec.kind is ModelKind.GOMPERTZ:
                    rows = _ou_bridge_rows(spec.drift_param, spec.sigma, a, end, tau, L,
                                           z[:, :L - 1])
                else:
                    rows = _bm_bridge_rows(spec.sigma, a, end, tau, L, z)
            for row, i in zip(rows, group):
                pieces[i] = row

    starts = np.concatenate([[0], np.cumsum(counts)])
    total = int(starts[-1])
    times = np.empty(total + 1)
    fine = np.empty(total + 1)
    for i in range(n_int):
        L = counts[i]
        times[starts[i]:starts[i + 1]] = obs.times[i] + np.arange(L) * (gaps[i] / L)
        fine[starts[i]:starts[i + 1]] = pieces[i][:-1]
    times[-1] = obs.times[-1]
    fine[-1] = coord[-1]

    if spec.kind is ModelKind.GOMPERTZ:
        values, linear = np.exp(fine), fine
        values[starts] = obs.values
        linear[starts] = coord
    elif spec.kind is ModelKind.VON_BERTALANFFY:
        linear = np.exp(fine)
        linear[starts] = gap_obs
        values = spec.l_infinity - linear
        values[starts] = obs.values
    else:
        values, linear = fine, None
        values[starts] = obs.values
    return Path(times, values, linear=linear, kind=spec.kind)
