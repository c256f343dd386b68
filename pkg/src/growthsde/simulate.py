"""Seeded random streams, time grids, path simulation and subsampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numba
import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.signal import lfilter

from .models import KIND_CODE, DomainError, ModelKind, ModelSpec, check_state

EPS_CLAMP = 1e-12
MAX_CLAMP_RATE = 0.01

_MASK = (1 << 64) - 1


class SimulationError(RuntimeError):
    pass


def _mix64(z: int) -> int:
    # splitmix64 finalizer; a bijection on 64-bit integers
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(master_seed, stream_id)``.

    The pair is mixed into a Philox key, so every distinct pair gets its own
    counter-based sequence. ``generator()`` always restarts the sequence.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) & _MASK)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK)

    def generator(self) -> np.random.Generator:
        key = [_mix64(self.master_seed), _mix64(self.stream_id ^ 0x632BE59BD9B4E019)]
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RngStream":
        sub = _mix64(self.stream_id ^ _mix64((int(index) + 1) & _MASK))
        return RngStream(self.master_seed, sub)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t_end: float
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.t0) and math.isfinite(self.t_end)) or self.t_end <= self.t0:
            raise ValueError(f"need t_end > t0, got t0={self.t0}, t_end={self.t_end}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / self.n

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n + 1) * self.dt


def uniform_step(times: np.ndarray, rtol: float = 1e-9) -> float:
    """Common spacing of ``times``; raises if the grid is not uniform."""
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise ValueError("need at least two time points")
    step = (times[-1] - times[0]) / (times.size - 1)
    if step <= 0 or np.max(np.abs(np.diff(times) - step)) > rtol * step:
        raise ValueError("time grid is not uniform")
    return step


@dataclass
class ObservationSet:
    """Time-stamped observations of one trajectory.

    ``linear`` optionally carries the model's linear coordinate at full
    precision; for Von Bertalanffy this is the gap ``Linf - x``, which cannot
    be recovered from ``x`` once the path is within rounding of ``Linf``.
    """

    times: np.ndarray
    values: np.ndarray
    linear: np.ndarray | None = None
    kind: ModelKind | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if self.times.size < 2:
            raise ValueError("need at least two observations")
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("observation times must be strictly increasing")
        if self.linear is not None:
            self.linear = np.asarray(self.linear, dtype=float)
            if self.linear.shape != self.values.shape:
                raise ValueError("linear must match values")

    def __len__(self):
        return self.values.size


@dataclass
class Path(ObservationSet):
    """A gridded trajectory plus simulation diagnostics."""

    clamp_count: int = 0
    fallback_count: int = 0

    @classmethod
    def from_grid(cls, grid: TimeGrid, values, **kw) -> "Path":
        values = np.asarray(values, dtype=float)
        if values.size != grid.n + 1:
            raise ValueError("a path needs n + 1 values")
        return cls(grid.times(), values, **kw)

    @property
    def grid(self) -> TimeGrid:
        uniform_step(self.times)
        return TimeGrid(float(self.times[0]), float(self.times[-1]), self.times.size - 1)


def linear_coordinate(spec: ModelSpec, obs: ObservationSet) -> np.ndarray:
    """Values in the linear coordinate, preferring the carried full-precision copy."""
    if spec.kind is ModelKind.GOMPERTZ:
        check_state(spec, obs.values)
        return np.log(obs.values)
    if spec.kind is ModelKind.VON_BERTALANFFY:
        gap = spec.l_infinity - obs.values
        # the carried gap is only valid for a VB path with this very L_inf
        if (obs.linear is not None and obs.kind is ModelKind.VON_BERTALANFFY
                and np.all(np.abs(obs.values + obs.linear - spec.l_infinity)
                           <= 1e-9 * spec.l_infinity)):
            gap = obs.linear
        if np.any(gap <= 0):
            raise DomainError("Von Bertalanffy observations must stay below L_inf")
        return gap
    return obs.values


# --- simulation kernels ---------------------------------------------------------

@numba.njit(cache=True)
def _milstein_kernel(code, theta, sigma, x0, dt, dw):
    # works in the log-free state for Gompertz/Logistic and in the gap
    # Linf - L for Von Bertalanffy; every coordinate must stay > 0
    m, n = dw.shape
    out = np.empty((m, n + 1))
    clamps = np.zeros(m, dtype=np.int64)
    half_s2 = 0.5 * sigma * sigma
    for j in range(m):
        x = x0[j]
        out[j, 0] = x
        for i in range(n):
            w = dw[j, i]
            if code == 0:
                a = -theta * x * math.log(x)
                s = sigma * x
            elif code == 1:
                a = -theta * x
                s = -sigma * x
            else:
                a = theta * x * (1.0 - x)
                s = sigma * x
            x = x + a * dt + s * w + half_s2 * x * (w * w - dt)
            # NaN passes through and is rejected by the caller
            if x <= 0.0:
                x = 1e-12
                clamps[j] += 1
            out[j, i + 1] = x
    return out, clamps


def _to_sim_coordinate(spec: ModelSpec, x0: np.ndarray) -> np.ndarray:
    check_state(spec, x0)
    if spec.kind is ModelKind.VON_BERTALANFFY:
        return spec.l_infinity - x0
    return x0


def _finish_paths(spec: ModelSpec, grid: TimeGrid, coord: np.ndarray, clamps) -> list[Path]:
    if not np.all(np.isfinite(coord)):
        raise SimulationError("non-finite value in simulated path; grid too coarse")
    paths = []
    for j in range(coord.shape[0]):
        if clamps[j] > MAX_CLAMP_RATE * grid.n:
            raise SimulationError(
                f"path {j}: {clamps[j]} of {grid.n} steps clamped; grid too coarse")
        if spec.kind is ModelKind.VON_BERTALANFFY:
            linear = coord[j].copy()
            values = spec.l_infinity - linear
        else:
            values = coord[j].copy()
            linear = np.log(values) if spec.kind is ModelKind.GOMPERTZ else None
        paths.append(Path.from_grid(grid, values, linear=linear, kind=spec.kind,
                                    clamp_count=int(clamps[j])))
    return paths


def _normals(stream: RngStream, size: int) -> np.ndarray:
    return stream.generator().standard_normal(size)


def _ensemble_normals(stream: RngStream, m: int, n: int) -> np.ndarray:
    z = np.empty((m, n))
    for j in range(m):
        z[j] = _normals(stream.child(j), n)
    return z


def _broadcast_x0(x0, m: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    return np.full(m, float(x0)) if x0.ndim == 0 else x0.reshape(m).copy()


def milstein_from_increments(spec: ModelSpec, x0, grid: TimeGrid, dw: np.ndarray) -> list[Path]:
    """Milstein paths driven by given Brownian increments of shape (m, n)."""
    dw = np.ascontiguousarray(dw, dtype=float)
    if dw.ndim != 2 or dw.shape[1] != grid.n:
        raise ValueError("increments must have shape (m, grid.n)")
    x0 = _to_sim_coordinate(spec, _broadcast_x0(x0, dw.shape[0]))
    coord, clamps = _milstein_kernel(KIND_CODE[spec.kind], spec.drift_param, spec.sigma,
                                     x0, grid.dt, dw)
    return _finish_paths(spec, grid, coord, clamps)


def milstein_simulate(spec: ModelSpec, x0: float, grid: TimeGrid, stream: RngStream) -> Path:
    dw = math.sqrt(grid.dt) * _normals(stream, grid.n)
    return milstein_from_increments(spec, x0, grid, dw[None, :])[0]


def milstein_ensemble(spec: ModelSpec, x0, grid: TimeGrid, stream: RngStream,
                      m: int) -> list[Path]:
    """``m`` Milstein paths; path j equals ``milstein_simulate(..., stream.child(j))``."""
    dw = math.sqrt(grid.dt) * _ensemble_normals(stream, m, grid.n)
    return milstein_from_increments(spec, x0, grid, dw)


def _exact_from_normals(spec: ModelSpec, x0: np.ndarray, grid: TimeGrid,
                        z: np.ndarray) -> list[Path]:
    dt = grid.dt
    m = z.shape[0]
    if spec.kind is ModelKind.GOMPERTZ:
        check_state(spec, x0)
        b, s = spec.drift_param, spec.sigma
        phi = math.exp(-b * dt)
        shift = -s * s / (2 * b) * (-math.expm1(-b * dt))
        sd = s * math.sqrt(-math.expm1(-2 * b * dt) / (2 * b))
        u = shift + sd * z
        y = np.empty((m, grid.n + 1))
        y[:, 0] = np.log(x0)
        y[:, 1:] = lfilter([1.0], [1.0, -phi], u, axis=1, zi=(phi * y[:, 0])[:, None])[0]
        return [Path.from_grid(grid, np.exp(y[j]), linear=y[j].copy(), kind=spec.kind)
                for j in range(m)]
    if spec.kind is ModelKind.VON_BERTALANFFY:
        k, s = spec.drift_param, spec.sigma
        gap0 = _to_sim_coordinate(spec, x0)
        steps = (-k - 0.5 * s * s) * dt + s * math.sqrt(dt) * z
        log_gap = np.empty((m, grid.n + 1))
        log_gap[:, 0] = np.log(gap0)
        log_gap[:, 1:] = log_gap[:, :1] + np.cumsum(steps, axis=1)
        gap = np.exp(log_gap)
        return [Path.from_grid(grid, spec.l_infinity - gap[j], linear=gap[j].copy(),
                               kind=spec.kind) for j in range(m)]
    raise NotImplementedError("no exact transition for the Logistic model; "
                              "use logistic_solution_simulate")


def exact_simulate(spec: ModelSpec, x0: float, grid: TimeGrid, stream: RngStream) -> Path:
    """Exact-transition simulation: OU in log X (Gompertz), GBM in Linf - L (Von Bertalanffy)."""
    if spec.kind is ModelKind.LOGISTIC:
        raise NotImplementedError("no exact transition for the Logistic model; "
                                  "use logistic_solution_simulate")
    z = _normals(stream, grid.n)[None, :]
    return _exact_from_normals(spec, np.array([float(x0)]), grid, z)[0]


def exact_ensemble(spec: ModelSpec, x0, grid: TimeGrid, stream: RngStream,
                   m: int) -> list[Path]:
    if spec.kind is ModelKind.LOGISTIC:
        raise NotImplementedError("no exact transition for the Logistic model")
    z = _ensemble_normals(stream, m, grid.n)
    return _exact_from_normals(spec, _broadcast_x0(x0, m), grid, z)


def _logistic_from_normals(spec: ModelSpec, x0: np.ndarray, grid: TimeGrid,
                           z: np.ndarray) -> list[Path]:
    if spec.kind is not ModelKind.LOGISTIC:
        raise ValueError("logistic_solution_simulate needs a Logistic model")
    check_state(spec, x0)
    r, s = spec.drift_param, spec.sigma
    t = grid.times()
    w = np.zeros((z.shape[0], grid.n + 1))
    w[:, 1:] = np.cumsum(math.sqrt(grid.dt) * z, axis=1)
    f = np.exp((t - t[0]) * (r - 0.5 * s * s) + s * w)
    integral = cumulative_trapezoid(f, t, axis=1, initial=0.0)
    p = f / (1.0 / x0[:, None] + r * integral)
    return [Path.from_grid(grid, p[j], kind=spec.kind) for j in range(z.shape[0])]


def logistic_solution_simulate(spec: ModelSpec, x0: float, grid: TimeGrid,
                               stream: RngStream) -> Path:
    """Logistic path from the strong solution P = f / (1/p0 + r int f ds)."""
    z = _normals(stream, grid.n)[None, :]
    return _logistic_from_normals(spec, np.array([float(x0)]), grid, z)[0]


def logistic_solution_ensemble(spec: ModelSpec, x0, grid: TimeGrid, stream: RngStream,
                               m: int) -> list[Path]:
    z = _ensemble_normals(stream, m, grid.n)
    return _logistic_from_normals(spec, _broadcast_x0(x0, m), grid, z)


SCHEMES = ("milstein", "exact")


def simulate(spec: ModelSpec, x0: float, grid: TimeGrid, stream: RngStream,
             scheme: str = "milstein") -> Path:
    """Dispatch on scheme; 'exact' uses the strong solution for the Logistic model."""
    if scheme == "milstein":
        return milstein_simulate(spec, x0, grid, stream)
    if scheme == "exact":
        if spec.kind is ModelKind.LOGISTIC:
            return logistic_solution_simulate(spec, x0, grid, stream)
        return exact_simulate(spec, x0, grid, stream)
    raise ValueError(f"unknown scheme {scheme!r}")


def sample_beta_init(alpha: float, beta: float, stream: RngStream,
                     size: int | None = None):
    """Beta(alpha, beta) draws as G1 / (G1 + G2) with independent gamma variates."""
    if not (alpha > 0 and beta > 0):
        raise ValueError("Beta parameters must be > 0")
    gen = stream.generator()
    count = 1 if size is None else int(size)
    out = np.empty(count)
    filled = 0
    while filled < count:
        need = count - filled
        g1 = gen.standard_gamma(alpha, need)
        g2 = gen.standard_gamma(beta, need)
        x = g1 / (g1 + g2)
        x = x[(x > 0) & (x < 1)]
        out[filled:filled + x.size] = x
        filled += x.size
    return float(out[0]) if size is None else out


def subsample(path: ObservationSet, stride: int) -> ObservationSet:
    n = len(path) - 1
    if int(stride) != stride or stride < 1 or n % stride:
        raise ValueError(f"stride {stride} does not divide n={n}")
    idx = slice(0, n + 1, int(stride))
    linear = None if path.linear is None else path.linear[idx].copy()
    return ObservationSet(path.times[idx].copy(), path.values[idx].copy(),
                          linear=linear, kind=path.kind)


# --- CSV ------------------------------------------------------------------------

def format_float(x: float) -> str:
    return repr(float(x))


def write_path_csv(obs: ObservationSet, dest) -> None:
    lines = ["t,x"]
    lines += [f"{format_float(t)},{format_float(x)}" for t, x in zip(obs.times, obs.values)]
    FsPath(dest).write_text("\n".join(lines) + "\n")


def read_path_csv(src, kind: ModelKind | None = None) -> ObservationSet:
    text = FsPath(src).read_text().splitlines()
    if not text or text[0].strip().replace(" ", "") != "t,x":
        raise ValueError(f"{src}: expected header 't,x'")
    rows = [line.split(",") for line in text[1:] if line.strip()]
    try:
        data = np.array([[float(a), float(b)] for a, b in rows])
    except ValueError as exc:
        raise ValueError(f"{src}: malformed row ({exc})") from None
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError(f"{src}: need at least two rows")
    return ObservationSet(data[:, 0], data[:, 1], kind=kind)
