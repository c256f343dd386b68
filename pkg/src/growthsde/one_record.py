"""Composite trajectories from one-record-per-individual (cross-sectional) data."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np
from scipy.special import ndtr, ndtri

from .models import ModelKind, ModelSpec, check_state
from .simulate import (Path, RngStream, TimeGrid, format_float, milstein_ensemble,
                       sample_beta_init)

MIN_TAIL_MASS = 1e-15
MAX_RESAMPLES = 100
POLICIES = ("max", "restart")


@dataclass
class CrossSection:
    """Values observed at each time; column k holds whoever was measured at times[k]."""

    times: np.ndarray
    columns: list[np.ndarray]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.columns = [np.asarray(c, dtype=float).ravel() for c in self.columns]
        if self.times.ndim != 1 or self.times.size != len(self.columns):
            raise ValueError("need exactly one column per time")
        if self.times.size < 2 or not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing with at least two entries")
        for k, col in enumerate(self.columns):
            if col.size < 2:
                raise ValueError(f"column {k} has {col.size} values; need at least 2")
            if not np.all(np.isfinite(col)):
                raise ValueError(f"column {k} contains non-finite values")

    @classmethod
    def from_matrix(cls, times, matrix) -> "CrossSection":
        """Simulation-study mode: rows are individuals, columns are times."""
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError("matrix must be 2-d")
        return cls(times, [matrix[:, k] for k in range(matrix.shape[1])])

    @property
    def sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.columns])

    def check_states(self, spec: ModelSpec) -> None:
        for col in self.columns:
            check_state(spec, col)

    def write_csv(self, dest) -> None:
        lines = ["t,individual_id,x"]
        for t, col in zip(self.times, self.columns):
            lines += [f"{format_float(t)},{i},{format_float(x)}" for i, x in enumerate(col)]
        FsPath(dest).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, src) -> "CrossSection":
        text = FsPath(src).read_text().splitlines()
        if not text or text[0].replace(" ", "") != "t,individual_id,x":
            raise ValueError(f"{src}: expected header 't,individual_id,x'")
        groups: dict[float, list[float]] = defaultdict(list)
        for n, line in enumerate(text[1:], start=2):
            if not line.strip():
                continue
            try:
                t, _, x = line.split(",")
                groups[float(t)].append(float(x))
            except ValueError:
                raise ValueError(f"{src}:{n}: malformed row {line!r}") from None
        times = sorted(groups)
        return cls(np.array(times), [np.array(groups[t]) for t in times])


@dataclass(frozen=True)
class TruncNormalParams:
    lower: float
    mean: float
    variance: float

    def __post_init__(self):
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ValueError("variance must be finite and > 0")


def _trunc_normal(gen: np.random.Generator, lower: float, mean: float, variance: float,
                  size=None):
    sd = math.sqrt(variance)
    alpha = (lower - mean) / sd
    tail = float(ndtr(-alpha))  # mass above the truncation point
    if tail < MIN_TAIL_MASS:
        raise ArithmeticError(f"truncation mass {tail:.3g} below {MIN_TAIL_MASS:g}")
    count = 1 if size is None else int(size)
    out = np.empty(count)
    filled = 0
    while filled < count:
        u = 1.0 - gen.random(count - filled)  # in (0, 1]
        # inverting the upper tail keeps precision when lower sits far above mean
        x = mean - sd * ndtri(u * tail)
        x = x[x > lower]
        out[filled:filled + x.size] = x
        filled += x.size
    return float(out[0]) if size is None else out


def sample_trunc_normal(p: TruncNormalParams, stream: RngStream, size: int | None = None):
    """Normal(mean, variance) conditioned on (lower, inf) by inverse CDF."""
    return _trunc_normal(stream.generator(), p.lower, p.mean, p.variance, size)


def build_composite_path(cs: CrossSection, stream: RngStream, policy: str = "max") -> Path:
    """Chain one value per column into a single trajectory.

    With ``policy="max"`` an empty candidate set (after resampling) takes the
    column maximum; ``"restart"`` instead draws the value uniformly from the
    column. Either way ``fallback_count`` records how often it happened.
    """
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    gen = stream.generator()
    sorted_cols = [np.sort(c) for c in cs.columns]
    values = np.empty(cs.times.size)
    values[0] = cs.columns[0][gen.integers(cs.columns[0].size)]
    fallbacks = 0
    for k in range(1, cs.times.size):
        col = sorted_cols[k]
        prev = values[k - 1]
        v = float(np.var(col, ddof=1))
        chosen = None
        for _ in range(MAX_RESAMPLES):
            y = prev if v == 0 else _trunc_normal(gen, prev - v, prev, v)
            j = np.searchsorted(col, y, side="left")
            if j < col.size:
                chosen = col[j]
                break
            if v == 0:
                break
        if chosen is None:
            fallbacks += 1
            chosen = col[-1] if policy == "max" else col[gen.integers(col.size)]
        values[k] = chosen
    return Path(cs.times.copy(), values, fallback_count=fallbacks)


def one_record_study(spec: ModelSpec, m: int, grid: TimeGrid, beta_a: float, beta_b: float,
                     stride: int, stream: RngStream, policy: str = "max",
                     return_cross_section: bool = False):
    """Simulate m individuals from Beta initials and build their composite path."""
    if int(m) != m or m < 2:
        raise ValueError("m must be an integer >= 2")
    if int(stride) != stride or stride < 1 or grid.n % stride:
        raise ValueError(f"stride {stride} does not divide n={grid.n}")
    x0 = sample_beta_init(beta_a, beta_b, stream.child(0), size=int(m))
    if spec.kind is ModelKind.VON_BERTALANFFY:
        x0 = x0 * spec.l_infinity
    paths = milstein_ensemble(spec, x0, grid, stream.child(1), int(m))
    matrix = np.stack([p.values[::stride] for p in paths])
    cs = CrossSection.from_matrix(paths[0].times[::stride], matrix)
    composite = build_composite_path(cs, stream.child(2), policy)
    composite.kind = spec.kind
    composite.clamp_count = int(sum(p.clamp_count for p in paths))
    return (composite, cs) if return_cross_section else composite
