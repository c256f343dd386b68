"""Seeded replication campaigns: configs, per-replication records, summaries, manifests."""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import jsonschema
import numpy as np

from . import __version__
from .em import EmConfig, run_em
from .mle import estimate
from .models import ModelKind, ModelSpec
from .one_record import POLICIES, one_record_study
from .selection import fit_all_and_rank
from .simulate import (SCHEMES, ObservationSet, RngStream, TimeGrid, format_float, simulate,
                       subsample)

STUDY_KINDS = ("continuous", "discrete-em", "one-record", "selection", "pc", "consistency")
MAX_FAILURE_RATE = 0.05

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_MODEL_SCHEMA = {
    "type": "object",
    "required": ["kind", "drift", "sigma"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": [k.value for k in ModelKind]},
        "drift": _POSITIVE,
        "sigma": _POSITIVE,
        "l_infinity": _POSITIVE,
        "x0": _POSITIVE,
        "beta": {"type": "array", "items": _POSITIVE, "minItems": 2, "maxItems": 2},
    },
}
CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "growthsde study configuration",
    "type": "object",
    "required": ["study", "seed", "replications", "models", "grid"],
    "additionalProperties": False,
    "properties": {
        "study": {"enum": list(STUDY_KINDS)},
        "seed": {"type": "integer", "minimum": 0},
        "replications": {"type": "integer", "minimum": 1},
        "output": {"type": "string"},
        "models": {"type": "array", "items": _MODEL_SCHEMA, "minItems": 1},
        "grid": {
            "type": "object",
            "required": ["t_end", "steps"],
            "additionalProperties": False,
            "properties": {"t0": {"type": "number"}, "t_end": {"type": "number"},
                           "steps": {"type": "integer", "minimum": 1}},
        },
        "scheme": {"enum": list(SCHEMES)},
        "stride": {"type": "integer", "minimum": 1},
        "em": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "iterations": {"type": "integer", "minimum": 2},
                "burn_in": {"type": "integer", "minimum": 0},
                "delta_target": _POSITIVE,
                "theta0": {"oneOf": [{"type": "null"},
                                     {"type": "array", "items": _POSITIVE,
                                      "minItems": 2, "maxItems": 2}]},
                "bridge_attempts": {"type": "integer", "minimum": 1},
            },
        },
        "one_record": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"individuals": {"type": "integer", "minimum": 2},
                           "policy": {"enum": list(POLICIES)}},
        },
        "k": {"type": "integer", "minimum": 0},
        "checkpoint_stride": {"type": "integer", "minimum": 1},
        "coverage": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "save_first": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSettings:
    kind: str
    drift: float
    sigma: float
    l_infinity: float = 1.0
    x0: float | None = None
    beta: tuple[float, float] | None = None

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.kind, self.drift, self.sigma, self.l_infinity)


@dataclass(frozen=True)
class StudyConfig:
    study: str
    seed: int
    replications: int
    models: tuple[ModelSettings, ...]
    grid: TimeGrid
    output: str | None = None
    scheme: str = "milstein"
    stride: int = 1
    em: EmConfig = field(default_factory=EmConfig)
    individuals: int = 100
    policy: str = "max"
    k: int = 2
    checkpoint_stride: int = 100
    coverage: float = 0.95
    save_first: int = 1
    workers: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "StudyConfig":
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config field '{where}': {exc.message}") from None
        try:
            models = tuple(ModelSettings(**{**m, "beta": tuple(m["beta"]) if "beta" in m else None})
                           for m in raw["models"])
            for m in models:
                m.spec  # validates the parameters
            g = raw["grid"]
            grid = TimeGrid(float(g.get("t0", 0.0)), float(g["t_end"]), int(g["steps"]))
            em_raw = dict(raw.get("em", {}))
            if em_raw.get("theta0") is not None:
                em_raw["theta0"] = tuple(em_raw["theta0"])
            one = raw.get("one_record", {})
            cfg = cls(study=raw["study"], seed=raw["seed"], replications=raw["replications"],
                      models=models, grid=grid, output=raw.get("output"),
                      scheme=raw.get("scheme", "milstein"), stride=raw.get("stride", 1),
                      em=EmConfig(**em_raw), individuals=one.get("individuals", 100),
                      policy=one.get("policy", "max"), k=raw.get("k", 2),
                      checkpoint_stride=raw.get("checkpoint_stride", 100),
                      coverage=raw.get("coverage", 0.95), save_first=raw.get("save_first", 1),
                      workers=raw.get("workers", 1))
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        cfg._check()
        return cfg

    @classmethod
    def load(cls, path) -> "StudyConfig":
        try:
            raw = json.loads(FsPath(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def _check(self) -> None:
        if self.grid.n % self.stride:
            raise ConfigError(f"config field 'stride': {self.stride} does not divide "
                              f"grid steps {self.grid.n}")
        if self.study == "consistency" and self.grid.n % self.checkpoint_stride:
            raise ConfigError("config field 'checkpoint_stride': must divide grid steps")
        for i, m in enumerate(self.models):
            if self.study == "one-record":
                if m.beta is None:
                    raise ConfigError(f"config field 'models/{i}/beta': required for one-record")
            elif m.x0 is None:
                raise ConfigError(f"config field 'models/{i}/x0': required for {self.study}")

    def to_dict(self) -> dict:
        out = {
            "study": self.study, "seed": self.seed, "replications": self.replications,
            "models": [{k: (list(v) if isinstance(v, tuple) else v)
                        for k, v in asdict(m).items() if v is not None} for m in self.models],
            "grid": {"t0": self.grid.t0, "t_end": self.grid.t_end, "steps": self.grid.n},
            "scheme": self.scheme, "stride": self.stride,
            "em": {"iterations": self.em.iterations, "burn_in": self.em.burn_in,
                   "delta_target": self.em.delta_target,
                   "theta0": None if self.em.theta0 is None else list(self.em.theta0),
                   "bridge_attempts": self.em.bridge_attempts},
            "one_record": {"individuals": self.individuals, "policy": self.policy},
            "k": self.k, "checkpoint_stride": self.checkpoint_stride,
            "coverage": self.coverage, "save_first": self.save_first, "workers": self.workers,
        }
        if self.output is not None:
            out["output"] = self.output
        return out

    def digest(self) -> str:
        # workers and output location do not influence results
        d = self.to_dict()
        d.pop("workers")
        d.pop("output", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class SummaryRow:
    model: str
    parameter: str
    true_value: float | None
    mean: float
    q_low: float
    q_high: float
    n: int


def quantiles(samples, coverage: float = 0.95) -> tuple[float, float]:
    """Two-sided empirical quantiles with linear interpolation (type 7)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    if not 0.0 < coverage < 1.0:
        raise ValueError("coverage must lie strictly between 0 and 1")
    tail = (1.0 - coverage) / 2.0
    low, high = np.quantile(x, [tail, 1.0 - tail], method="linear")
    return float(low), float(high)


def consistency_sweep(spec: ModelSpec, grid: TimeGrid, checkpoint_stride: int,
                      stream: RngStream, x0: float, scheme: str = "milstein") -> list[tuple]:
    """Re-estimate on growing prefixes [0, t_k]; rows are (t_k, drift_hat, sigma_hat)."""
    if int(checkpoint_stride) != checkpoint_stride or checkpoint_stride < 1 \
            or grid.n % checkpoint_stride:
        raise ValueError(f"checkpoint_stride {checkpoint_stride} does not divide n={grid.n}")
    path = simulate(spec, x0, grid, stream, scheme)
    rows = []
    for end in range(checkpoint_stride, grid.n + 1, checkpoint_stride):
        cut = slice(0, end + 1)
        prefix = ObservationSet(path.times[cut], path.values[cut],
                                None if path.linear is None else path.linear[cut], path.kind)
        try:
            est = estimate(spec.kind, prefix, spec.l_infinity)
            rows.append((float(path.times[end]), est.drift_hat, est.sigma_hat))
        except (ValueError, ArithmeticError):
            rows.append((float(path.times[end]), math.nan, math.nan))
    return rows


# --- replication workers -------------------------------------------------------------
# Each returns (record dict, {filename: text}) and raises on failure.

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return format_float(x)
    return str(x)


def _csv(header: list[str], rows: list[list]) -> str:
    return "\n".join([",".join(header)] + [",".join(_fmt(v) for v in r) for r in rows]) + "\n"


def _path_text(obs) -> str:
    return _csv(["t", "x"], [[float(t), float(x)] for t, x in zip(obs.times, obs.values)])


def _trace_text(trace) -> str:
    rows = [[k, float(d), float(s)] for k, (d, s) in enumerate(zip(trace.drift, trace.sigma))]
    rows.append(["ml", trace.drift_ml, trace.sigma_ml])
    return _csv(["iter", "drift", "sigma"], rows)


def _rep_continuous(cfg, m, stream, rep, tag):
    path = simulate(m.spec, m.x0, cfg.grid, stream, cfg.scheme)
    est = estimate(m.spec.kind, path, m.l_infinity)
    return {"drift_hat": est.drift_hat, "sigma_hat": est.sigma_hat}, {}


def _rep_discrete_em(cfg, m, stream, rep, tag):
    path = simulate(m.spec, m.x0, cfg.grid, stream.child(0), cfg.scheme)
    obs = subsample(path, cfg.stride)
    trace = run_em(m.spec.kind, obs, cfg.em, stream.child(1), m.l_infinity)
    files = {f"trace_{tag}.csv": _trace_text(trace)} if rep < cfg.save_first else {}
    return {"drift_hat": trace.drift_ml, "sigma_hat": trace.sigma_ml}, files


def _rep_one_record(cfg, m, stream, rep, tag):
    composite = one_record_study(m.spec, cfg.individuals, cfg.grid, m.beta[0], m.beta[1],
                                 cfg.stride, stream.child(0), cfg.policy)
    trace = run_em(m.spec.kind, composite, cfg.em, stream.child(1), m.l_infinity)
    files = {}
    if rep < cfg.save_first:
        files = {f"composite_{tag}.csv": _path_text(composite),
                 f"trace_{tag}.csv": _trace_text(trace)}
    return {"drift_hat": trace.drift_ml, "sigma_hat": trace.sigma_ml,
            "fallbacks": composite.fallback_count}, files


def _rep_selection(cfg, m, stream, rep, tag):
    path = simulate(m.spec, m.x0, cfg.grid, stream, cfg.scheme)
    report = fit_all_and_rank(path, m.l_infinity, cfg.k)
    winner = report.winner
    record = {"winner": winner.value if winner else "none",
              "correct": winner is m.spec.kind}
    files = {}
    if cfg.study == "selection":
        rows = [[f.kind.value, f.drift_hat, f.sigma_hat, f.loglik, f.aic, rank]
                for rank, f in enumerate(report.fits, start=1)]
        files[f"report_{tag}.csv"] = _csv(
            ["model", "drift_hat", "sigma_hat", "loglik", "aic", "rank"], rows)
    return record, files


def _rep_consistency(cfg, m, stream, rep, tag):
    rows = consistency_sweep(m.spec, cfg.grid, cfg.checkpoint_stride, stream, m.x0, cfg.scheme)
    err = [abs(d - m.drift) for _, d, _ in rows]
    files = {f"sweep_{tag}.csv": _csv(["t", "drift_hat", "sigma_hat"], [list(r) for r in rows])} \
        if rep < cfg.save_first else {}
    return {"first_error": err[0], "last_error": err[-1],
            "improved": bool(err[-1] < err[0])}, files


_WORKERS = {"continuous": _rep_continuous, "discrete-em": _rep_discrete_em,
            "one-record": _rep_one_record, "selection": _rep_selection, "pc": _rep_selection,
            "consistency": _rep_consistency}
_FIELDS = {"continuous": ["drift_hat", "sigma_hat"],
           "discrete-em": ["drift_hat", "sigma_hat"],
           "one-record": ["drift_hat", "sigma_hat", "fallbacks"],
           "selection": ["winner", "correct"], "pc": ["winner", "correct"],
           "consistency": ["first_error", "last_error", "improved"]}


def run_replication(cfg: StudyConfig, model_index: int, rep: int):
    m = cfg.models[model_index]
    stream = RngStream(cfg.seed, model_index).child(rep)
    tag = f"{m.kind}_r{rep:04d}"
    try:
        record, files = _WORKERS[cfg.study](cfg, m, stream, rep, tag)
        return {"status": "ok", **record}, files
    except (ValueError, ArithmeticError, RuntimeError, NotImplementedError) as exc:
        return {"status": "failed", "reason": str(exc).replace(",", ";").replace("\n", " ")}, {}


def _task(args):
    return run_replication(*args)


@dataclass
class StudyResult:
    out_dir: FsPath
    total: int
    failed: int
    summary: list[SummaryRow]

    @property
    def failure_rate(self) -> float:
        return self.failed / self.total

    @property
    def ok(self) -> bool:
        return self.failure_rate <= MAX_FAILURE_RATE


def _summaries(cfg: StudyConfig, m: ModelSettings, records: list[dict]) -> list[SummaryRow]:
    good = [r for r in records if r["status"] == "ok"]
    rows = []
    if cfg.study in ("selection", "pc"):
        pc = sum(1 for r in records if r.get("correct")) / len(records)
        return [SummaryRow(m.kind, "pc", None, pc, math.nan, math.nan, len(records))]
    if cfg.study == "consistency":
        frac = sum(1 for r in good if r["improved"]) / max(len(good), 1)
        return [SummaryRow(m.kind, "improved_fraction", None, frac, math.nan, math.nan, len(good))]
    names = {"gompertz": "b", "vonbertalanffy": "kappa", "logistic": "r"}
    for key, name, true in (("drift_hat", names[m.kind], m.drift),
                            ("sigma_hat", "sigma", m.sigma)):
        x = np.array([r[key] for r in good], dtype=float)
        if x.size >= 2:
            low, high = quantiles(x, cfg.coverage)
        else:
            low = high = math.nan
        rows.append(SummaryRow(m.kind, name, true, float(x.mean()) if x.size else math.nan,
                               low, high, int(x.size)))
    return rows


def run_study(cfg: StudyConfig, out_dir=None) -> StudyResult:
    """Run every (model, replication) pair and write replications, summary and manifest."""
    target = out_dir if out_dir is not None else cfg.output
    if target is None:
        raise ConfigError("no output directory given (config 'output' or --out)")
    out = FsPath(target)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, i, r) for i in range(len(cfg.models)) for r in range(cfg.replications)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_task, tasks, chunksize=4))
    else:
        results = [_task(t) for t in tasks]

    fields = _FIELDS[cfg.study]
    rows, summary, extra = [], [], {}
    for i, m in enumerate(cfg.models):
        block = results[i * cfg.replications:(i + 1) * cfg.replications]
        records = [rec for rec, _ in block]
        for r, (rec, files) in enumerate(block):
            rows.append([m.kind, r, rec["status"]] + [rec.get(f) for f in fields]
                        + [rec.get("reason")])
            extra.update(files)
        summary += _summaries(cfg, m, records)

    texts = {
        "replications.csv": _csv(["model", "rep", "status"] + fields + ["reason"], rows),
        "summary.csv": _csv(["model", "parameter", "true_value", "mean", "q_low", "q_high", "n"],
                            [[s.model, s.parameter, s.true_value, s.mean, s.q_low, s.q_high, s.n]
                             for s in summary]),
    }
    texts.update(sorted(extra.items()))
    for name, text in texts.items():
        (out / name).write_text(text)
    failed = sum(1 for rec, _ in results if rec["status"] != "ok")
    recorded = cfg.to_dict()
    recorded.pop("workers")  # keeps the manifest independent of parallelism
    manifest = {
        "package": "growthsde", "version": __version__,
        "config": recorded, "config_sha256": cfg.digest(), "seed": cfg.seed,
        "replications": {"total": len(results), "failed": failed},
        "files": {name: hashlib.sha256(text.encode()).hexdigest()
                  for name, text in sorted(texts.items())},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return StudyResult(out, len(results), failed, summary)


def write_schema(dest) -> None:
    FsPath(dest).write_text(json.dumps(CONFIG_SCHEMA, indent=2) + "\n")
