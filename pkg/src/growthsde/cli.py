"""Command-line entry points.

Exit status: 0 on success, 1 on invalid input or configuration, 2 on a
runtime failure (including a study with more than 5% failed replications).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path as FsPath

from . import __version__
from .em import EmConfig, run_em
from .mle import estimate
from .models import ModelKind, ModelSpec
from .one_record import POLICIES, CrossSection, build_composite_path, one_record_study
from .selection import PcResult, fit_all_and_rank, pc_estimate
from .simulate import (SCHEMES, RngStream, TimeGrid, format_float, read_path_csv, simulate,
                       write_path_csv)
from .study import MAX_FAILURE_RATE, StudyConfig, run_study

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _emit(text: str, out) -> None:
    if out:
        FsPath(out).write_text(text)
    else:
        sys.stdout.write(text)


def _model_args(p, with_params=True):
    p.add_argument("--model", required=True, choices=[k.value for k in ModelKind])
    if with_params:
        p.add_argument("--drift", type=float, required=True, help="b, kappa or r")
        p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--l-infinity", type=float, default=1.0)


def _grid_args(p, t_end=10.0, steps=10_000):
    p.add_argument("--t-end", type=float, default=t_end)
    p.add_argument("--steps", type=int, default=steps)


def _spec(a) -> ModelSpec:
    return ModelSpec(a.model, a.drift, a.sigma, a.l_infinity)


def cmd_simulate(a):
    path = simulate(_spec(a), a.x0, TimeGrid(0.0, a.t_end, a.steps), RngStream(a.seed, 0), a.scheme)
    if a.out:
        write_path_csv(path, a.out)
    else:
        sys.stdout.write("t,x\n" + "".join(f"{format_float(t)},{format_float(x)}\n"
                                           for t, x in zip(path.times, path.values)))


def cmd_estimate(a):
    est = estimate(a.model, read_path_csv(a.input, ModelKind.parse(a.model)), a.l_infinity)
    _emit("model,drift_hat,sigma_hat,n_used\n"
          f"{est.kind.value},{format_float(est.drift_hat)},{format_float(est.sigma_hat)},"
          f"{est.n_used}\n", a.out)


def cmd_em(a):
    obs = read_path_csv(a.input, ModelKind.parse(a.model))
    cfg = EmConfig(a.iterations, a.burn_in, a.delta_target,
                   tuple(a.theta0) if a.theta0 else None, a.bridge_attempts)
    trace = run_em(a.model, obs, cfg, RngStream(a.seed, 0), a.l_infinity)
    if a.out:
        trace.write_csv(a.out)
    print(f"{trace.kind.value}: drift_ml={trace.drift_ml:.6g} sigma_ml={trace.sigma_ml:.6g}",
          file=sys.stderr)


def cmd_one_record(a):
    stream = RngStream(a.seed, 0)
    if a.input:
        composite = build_composite_path(CrossSection.read_csv(a.input), stream, a.policy)
    else:
        if a.drift is None or a.sigma is None:
            raise ValueError("--drift and --sigma are required without --in")
        spec = ModelSpec(a.model, a.drift, a.sigma, a.l_infinity)
        composite, cs = one_record_study(spec, a.m, TimeGrid(0.0, a.t_end, a.steps), a.beta[0],
                                         a.beta[1], a.stride, stream, a.policy,
                                         return_cross_section=True)
        if a.cross_section_out:
            cs.write_csv(a.cross_section_out)
    if a.out:
        write_path_csv(composite, a.out)
    print(f"fallbacks={composite.fallback_count}", file=sys.stderr)


def cmd_select(a):
    report = fit_all_and_rank(read_path_csv(a.input), a.l_infinity, a.k)
    if a.out:
        report.write_csv(a.out)
    for f in report.fits:
        if f.reason:
            print(f"{f.kind.value}: not fitted ({f.reason})", file=sys.stderr)
    print(f"winner={report.winner.value if report.winner else 'none'}")


def cmd_pc(a):
    result: PcResult = pc_estimate(_spec(a), a.reps, TimeGrid(0.0, a.t_end, a.steps), a.x0, a.k,
                                   RngStream(a.seed, 0))
    if a.out:
        result.write_csv(a.out)
    print(f"pc={result.pc:.4f}")


def cmd_study(a):
    cfg = StudyConfig.load(a.config)
    if a.seed is not None or a.workers is not None:
        raw = cfg.to_dict()
        if a.seed is not None:
            raw["seed"] = a.seed
        if a.workers is not None:
            raw["workers"] = a.workers
        cfg = StudyConfig.from_dict(raw)
    result = run_study(cfg, a.out)
    for row in result.summary:
        print(f"{row.model} {row.parameter}: mean={row.mean:.6g} "
              f"q=({row.q_low:.6g}, {row.q_high:.6g}) n={row.n}")
    print(f"wrote {result.out_dir} ({result.failed}/{result.total} failed)")
    if not result.ok:
        print(f"more than {MAX_FAILURE_RATE:.0%} of replications failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="growthsde", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate one path to CSV")
    _model_args(p)
    _grid_args(p)
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--scheme", choices=SCHEMES, default="milstein")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="closed-form estimates from a dense path")
    _model_args(p, with_params=False)
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("em", help="stochastic EM on sparse observations")
    _model_args(p, with_params=False)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--delta-target", type=float, default=0.01)
    p.add_argument("--theta0", type=float, nargs=2, metavar=("DRIFT", "SIGMA"))
    p.add_argument("--bridge-attempts", type=int, default=EmConfig().bridge_attempts)
    p.set_defaults(func=cmd_em)

    p = sub.add_parser("one-record", help="composite path from cross-sectional data")
    p.add_argument("--model", choices=[k.value for k in ModelKind], default="gompertz")
    p.add_argument("--drift", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--l-infinity", type=float, default=1.0)
    p.add_argument("--in", dest="input", help="cross-section CSV (t,individual_id,x)")
    p.add_argument("--m", type=int, default=100, help="individuals to simulate")
    p.add_argument("--beta", type=float, nargs=2, default=(1.0, 100.0), metavar=("A", "B"))
    _grid_args(p)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--policy", choices=POLICIES, default="max")
    p.add_argument("--cross-section-out")
    p.set_defaults(func=cmd_one_record)

    p = sub.add_parser("select", help="fit all models to a path and rank by AIC")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--l-infinity", type=float, default=1.0)
    p.add_argument("--k", type=int, default=2)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("pc", help="Monte Carlo probability of correct selection")
    _model_args(p)
    _grid_args(p)
    p.add_argument("--x0", type=float, default=0.01)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--k", type=int, default=2)
    p.set_defaults(func=cmd_pc)

    p = sub.add_parser("study", help="run a configured replication study")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_study)

    for name, p in sub.choices.items():
        p.add_argument("--out", default=None)
        if name == "study":
            p.add_argument("--config", required=True)
            p.add_argument("--seed", type=int, default=None)
        else:
            p.add_argument("--config", default=None,
                           help="JSON object of flag defaults, e.g. {\"drift\": 0.6}")
            p.add_argument("--seed", type=int, default=0)
    return parser


def _apply_config_defaults(parser, command: str, config: str) -> None:
    """Install defaults from a JSON object of flags; explicit flags still win."""
    raw = json.loads(FsPath(config).read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"{config}: expected a JSON object")
    sub = parser._subparsers._group_actions[0].choices[command]
    values = {k.replace("-", "_"): v for k, v in raw.items()}
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f"{config}: unknown field(s) {unknown}")
    sub.set_defaults(**values)
    for action in sub._actions:
        if action.dest in values:
            action.required = False


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command in parser._subparsers._group_actions[0].choices \
            and known.command != "study":
        try:
            _apply_config_defaults(parser, known.command, known.config)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
    args = parser.parse_args(argv)
    try:
        status = args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, ArithmeticError, NotImplementedError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if status is None else status


if __name__ == "__main__":
    sys.exit(main())
