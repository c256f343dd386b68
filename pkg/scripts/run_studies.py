"""Run every study config (or the ones named) and print the summary rows.

    python3 scripts/run_studies.py                      # all configs
    python3 scripts/run_studies.py em_gompertz pc_selection --workers 1
"""
import argparse
import sys
from pathlib import Path

from growthsde.study import StudyConfig, run_study

HERE = Path(__file__).resolve().parent


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("names", nargs="*", help="config stems under scripts/configs")
    parser.add_argument("--out-root", default="out")
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    paths = sorted((HERE / "configs").glob("*.json"))
    if args.names:
        wanted = set(args.names)
        paths = [p for p in paths if p.stem in wanted]
        missing = wanted - {p.stem for p in paths}
        if missing:
            sys.exit(f"unknown config(s): {sorted(missing)}")
    status = 0
    for path in paths:
        raw = StudyConfig.load(path).to_dict()
        raw["workers"] = args.workers
        cfg = StudyConfig.from_dict(raw)
        result = run_study(cfg, Path(args.out_root) / path.stem)
        print(f"== {path.stem}: {result.failed}/{result.total} failed")
        for row in result.summary:
            print(f"   {row.model:15s} {row.parameter:18s} mean={row.mean:.5f} "
                  f"95%=({row.q_low:.5f}, {row.q_high:.5f}) n={row.n}")
        status |= not result.ok
    return status


if __name__ == "__main__":
    sys.exit(main())
