"""Plot EM traces (trace_*.csv) or consistency sweeps (sweep_*.csv) from a study directory.

Needs matplotlib, which the package itself does not depend on.
"""
import argparse
import csv
from pathlib import Path


def read_rows(path):
    with open(path) as fh:
        return [r for r in csv.DictReader(fh) if r[next(iter(r))] != "ml"]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("study_dir")
    parser.add_argument("--out", default=None, help="image path (default: show)")
    args = parser.parse_args()
    import matplotlib.pyplot as plt

    files = sorted(Path(args.study_dir).glob("trace_*.csv")) + \
        sorted(Path(args.study_dir).glob("sweep_*.csv"))
    if not files:
        raise SystemExit("no trace_*.csv or sweep_*.csv files found")
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for f in files:
        rows = read_rows(f)
        xkey = "iter" if "iter" in rows[0] else "t"
        x = [float(r[xkey]) for r in rows]
        dkey = "drift" if "drift" in rows[0] else "drift_hat"
        skey = "sigma" if "sigma" in rows[0] else "sigma_hat"
        axes[0].plot(x, [float(r[dkey]) for r in rows], label=f.stem)
        axes[1].plot(x, [float(r[skey]) for r in rows], label=f.stem)
    axes[0].set_ylabel("drift")
    axes[1].set_ylabel("sigma")
    for ax in axes:
        ax.set_xlabel(xkey)
    axes[0].legend(fontsize="small")
    fig.tight_layout()
    if args.out:
        fig.savefig(args.out, dpi=120)
    else:
        plt.show()


if __name__ == "__main__":
    main()
