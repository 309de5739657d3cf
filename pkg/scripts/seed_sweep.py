"""Repeat the two-corpus experiment over several seeds to gauge how stable the trend is.

    python scripts/seed_sweep.py --seeds 0 1 2 --out runs/sweep

Appends one row per (seed, method) to ``<out>/sweep.csv``.
"""
import argparse
import csv
from pathlib import Path

from lidbench.pipeline import ReproduceConfig, reproduce


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--methods", default="baseline,M0,M1,M4")
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    methods = tuple(args.methods.split(","))
    with open(out / "sweep.csv", "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fh.tell() == 0:
            w.writerow(["seed", "method", "within_eer_pct", "cross_eer_pct"])
        for seed in args.seeds:
            rows = reproduce(out / f"seed{seed}", ReproduceConfig(seed=seed, methods=methods),
                             progress=lambda s: None)
            for r in rows:
                w.writerow([seed, r["method"], f"{r['within_eer_pct']:.2f}", f"{r['cross_eer_pct']:.2f}"])
                print(f"seed {seed} {r['method']:<9} within {r['within_eer_pct']:6.2f}  cross {r['cross_eer_pct']:6.2f}")
            fh.flush()


if __name__ == "__main__":
    main()
