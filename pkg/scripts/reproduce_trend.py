"""Two-corpus synthetic reproduction of the cross-corpora degradation and its recovery.

    python scripts/reproduce_trend.py --out runs/trend --seed 0

Writes everything ``lidbench reproduce`` writes and prints the comparison table
together with the three trend checks (within < 10 %, gap >= 15 points, two of
CMS/CMVN/RASTA improving cross-corpora EER by >= 5 points).
"""
import argparse
import time

from lidbench.pipeline import ReproduceConfig, reproduce


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/trend")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--preset", choices=("desk", "paper"), default="desk")
    args = ap.parse_args()

    t0 = time.perf_counter()
    rows = {r["method"]: r for r in reproduce(args.out, ReproduceConfig(seed=args.seed, preset=args.preset))}
    elapsed = time.perf_counter() - t0

    print(f"\n{'method':<10}{'within EER':>12}{'cross EER':>12}{'within Cavg':>13}{'cross Cavg':>12}")
    for m, r in rows.items():
        print(f"{m:<10}{r['within_eer_pct']:>12.2f}{r['cross_eer_pct']:>12.2f}"
              f"{r['within_cavg_x100']:>13.2f}{r['cross_cavg_x100']:>12.2f}")
    base = rows["baseline"]
    gains = {m: base["cross_eer_pct"] - rows[m]["cross_eer_pct"] for m in ("M0", "M1", "M4")}
    print(f"\nwithin baseline < 10 %:        {base['within_eer_pct'] < 10}")
    print(f"cross - within >= 15 points:    {base['cross_eer_pct'] - base['within_eer_pct'] >= 15}")
    print(f"two of M0/M1/M4 gain >= 5:      {sum(g >= 5 for g in gains.values()) >= 2}  "
          + " ".join(f"{m} {g:+.1f}" for m, g in gains.items()))
    print(f"runtime: {elapsed:.0f} s")


if __name__ == "__main__":
    main()
