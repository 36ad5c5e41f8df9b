"""Both markets x both battery sizes, nominal vs manipulated, printed as one table.

    python scripts/table_sweep.py --epochs 10 --out runs/sweep
"""

import argparse

from lemsim.config import ExperimentConfig
from lemsim.experiment import compare, sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()

    reports = sweep(ExperimentConfig(epochs=args.epochs, seed=args.seed), args.out)
    for r in reports:
        print(f"\n{r.label}")
        print("group   nominal  manipulated    delta")
        for row in compare([r, r], ["nominal", "manipulated"]):
            vals = [v for k, v in row.items() if k not in ("group", "delta_1")]
            print(f"{row['group']:5d} {vals[0]:9.3f} {vals[1]:12.3f} {row['delta_1']:8.3f}")
    print(f"\nwrote {args.out}/sweep.csv")


if __name__ == "__main__":
    main()
