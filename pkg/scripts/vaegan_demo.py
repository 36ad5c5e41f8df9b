"""Fit the price adversary on the LEM price profile and show what it does to the signal.

    python scripts/vaegan_demo.py --out runs/vaegan
"""

import argparse
from pathlib import Path

import numpy as np

from lemsim.adversary import reconstruction_mse
from lemsim.config import ExperimentConfig
from lemsim.experiment import fit_adversary, manipulated_series
from lemsim.maddpg import roster_from_config, seed_streams


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--form", choices=["canonical", "as_printed"], default="canonical")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/vaegan")
    args = ap.parse_args()

    cfg = ExperimentConfig(vaegan_epochs=args.epochs, discriminator_loss_form=args.form, seed=args.seed)
    roster = roster_from_config(cfg)
    nets, curves = fit_adversary(cfg, roster, seed_streams(cfg.seed)[3])
    for row in curves[:: max(1, len(curves) // 10)] + curves[-1:]:
        print(f"epoch {row['epoch']:4d}  l_vae {row['l_vae']:.4f}  l_d {row['l_d']:.4f}  mse {row['mse']:.2e}")

    prices, _, _ = manipulated_series(cfg, roster, nets=nets, output_dir=args.out)
    nominal = prices.nominal
    print(f"\nday-ahead reconstruction mse: {reconstruction_mse(nets, nominal.reshape(-1, 24)):.2e}")
    print(f"mean sell price {prices.sell_price.mean():.4f} vs nominal {nominal.mean():.4f} "
          f"vs buy price {prices.buy_price.mean():.4f}")
    print(f"hours with depressed sell price: {int(np.sum(prices.sell_price < nominal))}/{nominal.size}")
    print(f"wrote {Path(args.out) / 'prices.csv'}")


if __name__ == "__main__":
    main()
