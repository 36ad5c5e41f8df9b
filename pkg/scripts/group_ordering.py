"""Train LEM A for a few epochs on several seeds and print per-group nominal benefits.

    python scripts/group_ordering.py --seeds 5 --epochs 10
"""

import argparse
import time

from lemsim.config import ExperimentConfig
from lemsim.experiment import group_benefits
from lemsim.maddpg import roster_from_config, run_episode, train, windows_from_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--battery-kwh", type=float, default=5.0)
    args = ap.parse_args()

    ordered = 0
    print("seed      G1       G2       G3       G4   ordered")
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        cfg = ExperimentConfig(market="LEM_A", battery_kwh=args.battery_kwh, epochs=args.epochs, seed=seed)
        roster = roster_from_config(cfg)
        agents = train(cfg, roster).agents
        d, g, p = roster.sample_series(None, 0.0)
        b = group_benefits(run_episode(roster, agents, d, g, p, 0.0, None, windows_from_config(cfg)), roster)
        ok = min(b[3], b[4]) > b[2] > b[1]
        ordered += ok
        print(f"{seed:4d} " + " ".join(f"{b[k]:8.3f}" for k in (1, 2, 3, 4))
              + f"   {'yes' if ok else 'no'}  ({time.perf_counter() - t0:.0f} s)")
    print(f"G3,G4 > G2 > G1 in {ordered}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
