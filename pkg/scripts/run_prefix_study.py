"""CRPS of the remaining links as the target run's observed prefix grows.

Usage: python scripts/run_prefix_study.py --seed 0
"""

import argparse
import dataclasses

import numpy as np

from busmsar.experiments import PrefixSettings, prefix_study


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--instances", type=int, default=PrefixSettings.instances)
    ap.add_argument("--link-corr", type=float, default=PrefixSettings.link_corr)
    args = ap.parse_args()

    s = dataclasses.replace(PrefixSettings(), instances=args.instances, link_corr=args.link_corr)
    pairs = prefix_study(args.seed, s)
    print("prefix  crps(m)  crps(m+1)  change")
    for m, (a, b) in enumerate(pairs):
        print(f"{m}->{m + 1}    {a:.4f}   {b:.4f}     {b - a:+.4f}")
    print(f"violations: {int(np.sum(pairs[:, 1] > pairs[:, 0]))}/{len(pairs)}")


if __name__ == "__main__":
    main()
