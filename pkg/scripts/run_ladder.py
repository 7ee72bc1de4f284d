"""Model ladder: MSAR-J against BGMM-J and MSAR-S on synthetic corpora.

Usage: python scripts/run_ladder.py --seeds 0 1 2 3 4
"""

import argparse
import dataclasses
import time

from busmsar.experiments import LadderSettings, ladder_gaps, run_ladder


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--instances", type=int, default=LadderSettings.instances)
    args = ap.parse_args()

    settings = dataclasses.replace(LadderSettings(), instances=args.instances)
    results = []
    for seed in args.seeds:
        t0 = time.perf_counter()
        res = run_ladder(seed, settings)
        results.append(res)
        print(f"seed {seed}: " + " ".join(f"{k}={v:.4f}" for k, v in res.items())
              + f" ({time.perf_counter() - t0:.0f}s)", flush=True)
    for worse in ("BGMM-J", "MSAR-S"):
        rel, z = ladder_gaps(results, "MSAR-J", worse)
        print(f"MSAR-J vs {worse}: gap {rel:.1%}, {z:.1f} standard errors")


if __name__ == "__main__":
    main()
