"""Parameter recovery across several corpus seeds.

Usage: python scripts/run_recovery.py --seeds 0 1 2 --starts 4
"""

import argparse
import time

from busmsar.experiments import recovery_study, separated_regimes


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--starts", type=int, default=4, help="short pilot chains before the main chain")
    ap.add_argument("--days", type=int, default=50)
    ap.add_argument("--runs", type=int, default=30)
    ap.add_argument("--burn-in", type=int, default=500)
    ap.add_argument("--samples", type=int, default=200)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    passed = 0
    for seed in args.seeds:
        t0 = time.perf_counter()
        res = recovery_study(separated_regimes(n=2, K=2, seed=seed), args.days, args.runs, args.burn_in,
                             args.samples, seed=seed, threads=args.threads, n_starts=args.starts)
        ok = res.pi_error < 0.1 and res.state_accuracy > 0.9 and res.max_rel_error < 0.15
        passed += ok
        errs = " ".join(f"{k}={max(v):.3f}" for k, v in res.rel_errors.items())
        print(f"seed {seed}: pi_err={res.pi_error:.3f} acc={res.state_accuracy:.3f} {errs} "
              f"{'ok' if ok else 'miss'} ({time.perf_counter() - t0:.0f}s)", flush=True)
    print(f"{passed}/{len(args.seeds)} seeds within tolerance")


if __name__ == "__main__":
    main()
