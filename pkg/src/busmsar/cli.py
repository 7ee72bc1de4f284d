"""Command-line entry points: simulate, fit, forecast, evaluate, inspect.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import io
from .config import FitConfig, SimulateConfig
from .errors import InputError, MsarError, NumericalError
from .evaluation import evaluate_forecasts, write_metrics_csv, write_metrics_json
from .forecasting import merge_bundles
from .inference import posterior_mean
from .model import DaySequence, entry_label, simulate_dataset, stationary_distribution
from .pipeline import day_seed, fit_model, forecast_day

log = logging.getLogger("busmsar")


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _count(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return v


# --- simulate ------------------------------------------------------------------------------

def cmd_simulate(args) -> None:
    cfg = SimulateConfig.from_json(args.config)
    regime = cfg.regime()
    sim = simulate_dataset(regime, cfg.D, cfg.runs_per_day, args.seed, runs_per_period=cfg.runs_per_period)
    mean, scale = cfg.units.offsets(cfg.n)
    days = [DaySequence(d.day_id, d.runs * scale + mean, d.periods) for d in sim.days]
    io.write_link_records(days, args.out)
    truth = {
        "seed": args.seed,
        "config": cfg.to_dict(),
        "state_labels": "0-based",
        "params": {"pi": regime.pi.tolist(), "A": regime.A.tolist(), "mu": regime.mu.tolist(),
                   "sigma": regime.sigma.tolist()},
        "units": {"mean": mean.tolist(), "scale": scale.tolist()},
        "states": {d.day_id: z.tolist() for d, z in zip(days, sim.states)},
    }
    Path(args.truth_out).write_text(json.dumps(truth, indent=1) + "\n", encoding="utf-8")
    log.info("wrote %d days x %d runs to %s", cfg.D, cfg.runs_per_day, args.out)


# --- fit -----------------------------------------------------------------------------------

def cmd_fit(args) -> None:
    cfg = FitConfig(model=args.model, variant=args.separate or "joint", K=args.k, n_burn=args.burn_in,
                    n_keep=args.samples, thin=args.thin, seed=args.seed, threads=args.threads)
    days = io.load_link_records(args.data)
    model = fit_model(days, cfg)
    io.save_model(model, args.out)
    log.info("saved %s model (%s, K=%d, %d draws) to %s", cfg.model, cfg.variant, cfg.K, len(model.draws), args.out)


# --- forecast ------------------------------------------------------------------------------

def _parse_targets(text: str):
    if text == "all":
        return None
    out = {}
    for item in text.split(","):
        day, _, run = item.strip().rpartition(":")
        if not day or not run.isdigit():
            raise InputError(f"target {item!r} must look like DAY_ID:RUN_INDEX")
        out.setdefault(day, set()).add(int(run))
    return out


def cmd_forecast(args) -> None:
    model = io.load_model(args.model)
    days = {d.day_id: d for d in io.load_link_records(args.data)}
    cut = io.load_cut(args.cut)
    targets = _parse_targets(args.targets)
    for day_id in cut:
        if day_id not in days:
            raise InputError(f"cut refers to day {day_id!r}, which is not in {args.data}")
    if targets is not None:
        for day_id, runs in targets.items():
            listed = cut.get(day_id, {})
            missing = sorted(r for r in runs if r not in listed)
            if missing:
                raise InputError(f"targets {missing} of day {day_id!r} are not listed in the cut")
    bundles = []
    for di, (day_id, prefixes) in enumerate(cut.items()):
        wanted = None if targets is None else targets.get(day_id, set())
        if wanted is not None and not wanted:
            continue
        bundles += forecast_day(model, days[day_id], prefixes, wanted, seed=day_seed(args.seed, di),
                                threads=args.threads)
    io.write_samples_csv(bundles, args.samples_out)
    io.write_summary_csv(bundles, args.summary_out)
    log.info("forecast %d target runs", len(bundles))


# --- evaluate ------------------------------------------------------------------------------

def cmd_evaluate(args) -> None:
    days = io.load_link_records(args.truth)
    n = (days[0].dim - 1) // 2
    truth = {(d.day_id, i + 1): y for d in days for i, y in enumerate(d.runs)}
    bundles = merge_bundles([b for path in args.samples for b in io.load_samples_csv(path, n)])
    rows = evaluate_forecasts(truth, bundles, model=args.label, K=args.k)
    write_metrics_csv(rows, args.out)
    if args.json_out:
        write_metrics_json(rows, args.json_out)
    log.info("scored %d target runs", len(bundles))


# --- inspect -------------------------------------------------------------------------------

def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_inspect(args) -> None:
    model = io.load_model(args.model)
    labels = [entry_label(int(e), model.n) for e in model.dims]
    f = io._fmt
    if model.kind == "msar":
        mean = posterior_mean(model.draws)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            station = stationary_distribution(mean.pi)
        order = np.argsort(-station, kind="stable")
        mean = mean.relabel(order)
        station = station[order]
    else:
        if args.what in ("transition", "coefficients", "stationary"):
            raise InputError(f"--what {args.what} is not defined for a mixture model")
        weights = np.mean([p.weights for p in model.draws], axis=0)
        order = np.argsort(-weights.mean(axis=0), kind="stable")
        mean = SimpleNamespace(mu=np.mean([p.mu for p in model.draws], axis=0)[order],
                               sigma=np.mean([p.sigma for p in model.draws], axis=0)[order])
    K = len(mean.mu)
    states = [f"s{k + 1}" for k in range(K)]
    if args.what == "transition":
        _write_rows(args.out, ["state"] + states, [[s] + [f(v) for v in row] for s, row in zip(states, mean.pi)])
    elif args.what == "stationary":
        _write_rows(args.out, ["state", "probability"], [[s, f(v)] for s, v in zip(states, station)])
    elif args.what == "means":
        _write_rows(args.out, ["state"] + labels, [[s] + [f(v) for v in row] for s, row in zip(states, mean.mu)])
    elif args.what in ("covariances", "coefficients"):
        mats = mean.sigma if args.what == "covariances" else mean.A
        rows = [[s, labels[i], labels[j], f(mats[k][i, j])]
                for k, s in enumerate(states) for i in range(len(labels)) for j in range(len(labels))]
        _write_rows(args.out, ["state", "row", "col", "value"], rows)
    else:
        raise InputError(f"unknown --what {args.what!r}")


# --- entry point ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="busmsar", description="Regime-switching VAR forecasting of bus runs.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic corpus")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--truth-out", required=True)
    s.add_argument("--seed", type=_seed, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="fit a model by Gibbs sampling")
    s.add_argument("--data", required=True)
    s.add_argument("--model", choices=["msar", "bgmm"], default="msar")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--joint", action="store_true", help="model travel time and occupancy together (default)")
    g.add_argument("--separate", choices=["ttime", "occupancy"], help="model one variable plus headway")
    s.add_argument("--k", type=_positive, required=True)
    s.add_argument("--burn-in", type=_count, default=500)
    s.add_argument("--samples", type=_positive, default=200)
    s.add_argument("--thin", type=_positive, default=1)
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--threads", type=_positive, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("forecast", help="forecast unobserved links of partially observed runs")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--cut", required=True)
    s.add_argument("--targets", default="all", help="'all' or DAY:RUN[,DAY:RUN...]")
    s.add_argument("--samples-out", required=True)
    s.add_argument("--summary-out", required=True)
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--threads", type=_positive, default=1)
    s.set_defaults(func=cmd_forecast)

    s = sub.add_parser("evaluate", help="score forecast samples against the truth")
    s.add_argument("--truth", required=True)
    s.add_argument("--samples", required=True, action="append",
                   help="samples CSV; repeat to combine separate-model forecasts")
    s.add_argument("--out", required=True)
    s.add_argument("--json-out")
    s.add_argument("--label", default="", help="model name written to the metrics table")
    s.add_argument("--k", type=_positive, help="state count written to the metrics table")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("inspect", help="write posterior-mean parameters")
    s.add_argument("--model", required=True)
    s.add_argument("--what", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, MsarError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # keep the documented exit-code set closed
        log.exception("unexpected failure")
        print(f"failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
