"""Point and probabilistic forecast metrics, and the per-horizon report."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import EmptyInput, LengthMismatch, MissingTruth, TooFewSamples
from .forecasting import ForecastBundle, PartialRun, trip_time_predictive

VARIABLES = ("link_travel_time", "occupancy", "trip_travel_time")
METRIC_COLUMNS = ["model", "K", "variable", "horizon", "rmse", "mae", "crps"]


def _pair(truth, pred):
    a = np.asarray(truth, dtype=float).ravel()
    b = np.asarray(pred, dtype=float).ravel()
    if a.size != b.size:
        raise LengthMismatch(f"{a.size} truths but {b.size} forecasts")
    if a.size == 0:
        raise EmptyInput("no values to score")
    return a, b


def rmse(truth: ArrayLike, pred: ArrayLike) -> float:
    a, b = _pair(truth, pred)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mae(truth: ArrayLike, pred: ArrayLike) -> float:
    a, b = _pair(truth, pred)
    return float(np.mean(np.abs(a - b)))


def crps_samples(samples: ArrayLike, y: float) -> float:
    """CRPS of the empirical distribution of ``samples`` at ``y``.

    Energy form ``mean|X - y| - 0.5 mean|X - X'|`` over all ordered pairs,
    evaluated in O(n log n) via the sorted-sample identity
    ``sum_ij |x_i - x_j| = 2 sum_i (2i - n - 1) x_(i)``.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    spread = np.dot(2.0 * np.arange(1, n + 1) - n - 1, x) / n**2
    return float(np.mean(np.abs(x - y)) - spread)


@dataclass
class MetricRow:
    model: str
    K: int | None
    variable: str
    horizon: str
    rmse: float
    mae: float
    crps: float


def _records(bundle: ForecastBundle, truth_run: NDArray):
    """Yield ``(variable, horizon, samples, truth)`` for every scored quantity.

    Horizons count from the first unobserved link (horizon 1). Trips start at
    the first unobserved stop and extend one link per horizon step.
    """
    n = bundle.n
    X = bundle.original()
    entries = np.asarray(bundle.entries, dtype=int)
    links = entries[entries < n]
    occ = entries[(entries >= n) & (entries < 2 * n)] - n
    col = {int(e): c for c, e in enumerate(entries)}
    if links.size:
        p = links.min()
        for m in links:
            yield VARIABLES[0], int(m - p + 1), X[:, col[int(m)]], truth_run[m]
    if occ.size:
        p = occ.min()
        for m in occ:
            yield VARIABLES[1], int(m - p + 1), X[:, col[int(n + m)]], truth_run[n + m]
    if links.size:
        # observed entries equal their realized values, so the truth run supplies them
        mask = np.ones(2 * n + 1, dtype=bool)
        mask[entries] = False
        b = ForecastBundle(bundle.day_id, bundle.run_index, entries, X, n, PartialRun(truth_run, mask))
        m1 = int(links.min()) + 1
        for m2 in range(m1 + 1, n + 2):
            yield VARIABLES[2], m2 - m1, trip_time_predictive(b, m1, m2), truth_run[m1 - 1:m2 - 1].sum()


def evaluate_forecasts(truth: dict, bundles: list[ForecastBundle], model: str = "", K: int | None = None):
    """Per-horizon and pooled metrics for each variable, in original units.

    ``truth`` maps ``(day_id, run_index)`` to the realized run vector in
    original units. RMSE and MAE score the predictive mean; CRPS is averaged
    over forecast quantities.
    """
    groups = defaultdict(list)
    for b in bundles:
        key = (b.day_id, int(b.run_index))
        if key not in truth:
            raise MissingTruth(f"no ground truth for run {key[1]} of day {key[0]}")
        y = np.asarray(truth[key], dtype=float)
        for var, h, samples, t in _records(b, y):
            groups[(var, h)].append((float(np.mean(samples)), crps_samples(samples, t), float(t)))
    rows = []
    for var in VARIABLES:
        horizons = sorted(h for v, h in groups if v == var)
        pooled = []
        for h in horizons:
            g = groups[(var, h)]
            pooled.extend(g)
            rows.append(_row(model, K, var, str(h), g))
        if pooled:
            rows.append(_row(model, K, var, "all", pooled))
    return rows


def _row(model, K, var, horizon, group):
    means, crps, truth = (np.array(c) for c in zip(*group))
    return MetricRow(model, K, var, horizon, rmse(truth, means), mae(truth, means), float(crps.mean()))


def pooled(rows: list[MetricRow], variable: str) -> MetricRow:
    for r in rows:
        if r.variable == variable and r.horizon == "all":
            return r
    raise KeyError(variable)


def write_metrics_csv(rows: list[MetricRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r.model, "" if r.K is None else r.K, r.variable, r.horizon,
                        repr(r.rmse), repr(r.mae), repr(r.crps)])


def write_metrics_json(rows: list[MetricRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([asdict(r) for r in rows], fh, indent=1)
        fh.write("\n")
