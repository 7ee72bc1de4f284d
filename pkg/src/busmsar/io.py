"""Datasets, standardization, model files and forecast cuts."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import distributions as dist
from .bgmm import BgmmParams
from .errors import (
    ConstantColumn,
    DimOutOfRange,
    EmptyInput,
    InconsistentHeadway,
    InvariantViolation,
    MissingLink,
    NonFiniteValue,
    ParseError,
    SchemaError,
    VersionMismatch,
)
from .forecasting import ForecastBundle, predictive_summary
from .inference import PosteriorDraw
from .model import DaySequence, Hyperparams, RegimeParams, parse_entry_label, run_dim

FORMAT_VERSION = 1
RECORD_COLUMNS = ["day_id", "run_index", "link_id", "travel_time_s", "occupancy", "headway_s"]
CUT_COLUMNS = ["day_id", "run_index", "observed_links"]
COMPLETE = -1


# --- link records ---------------------------------------------------------------------

def _number(text, day, run, link, what):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise SchemaError(f"day {day} run {run} link {link}: {what} {text!r} is not a number") from None
    if not np.isfinite(v):
        raise NonFiniteValue(day, run, link, f"{what} is {text}")
    return v


def load_link_records(path) -> list[DaySequence]:
    """Read the long-format link CSV into one :class:`DaySequence` per day.

    An optional ``period`` column labels each run with a time period (it must
    agree across the run's rows); without it every run is in period 0.
    Days keep their order of first appearance; runs are sorted by index.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in RECORD_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        has_period = "period" in header
        rows = defaultdict(dict)
        heads, periods, order = {}, {}, {}
        for line, rec in enumerate(reader, start=2):
            day = rec["day_id"]
            try:
                run, link = int(rec["run_index"]), int(rec["link_id"])
            except (TypeError, ValueError):
                raise SchemaError(f"{path}:{line}: run_index and link_id must be integers") from None
            if run < 1 or link < 1:
                raise SchemaError(f"{path}:{line}: run_index and link_id start at 1")
            order.setdefault(day, len(order))
            key = (day, run)
            if link in rows[key]:
                raise SchemaError(f"{path}:{line}: duplicate row for day {day} run {run} link {link}")
            rows[key][link] = (
                _number(rec["travel_time_s"], day, run, link, "travel_time_s"),
                _number(rec["occupancy"], day, run, link, "occupancy"),
            )
            h = _number(rec["headway_s"], day, run, link, "headway_s")
            if key in heads and heads[key] != h:
                raise InconsistentHeadway(day, run, link, f"{h} differs from {heads[key]}")
            heads[key] = h
            if has_period:
                try:
                    p = int(rec["period"])
                except (TypeError, ValueError):
                    raise SchemaError(f"{path}:{line}: period must be an integer") from None
                if periods.setdefault(key, p) != p:
                    raise SchemaError(f"{path}:{line}: period differs within day {day} run {run}")
    if not rows:
        raise EmptyInput(f"{path}: no records")
    n = max(max(links) for links in rows.values())
    days = []
    for day in sorted(order, key=order.get):
        runs = sorted(r for (d, r) in rows if d == day)
        Y = np.empty((len(runs), run_dim(n)))
        for i, run in enumerate(runs):
            links = rows[(day, run)]
            for link in range(1, n + 1):
                if link not in links:
                    raise MissingLink(day, run, link)
            Y[i, :n] = [links[m][0] for m in range(1, n + 1)]
            Y[i, n:2 * n] = [links[m][1] for m in range(1, n + 1)]
            Y[i, 2 * n] = heads[(day, run)]
        per = np.array([periods[(day, r)] for r in runs]) if has_period else None
        days.append(DaySequence(day_id=day, runs=Y, periods=per))
    return days


def _fmt(v: float) -> str:
    return repr(float(v))


def write_link_records(days: list[DaySequence], path) -> None:
    """Write days in the long link format (inverse of :func:`load_link_records`)."""
    with_period = any(day.periods is not None for day in days)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS + (["period"] if with_period else []))
        for day in days:
            n = (day.dim - 1) // 2
            for i, y in enumerate(day.runs):
                extra = [int(day.periods[i]) if day.periods is not None else 0] if with_period else []
                for m in range(n):
                    w.writerow([day.day_id, i + 1, m + 1, _fmt(y[m]), _fmt(y[n + m]), _fmt(y[2 * n])] + extra)


# --- standardization --------------------------------------------------------------------

@dataclass
class StandardizationStats:
    """Per-entry mean and (population) standard deviation in original units."""

    mean: NDArray
    std: NDArray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)

    def apply(self, days: list[DaySequence]) -> list[DaySequence]:
        return [DaySequence(d.day_id, (d.runs - self.mean) / self.std, d.periods) for d in days]

    def restrict(self, dims) -> "StandardizationStats":
        dims = np.asarray(dims)
        return StandardizationStats(self.mean[dims], self.std[dims])

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, doc) -> "StandardizationStats":
        return cls(doc["mean"], doc["std"])


def standardize(days: list[DaySequence]):
    """Z-score every run-vector entry over all runs of all days."""
    if not days:
        raise EmptyInput("no days to standardize")
    Y = np.concatenate([d.runs for d in days])
    mean, std = Y.mean(axis=0), Y.std(axis=0)
    for j in range(Y.shape[1]):
        if not std[j] > 0:
            raise ConstantColumn(j)
    stats = StandardizationStats(mean, std)
    return stats.apply(days), stats


def unstandardize(values: ArrayLike, dims, stats: StandardizationStats) -> NDArray:
    """Map standardized ``values`` of run-vector entries ``dims`` back to original units."""
    dims = np.asarray(dims, dtype=int)
    d = stats.mean.size
    if dims.size and (dims.min() < 0 or dims.max() >= d):
        raise DimOutOfRange(f"entries must lie in 0..{d - 1}")
    return np.asarray(values, dtype=float) * stats.std[dims] + stats.mean[dims]


# --- model files ----------------------------------------------------------------------------

@dataclass
class ModelFile:
    """Everything a fitted model needs for forecasting.

    ``dims`` lists the run-vector entries the model covers (all of them for a
    joint model); ``stats`` covers the full run vector.
    """

    kind: str
    variant: str
    n: int
    dims: NDArray
    hyper: Hyperparams
    stats: StandardizationStats
    draws: list
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.draws[0].regime.K if self.kind == "msar" else self.draws[0].K


def _check_draw(doc, kind, d, K):
    if kind == "msar":
        reg = RegimeParams(pi=doc["pi"], A=doc["A"], mu=doc["mu"], sigma=doc["sigma"])
        shapes = (reg.pi.shape, reg.A.shape, reg.mu.shape, reg.sigma.shape)
        if shapes != ((K, K), (K, d, d), (K, d), (K, d, d)):
            raise InvariantViolation(f"draw shapes {shapes} do not match K={K}, dim={d}")
        rows, covs = reg.pi, reg.sigma
        out = PosteriorDraw(reg)
    else:
        out = BgmmParams(doc["weights"], doc["mu"], doc["sigma"])
        if out.mu.shape != (K, d) or out.sigma.shape != (K, d, d) or out.weights.shape[1] != K:
            raise InvariantViolation(f"mixture draw shapes do not match K={K}, dim={d}")
        rows, covs = out.weights, out.sigma
    if np.any(rows < 0) or not np.allclose(rows.sum(axis=1), 1.0, atol=1e-8):
        raise InvariantViolation("probability rows must be non-negative and sum to 1")
    for S in covs:
        if not dist.is_spd(S):
            raise InvariantViolation("covariance matrix is not symmetric positive definite")
    return out


def save_model(model: ModelFile, path) -> None:
    if not model.draws:
        raise EmptyInput("cannot save a model without posterior draws")
    if model.kind == "msar":
        draws = [{"pi": dr.regime.pi.tolist(), "A": dr.regime.A.tolist(),
                  "mu": dr.regime.mu.tolist(), "sigma": dr.regime.sigma.tolist()} for dr in model.draws]
    else:
        draws = [{"weights": p.weights.tolist(), "mu": p.mu.tolist(), "sigma": p.sigma.tolist()}
                 for p in model.draws]
    doc = {
        "format_version": FORMAT_VERSION,
        "model": model.kind,
        "variant": model.variant,
        "n": int(model.n),
        "dims": [int(i) for i in model.dims],
        "K": int(model.K),
        "n_draws": len(draws),
        "hyperparams": model.hyper.to_dict(),
        "stats": model.stats.to_dict(),
        "meta": model.meta,
        "draws": draws,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path) -> ModelFile:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    try:
        version = doc["format_version"]
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"{path}: file has format_version {version}, expected {FORMAT_VERSION}")
        kind, K, dims = doc["model"], int(doc["K"]), np.asarray(doc["dims"], dtype=int)
        if kind not in ("msar", "bgmm"):
            raise ParseError(f"{path}: unknown model kind {kind!r}")
        draws = [_check_draw(dr, kind, dims.size, K) for dr in doc["draws"]]
        if not draws or len(draws) != doc["n_draws"]:
            raise InvariantViolation(f"{path}: expected {doc['n_draws']} draws, found {len(draws)}")
        return ModelFile(
            kind=kind, variant=doc["variant"], n=int(doc["n"]), dims=dims,
            hyper=Hyperparams.from_dict(doc["hyperparams"]),
            stats=StandardizationStats.from_dict(doc["stats"]),
            draws=draws, meta=doc.get("meta", {}),
        )
    except KeyError as exc:
        raise ParseError(f"{path}: missing field {exc}") from None


# --- forecast cuts ------------------------------------------------------------------------

def load_cut(path) -> dict[str, dict[int, int]]:
    """Read a cut file into ``{day_id: {run_index: observed_links}}`` (-1 = complete).

    Listed runs of a day must be contiguous from run 1; unlisted runs have not
    departed.
    """
    cut: dict[str, dict[int, int]] = defaultdict(dict)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if [c for c in CUT_COLUMNS if c not in (reader.fieldnames or [])]:
            raise SchemaError(f"{path}: cut file needs columns {', '.join(CUT_COLUMNS)}")
        for line, rec in enumerate(reader, start=2):
            try:
                run, m = int(rec["run_index"]), int(rec["observed_links"])
            except (TypeError, ValueError):
                raise SchemaError(f"{path}:{line}: run_index and observed_links must be integers") from None
            if m < COMPLETE:
                raise SchemaError(f"{path}:{line}: observed_links must be -1 or a prefix length")
            cut[rec["day_id"]][run] = m
    for day, runs in cut.items():
        if sorted(runs) != list(range(1, len(runs) + 1)):
            raise SchemaError(f"{path}: runs listed for day {day} must be contiguous from 1")
    return dict(cut)


def write_cut(cut: dict[str, dict[int, int]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CUT_COLUMNS)
        for day, runs in cut.items():
            for run in sorted(runs):
                w.writerow([day, run, runs[run]])


# --- forecast samples ---------------------------------------------------------------------

SAMPLE_COLUMNS = ["day_id", "run_index", "entry", "draw", "value"]
SUMMARY_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
SUMMARY_COLUMNS = ["day_id", "run_index", "entry", "mean", "q05", "q25", "q50", "q75", "q95"]


def write_samples_csv(bundles, path) -> None:
    """One row per (target, entry, draw) in original units; draws numbered from 1."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        for b in bundles:
            X = b.original()
            for c, label in enumerate(b.labels):
                for r in range(X.shape[0]):
                    w.writerow([b.day_id, b.run_index, label, r + 1, _fmt(X[r, c])])


def write_summary_csv(bundles, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for b in bundles:
            if b.entries.size == 0:
                continue
            mean, q = predictive_summary(b, SUMMARY_QUANTILES)
            for c, label in enumerate(b.labels):
                w.writerow([b.day_id, b.run_index, label, _fmt(mean[c])] + [_fmt(v) for v in q[:, c]])


def load_samples_csv(path, n: int):
    """Rebuild bundles (original units, no stats) from a samples file."""
    table = defaultdict(lambda: defaultdict(dict))
    order = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if [c for c in SAMPLE_COLUMNS if c not in (reader.fieldnames or [])]:
            raise SchemaError(f"{path}: samples file needs columns {', '.join(SAMPLE_COLUMNS)}")
        for line, rec in enumerate(reader, start=2):
            try:
                key = (rec["day_id"], int(rec["run_index"]))
                entry = parse_entry_label(rec["entry"], n)
                table[key][entry][int(rec["draw"])] = float(rec["value"])
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{line}: {exc}") from None
            order.setdefault(key, len(order))
    bundles = []
    for key in sorted(order, key=order.get):
        entries = sorted(table[key])
        draws = sorted(table[key][entries[0]])
        if any(sorted(table[key][e]) != draws for e in entries):
            raise SchemaError(f"{path}: entries of day {key[0]} run {key[1]} have different draw sets")
        X = np.array([[table[key][e][r] for e in entries] for r in draws])
        bundles.append(ForecastBundle(key[0], key[1], np.array(entries), X, n))
    return bundles
