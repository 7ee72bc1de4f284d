"""Fit and forecast on original-unit data; shared by the CLI and experiment scripts."""

from __future__ import annotations

import logging

import numpy as np

from .bgmm import bgmm_conditional_forecast, bgmm_gibbs_fit
from .config import FitConfig, variant_dims
from .errors import IndexOutOfRange, InputError, TargetBeforeSecondRun
from .forecasting import ForecastBundle, PartialRun, rolling_forecast
from .inference import gibbs_fit
from .io import COMPLETE, ModelFile, StandardizationStats, standardize
from .model import DaySequence, Hyperparams, n_links

log = logging.getLogger(__name__)


def fit_model(days: list[DaySequence], cfg: FitConfig, stats: StandardizationStats | None = None) -> ModelFile:
    """Standardize ``days`` (unless ``stats`` is given) and run the requested sampler."""
    cfg.validate()
    n = n_links(days[0].dim)
    if stats is None:
        std_days, stats = standardize(days)
    else:
        std_days = stats.apply(days)
    dims = variant_dims(cfg.variant, n)
    data = [day.select_dims(dims) for day in std_days]
    hyper = Hyperparams.default(dims.size, cfg.K)
    if cfg.model == "msar":
        draws = gibbs_fit(data, hyper, cfg.K, n_burn=cfg.n_burn, n_keep=cfg.n_keep, seed=cfg.seed,
                          thin=cfg.thin, threads=cfg.threads)
    else:
        draws = bgmm_gibbs_fit(data, hyper, cfg.K, n_burn=cfg.n_burn, n_keep=cfg.n_keep, seed=cfg.seed,
                               thin=cfg.thin)
    meta = {"n_burn": cfg.n_burn, "n_keep": cfg.n_keep, "thin": cfg.thin, "seed": cfg.seed}
    return ModelFile(kind=cfg.model, variant=cfg.variant, n=n, dims=dims, hyper=hyper, stats=stats,
                     draws=draws, meta=meta)


def partial_runs(day: DaySequence, prefixes: dict[int, int], model: ModelFile) -> list[PartialRun]:
    """Departed runs of ``day`` in model units, masked by their observed prefixes."""
    n = model.n
    if day.dim != 2 * n + 1:
        raise InputError(f"day {day.day_id} has {n_links(day.dim)} links, model has {n}")
    if max(prefixes) > len(day):
        raise InputError(f"cut lists run {max(prefixes)} but day {day.day_id} has {len(day)} runs")
    Y = (day.runs - model.stats.mean) / model.stats.std
    runs = []
    for r in range(1, len(prefixes) + 1):
        m = prefixes[r]
        if m == COMPLETE:
            run = PartialRun.complete(Y[r - 1])
        elif m > n:
            raise InputError(f"day {day.day_id} run {r}: prefix {m} exceeds {n} links")
        else:
            run = PartialRun.from_prefix(Y[r - 1], m, n)
        runs.append(PartialRun(run.values[model.dims], run.mask[model.dims]))
    return runs


def forecast_targets(prefixes: dict[int, int], targets=None) -> tuple[list[int], list[int]]:
    """Split requested targets into forecastable runs and runs rejected as first of day."""
    partial = [r for r, m in sorted(prefixes.items()) if m != COMPLETE]
    wanted = partial if targets is None else sorted(set(targets) & set(partial))
    return [r for r in wanted if r >= 2], [r for r in wanted if r < 2]


def forecast_day(model: ModelFile, day: DaySequence, prefixes: dict[int, int], targets=None,
                 seed: int = 0, threads: int = 1) -> list[ForecastBundle]:
    """Bundles (model units, stats attached) for the partial runs of one day.

    First runs of a day are reported and skipped rather than failing the day.
    """
    runs = partial_runs(day, prefixes, model)
    ok, rejected = forecast_targets(prefixes, targets)
    for r in rejected:
        err = TargetBeforeSecondRun(f"day {day.day_id} run {r}: first run of a day is not forecast")
        log.warning("%s: %s", type(err).__name__, err)
    if not ok:
        return []
    if model.kind == "msar":
        return rolling_forecast(runs, model.draws, ok, seed=seed, day_id=day.day_id, n=model.n,
                                entries_map=model.dims, stats=model.stats, threads=threads)
    bundles = []
    for t in ok:
        run = runs[t - 1]
        period = int(day.periods[t - 1]) if day.periods is not None else 0
        if period >= model.draws[0].T:
            raise IndexOutOfRange(f"day {day.day_id} run {t}: period {period} unseen in training")
        samples = bgmm_conditional_forecast(run.values, run.mask, period, model.draws,
                                            seed=int(np.random.SeedSequence([seed, t]).generate_state(1)[0]))
        full = np.zeros(2 * model.n + 1)
        mask = np.zeros(2 * model.n + 1, dtype=bool)
        full[model.dims], mask[model.dims] = np.nan_to_num(run.values), run.mask
        bundles.append(ForecastBundle(day.day_id, t, model.dims[run.free], samples, model.n,
                                      PartialRun(full, mask), model.stats))
    return bundles


def day_seed(seed: int, day_index: int) -> int:
    return int(np.random.SeedSequence([seed, day_index]).generate_state(1)[0])
