"""Bayesian Markov regime-switching VAR for joint bus travel time and occupancy forecasting."""

from .config import FitConfig
from .distributions import gaussian_condition
from .forecasting import ForecastBundle, PartialRun, predictive_summary, rolling_forecast, trip_time_predictive
from .io import load_link_records, load_model, save_model
from .inference import PosteriorDraw, forward_pass, gibbs_fit, smoothed_marginals
from .model import DaySequence, Hyperparams, RegimeParams, simulate_dataset
from .pipeline import fit_model, forecast_day

__version__ = "0.1.0"

__all__ = [
    "DaySequence",
    "FitConfig",
    "ForecastBundle",
    "Hyperparams",
    "PartialRun",
    "PosteriorDraw",
    "RegimeParams",
    "fit_model",
    "forecast_day",
    "forward_pass",
    "gaussian_condition",
    "gibbs_fit",
    "load_link_records",
    "load_model",
    "predictive_summary",
    "rolling_forecast",
    "save_model",
    "simulate_dataset",
    "smoothed_marginals",
    "trip_time_predictive",
]
