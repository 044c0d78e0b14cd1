"""JND-based subjective video quality model: simulation, MLE fitting and cleaning."""

__version__ = "0.1.0"

from .dataset import DataError, Observations, load_csv, summarize, write_csv
from .jnd_model import (ConfidenceSchedule, GenerativeParams, ModelParams, SearchSchedule,
                        decompose, kappa, make_generative_params)
from .mle import FitConfig, FitResult, fit, log_likelihood
from .baselines import mos_estimate, zscore_screen
from .cleaning import CleaningConfig, filter_dataset, flag_subjects
from .simulator import SimulationConfig, simulate_dataset

__all__ = [
    "CleaningConfig", "ConfidenceSchedule", "DataError", "FitConfig", "FitResult",
    "GenerativeParams", "ModelParams", "Observations", "SearchSchedule",
    "SimulationConfig", "decompose", "filter_dataset", "fit", "flag_subjects", "kappa",
    "load_csv", "log_likelihood", "make_generative_params", "mos_estimate",
    "simulate_dataset", "summarize", "write_csv", "zscore_screen",
]
