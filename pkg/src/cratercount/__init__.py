"""Contamination-corrected crater counting with template matching and linear Poisson models."""
from .calibrate import apply_correction, binomial_success_prob, scaling_factor
from .counting_model import CountingModelParams, simulate_regions
from .lpm import LpmModel, correct, fit_quantities, train
from .scores import HistogramSpec, ScoreHistogram

__all__ = ["CountingModelParams", "simulate_regions", "HistogramSpec", "ScoreHistogram",
           "LpmModel", "train", "correct", "fit_quantities", "scaling_factor",
           "apply_correction", "binomial_success_prob"]
__version__ = "0.1.0"
