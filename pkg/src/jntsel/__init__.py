"""Model-order and bandwidth selection for Johnson noise thermometry ratio spectra."""

from .crossval import CvConfig, SelectionFractions, selection_fractions
from .data_model import (
    CalibrationRecord,
    Dataset,
    RatioSpectrum,
    RunSpectrum,
    correct_spectra,
    load_dataset,
    pool_ratio,
)
from .errors import JntselError
from .polyfit import PolyFit, PolyModel, fit
from .uncertainty import MixtureStats, ScanResult, bandwidth_scan, mixture_stats

__version__ = "0.1.0"

__all__ = [
    "CalibrationRecord",
    "CvConfig",
    "Dataset",
    "JntselError",
    "MixtureStats",
    "PolyFit",
    "PolyModel",
    "RatioSpectrum",
    "RunSpectrum",
    "ScanResult",
    "SelectionFractions",
    "bandwidth_scan",
    "correct_spectra",
    "fit",
    "load_dataset",
    "mixture_stats",
    "pool_ratio",
    "selection_fractions",
]
