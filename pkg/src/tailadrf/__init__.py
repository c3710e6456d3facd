"""Robust dose-response estimation with per-treatment tail functionals."""
__version__ = "0.1.0"

from ._backend import BACKEND
from .dgp import DGPSpec, Sample, generate, oracle_curves
from .dml import ADRFCurve, LossSpec, crossfit_nuisances, default_grid, estimate_adrf
from .errors import InvalidFitError, SingularDesignError, TailADRFError
from .functionals import TailFunctionals, tail_functionals
from .pdhte import PDHTEConfig, PerTTailCurve, gps_weights, pdhte_curve
from .threshold import TailReport, ThresholdConfig, build_tail_report

__all__ = [
    "ADRFCurve", "BACKEND", "DGPSpec", "InvalidFitError", "LossSpec", "PDHTEConfig", "PerTTailCurve",
    "Sample", "SingularDesignError", "TailADRFError", "TailFunctionals", "TailReport", "ThresholdConfig",
    "build_tail_report", "crossfit_nuisances", "default_grid", "estimate_adrf", "generate", "gps_weights",
    "oracle_curves", "pdhte_curve", "tail_functionals",
]
