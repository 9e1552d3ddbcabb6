"""Robust estimation for functional quadratic regression.

Curves live on a shared grid; the fit projects them onto robust principal
directions and regresses the response on the scores and their products
with an MM-estimator.
"""
from .errors import (
    ConvergenceError,
    DegenerateSampleError,
    GridMismatchError,
    ParseError,
    RobFQRError,
    SingularDesignError,
    UnsupportedGridError,
)
from .fpca import PcaBasis, build_basis, project_scores, select_dimension, sign_covariance
from .funcspace import Curve, Grid, Surface, derivative, inner_product, quadratic_form
from .regression import FitResult, fit, predict
from .rho import RhoConfig, m_scale
from .robust_center import spatial_median
from .simulation import Contamination, ScenarioConfig, StudyReport, run_study

__all__ = [
    "Contamination", "ConvergenceError", "Curve", "DegenerateSampleError", "FitResult",
    "Grid", "GridMismatchError", "ParseError", "PcaBasis", "RhoConfig", "RobFQRError",
    "ScenarioConfig", "SingularDesignError", "StudyReport", "Surface", "UnsupportedGridError",
    "build_basis", "derivative", "fit", "inner_product", "m_scale", "predict",
    "project_scores", "quadratic_form", "run_study", "select_dimension",
    "sign_covariance", "spatial_median",
]
__version__ = "0.1.0"
