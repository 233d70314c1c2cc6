"""Polynomial chaos propagation and Bayesian calibration for quasi-1D nozzle flow."""
from .calibration import GpcCalibrator
from .random_field import HierarchicalKLField

__version__ = "0.1.0"
__all__ = ["GpcCalibrator", "HierarchicalKLField", "__version__"]
