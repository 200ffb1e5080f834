"""Radio map estimators sharing a fit/predict contract."""
from .base import ConditioningError, EstimationError, FittedEstimator
from .idw import IDW, ModifiedIDW, angular_factors, estimate_idw, estimate_midw
from .kriging import OrdinaryKriging, Variogram, empirical_variogram, estimate_kriging, fit_variogram
from .mapping import METHODS, estimate_map, fit_estimator
from .pathloss import ModelBased, PathLossFit, estimate_model_based_multi, fit_pathloss_single
from .psd_basis import psd_basis_project, raised_cosine, raised_cosine_basis
from .rbf import RBF, estimate_rbf

__all__ = [
    "ConditioningError", "EstimationError", "FittedEstimator", "IDW", "ModifiedIDW", "angular_factors",
    "estimate_idw", "estimate_midw", "OrdinaryKriging", "Variogram", "empirical_variogram",
    "estimate_kriging", "fit_variogram", "METHODS", "estimate_map", "fit_estimator", "ModelBased",
    "PathLossFit", "estimate_model_based_multi", "fit_pathloss_single", "psd_basis_project",
    "raised_cosine", "raised_cosine_basis", "RBF", "estimate_rbf",
]
