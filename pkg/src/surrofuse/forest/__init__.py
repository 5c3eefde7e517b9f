from .engine import (
    PROPENSITY_CLIP,
    CrossFitted,
    ForestCate,
    ForestError,
    ForestModel,
    ForestParams,
    cross_fit,
    fit_causal,
    fit_instrumental,
    fit_propensity,
    fit_regression,
    kfold_assignment,
)

__all__ = [
    "PROPENSITY_CLIP",
    "CrossFitted",
    "ForestCate",
    "ForestError",
    "ForestModel",
    "ForestParams",
    "cross_fit",
    "fit_causal",
    "fit_instrumental",
    "fit_propensity",
    "fit_regression",
    "kfold_assignment",
]
