"""Primary-outcome ATE estimation from an observational sample with a
surrogate-only experimental sample."""

from .cate import (
    CateStrategy,
    IvNuisances,
    fit_iv_nuisances,
    fit_kallus,
    fit_kallus_iv,
    fit_robinson,
    fit_two_sls,
    q_weight,
)
from .data import AteEstimate, LabeledSample, load_csv, save_csv, validate
from .dgp import DgpConfig, draw_world, oracle_tau_p, tau_true
from .estimators import (
    SurrogateBridge,
    aipw,
    diff_in_means,
    estimate_ate,
    fit_bridge,
    impute_surrogates,
    imputation_baseline,
)
from .forest import ForestParams

__version__ = "0.1.0"

__all__ = [
    "AteEstimate",
    "CateStrategy",
    "DgpConfig",
    "ForestParams",
    "IvNuisances",
    "LabeledSample",
    "SurrogateBridge",
    "aipw",
    "diff_in_means",
    "draw_world",
    "estimate_ate",
    "fit_bridge",
    "fit_iv_nuisances",
    "fit_kallus",
    "fit_kallus_iv",
    "fit_robinson",
    "fit_two_sls",
    "impute_surrogates",
    "imputation_baseline",
    "load_csv",
    "oracle_tau_p",
    "q_weight",
    "save_csv",
    "tau_true",
    "validate",
]
