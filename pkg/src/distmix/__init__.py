"""distmix: mixtures of distributional regression models.

Fits finite mixtures whose component distribution parameters and mixture
weights are additive (linear plus penalized spline) functions of covariates,
using analytic-gradient stochastic optimization, with an EM baseline,
simulation generators and clustering/prediction metrics.
"""

from .families import Exp, Family, Identity, get_family
from .splines import (
    BasisConfig,
    apply_sum_to_zero,
    bspline_design,
    df_for_lambda,
    difference_penalty,
    lambda_for_df,
    tensor_product,
)
from .predictors import DesignSet, ModelSpec, PredictorSpec, SmoothSpec, build_design
from .mixture import (
    MixtureState,
    build_state,
    entropy,
    gradient,
    marginal_weights,
    mixture_weights,
    nll,
    objective,
    predict_log_density,
    predict_params,
    responsibilities,
)
from .optim import CyclicLR, FitResult, OptimConfig, fit, xavier_init
from .em import EmConfig, EmResult, em_fit, loglik_trace
from .metrics import (
    accuracy,
    adjusted_rand_index,
    coefficient_rmse,
    optimal_assignment,
    predictive_log_score,
    weight_rmse,
)
from .simulate import (
    AdditiveMixtureDesign,
    LinearMixtureDesign,
    OverfitMixtureDesign,
    SimDataset,
    additive_mixture_spec,
    gen_additive_mixture,
    gen_linear_mixture,
    gen_overfit_mixture,
    linear_mixture_spec,
    oracle_fit,
    overfit_mixture_spec,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
