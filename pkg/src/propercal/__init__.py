"""Kernel estimators of proper calibration error, refinement and sharpness."""

from .bregman import (
    BINARY_BRIER,
    BINARY_ENTROPY,
    BINARY_SQ,
    NEG_ENTROPY,
    SQUARED_NORM,
    ConvexGenerator,
    bregman_divergence,
    generator_gradient,
    generator_value,
    get_generator,
    register_generator,
)
from .estimators import (
    ce_direct,
    ce_kl_closed_form,
    ce_via_risk,
    classwise_ce,
    classwise_decompose,
    cond_expectation,
    decompose,
    empirical_risk,
    binned_classwise_ce1,
    binned_toplabel_ece,
    layer_sharpness,
    refinement,
    sharpness,
)
from .kernels import Binning, Dirichlet, bandwidth_loo_mle, build_log_weights, log_dirichlet_kernel
from .simplex import EstimateReport, LabeledPredictions, make_prob_vector, softmax_extended
from .io import load_predictions, write_predictions

__version__ = "0.1.0"
