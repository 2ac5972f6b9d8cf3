"""Variance-covariance regularization, kernel independence measures and VC-based ICA."""

__version__ = "0.1.0"

from .kernels import (
    GAUSSIAN_MEDIAN,
    LINEAR,
    KernelSpec,
    dhsic,
    dhsic_subsets,
    hsic,
    mean_pairwise_hsic,
    permutation_test,
)
from .losses import VcWeights, barlow_twins_loss, invariance_loss, vc_loss, vicreg_loss
from .numerics import OptimizerState, covariance, make_rng, whiten
from .projectors import (
    forward,
    input_grad,
    make_elementwise_random_feature,
    make_random_linear,
    make_random_mlp,
    resample,
)
