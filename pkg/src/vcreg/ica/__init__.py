"""Independent component analysis with VC-regularized random projectors."""

from .baselines import fastica_score, whitening_score
from .fastica import FastIcaResult, fastica
from .metrics import abs_correlation_matrix, max_correlation, select_model_by_dhsic
from .sources import (
    MixingSpec,
    SourceSet,
    generate_synthetic_sources,
    make_pnl_mixing,
    mix_linear,
    mix_pnl,
    random_mixing_matrix,
)
from .train import IcaDivergenceError, IcaRunConfig, TrainingHistory, recover, train_linear_ica, train_pnl_ica
