"""Bootstrap-stability regularised neural risk models.

Trains binary-outcome MLPs under a penalty that keeps the model's
log-predictions close to those of models fitted to bootstrap resamples, and
evaluates prediction stability, discrimination, and feature-attribution
consistency against standard and bagged-ensemble baselines.
"""

from . import backend
from .data import (
    BootstrapIndex,
    DataError,
    Dataset,
    SimConfig,
    Standardisation,
    draw_bootstrap,
    load_csv,
    load_dataset,
    save_dataset,
    simulate_dataset,
    split,
)
from .model import (
    AdamState,
    Architecture,
    CLAMP_EPS,
    ModelError,
    ModelParams,
    PenaltyContext,
    adam_step,
    forward,
    forward_batch,
    forward_logit,
    forward_logit_batch,
    grad_loss,
    init_params,
    load_model,
    save_model,
)
from .training import (
    BootstrapPool,
    EnsembleModel,
    TrainConfig,
    TrainingError,
    bce_loss,
    build_pool,
    load_pool,
    log_pred_distance,
    save_pool,
    stability_penalty,
    train_ensemble,
    train_stable,
    train_standard,
)
from .evaluate import (
    EvalReport,
    EvaluationError,
    PredictionPanel,
    auc,
    deviation_pvalues,
    evaluate_model,
    mad,
    spearman,
)
from .attribution import (
    AgreementReport,
    AttributionMatrix,
    EnsembleAttributionSpread,
    agreement,
    ensemble_spread,
    shapley_exact,
    shapley_sample,
)

__version__ = "0.1.0"
