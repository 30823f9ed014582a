"""Output-interpretable VAE: group-sparse nonlinear latent factor models."""

from .data import GroupedDataset, generate_bars, load_grouped_csv, split_rows, split_trials
from .model import (
    ArchitectureSpec,
    GroupSpec,
    OiVaeParams,
    conditional_perturb,
    decode,
    decode_group,
    encode,
    init_params,
    reparameterize,
    sample_prior,
)
from .objective import (
    ElboBreakdown,
    ObjectiveConfig,
    collapsed_elbo,
    group_lasso_penalty,
    kl_diag_gaussian,
    prox_group_lasso,
    theta_log_prior,
)
from .trainer import TrainConfig, TrainLog, count_zero_columns, fit, train_step

__version__ = "0.1.0"
