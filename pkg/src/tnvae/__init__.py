"""Time-neighbor VAE ensembles with neighbor-loss model selection.

Train standard and next-step-predicting VAEs on time-series feature
matrices, score latent representations (neighbor loss, silhouette,
Procrustes encoding distance), and sweep hyperparameter grids to compare
selection by validation loss against selection by neighbor loss.
"""

from .data import (
    HmmConfig,
    SeriesMatrix,
    SpiralConfig,
    Splits,
    default_hmm_config,
    gen_hmm,
    gen_spiral,
    load_csv,
    save_csv,
    shuffle_series,
    split_series,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateError,
    NumericError,
    ShapeError,
    TnvaeError,
    UsageError,
)
from .metrics import (
    CorrelationReport,
    EncodingMatrix,
    NeighborLoss,
    cluster_moments,
    correlations,
    encoding_distance,
    neighbor_loss,
    procrustes_distance,
    random_walk_loglik,
    silhouette,
)
from .models import (
    Hyperparams,
    ModelRecord,
    TrainConfig,
    VaeModel,
    build_vae,
    encode,
    encode_series,
    load_model,
    save_model,
    tnvae_loss,
    train,
    vae_loss,
)
from .nn import (
    AdamState,
    DiagGaussian,
    MlpNetwork,
    adam_step,
    init_adam,
    init_mlp,
    kl_to_standard_normal,
    mlp_forward,
    mlp_gradient,
    reparameterize,
)
from .rng import RngStream
from .sweep import (
    BUILTIN_GRIDS,
    SweepSpec,
    correlation_report,
    expand_grid,
    pairwise_encoding_distances,
    run_sweep,
    select_model,
)

__version__ = "0.1.0"
