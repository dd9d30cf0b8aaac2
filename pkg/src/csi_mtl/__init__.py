"""Multi-task CSI feedback autoencoders: data, models, training, evaluation.

The package trains channel-state-information feedback autoencoders for
multi-user massive MIMO under three regimes (independent pairs, joint
training with an autoregressive loss, hard parameter sharing) and compares
reconstruction NMSE, zero-forcing sum spectral efficiency, and parameter
budgets across them.
"""

from .channel_data import (
    AngularDelayChannel,
    ChannelDataset,
    ScenarioConfig,
    SpatialFrequencyChannel,
    dft_matrix,
    from_angular_delay,
    generate_dataset,
    generate_split_datasets,
    load_dataset,
    save_dataset,
    to_angular_delay,
)
from .errors import (
    CheckpointIncompatibleError,
    ConfigError,
    CorruptHeaderError,
    CsiMtlError,
    DataError,
    DimensionMismatchError,
    InvalidArgumentError,
    MissingArtifactError,
    ShapeMismatchError,
    TruncatedPayloadError,
)
from .evaluation import (
    CrossPairMatrix,
    EvaluationReport,
    RegimeArtifacts,
    SpectralEfficiencyCurve,
    compare_regimes,
    cross_pair_matrix,
    nmse_db,
    zf_sum_spectral_efficiency,
)
from .models import (
    ModelConfig,
    ParameterCount,
    SharedStemDecoder,
    build_model,
    count_parameters,
    decode,
    decode_task,
    encode,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    LossTrace,
    TaskSpec,
    TrainConfig,
    TrainResult,
    autoregressive_loss,
    distribution_label,
    mse_loss,
    train_hard_sharing,
    train_independent,
    train_joint,
)

__version__ = "0.1.0"

__all__ = [
    "AngularDelayChannel",
    "ChannelDataset",
    "CheckpointIncompatibleError",
    "ConfigError",
    "CorruptHeaderError",
    "CrossPairMatrix",
    "CsiMtlError",
    "DataError",
    "DimensionMismatchError",
    "EvaluationReport",
    "InvalidArgumentError",
    "LossTrace",
    "MissingArtifactError",
    "ModelConfig",
    "ParameterCount",
    "RegimeArtifacts",
    "ScenarioConfig",
    "SharedStemDecoder",
    "ShapeMismatchError",
    "SpatialFrequencyChannel",
    "SpectralEfficiencyCurve",
    "TaskSpec",
    "TrainConfig",
    "TrainResult",
    "TruncatedPayloadError",
    "autoregressive_loss",
    "build_model",
    "compare_regimes",
    "count_parameters",
    "cross_pair_matrix",
    "decode",
    "decode_task",
    "dft_matrix",
    "distribution_label",
    "encode",
    "from_angular_delay",
    "generate_dataset",
    "generate_split_datasets",
    "load_checkpoint",
    "load_dataset",
    "mse_loss",
    "nmse_db",
    "save_checkpoint",
    "save_dataset",
    "to_angular_delay",
    "train_hard_sharing",
    "train_independent",
    "train_joint",
]
