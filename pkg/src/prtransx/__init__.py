"""Probability-aware translational embeddings for medical knowledge graphs.

TransE, TransH, TransR, TransD and TranSparse trained either with the margin
ranking loss or with a loss that maps each score to a triplet probability,
plus a synthetic EMR generator, a negative sampler and ranking metrics.
"""

from .errors import (
    CheckpointError,
    ConfigError,
    ConflictingTripletError,
    CorruptCheckpointError,
    ExtractionError,
    PrTransXError,
    SamplingError,
    TrainingError,
    VariantMismatchError,
)
from .loss import Hyperparams, phi, phi_inv
from .models import ModelKind, ModelParams, init_params, score, score_batch
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "ConflictingTripletError", "CorruptCheckpointError",
    "ExtractionError", "PrTransXError", "SamplingError", "TrainingError", "VariantMismatchError",
    "Hyperparams", "phi", "phi_inv",
    "ModelKind", "ModelParams", "init_params", "score", "score_batch",
    "TrainConfig", "train",
]
