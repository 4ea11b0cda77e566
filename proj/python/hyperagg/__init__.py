"""Masked hypercolumn embeddings, RDM scoring and mask training."""

from ._core import (
    Error,
    EpochRecord,
    FeatureSet,
    LossKind,
    Mask,
    MaskResolution,
    Modality,
    RdmStack,
    StageSpec,
    TrainConfig,
    TrainResult,
    embed,
    gradcheck,
    io,
    noise_ceiling,
    pair_dissimilarity,
    pair_gradient,
    pearson,
    predicted_rdm,
    reliability_weight,
    run_cli,
    score,
    spearman,
    split_labels,
    summarize_stages,
    train,
)
from . import agf

__version__ = "0.1.0"
