"""Multimodal similarity-preserving hashing.

Learns one embedding network per modality, trained jointly with
contrastive losses so that similar samples (within or across modalities)
land on nearby binary codes in a common Hamming space. Includes exhaustive
Hamming retrieval with mAP/precision evaluation and a boosted linear
baseline for comparison.
"""

from .cmssh import CmsshModel
from .data import (
    FeatureMatrix,
    ShellSpec,
    SyntheticSpec,
    build_pairsets,
    load,
    save,
    synthesize,
    synthesize_shells,
)
from .errors import (
    ConvergenceError,
    DimensionMismatch,
    FormatError,
    InvalidValue,
    MmhashError,
    SamplingError,
    TrainingError,
)
from .hashing import CodeMatrix, HashCode, binarize, binarize_batch, hamming
from .loss import LossConfig, PairBatch, PairSets, cross_loss, intra_loss, total_gradient, total_loss
from .model import (
    CoupledModel,
    EmbeddingNet,
    Layer,
    forward,
    init_coupled,
    init_random,
    load_model,
    save_model,
)
from .retrieval import (
    HashIndex,
    RankedResult,
    evaluate_retrieval,
    mean_average_precision,
    precision_at,
    query,
)
from .trainer import TrainConfig, TrainReport, gradient_check, sample_pairs, train

__version__ = "0.1.0"

__all__ = [
    "CmsshModel",
    "CodeMatrix",
    "ConvergenceError",
    "CoupledModel",
    "DimensionMismatch",
    "EmbeddingNet",
    "FeatureMatrix",
    "FormatError",
    "HashCode",
    "HashIndex",
    "InvalidValue",
    "Layer",
    "LossConfig",
    "MmhashError",
    "PairBatch",
    "PairSets",
    "RankedResult",
    "SamplingError",
    "ShellSpec",
    "SyntheticSpec",
    "TrainConfig",
    "TrainReport",
    "TrainingError",
    "binarize",
    "binarize_batch",
    "build_pairsets",
    "cross_loss",
    "evaluate_retrieval",
    "forward",
    "gradient_check",
    "hamming",
    "init_coupled",
    "init_random",
    "intra_loss",
    "load",
    "load_model",
    "mean_average_precision",
    "precision_at",
    "query",
    "sample_pairs",
    "save",
    "save_model",
    "synthesize",
    "synthesize_shells",
    "total_gradient",
    "total_loss",
    "train",
]
