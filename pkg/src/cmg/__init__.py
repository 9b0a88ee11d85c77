"""Text-guided training for image anomaly detectors.

Paired captions steer two things during training only: which image region is
redundant and gets masked, and the local linear structure the image feature
space should share with the text space. At test time the detector sees images
alone and scores them by Mahalanobis distance to the normal-class Gaussians.
"""

from .cmer import MaskSpec, RedundancyMasker
from .cmle import GroupWeights, fit_group_weights, lle_weights
from .detector import GaussianBank, MahalanobisDetector
from .encoders import MLP, TrainConfig
from .errors import (CMGError, ConfigError, DataError, DegenerateGroupError, DomainError,
                     NumericalError, ParseError, ShapeError, TrainingDiverged, VersionError)
from .numerics import ScoredLabels, auprc, auroc, distance_correlation, histogram_entropy, kmeans
from .pipeline import Bundle, CMGDetector, MetricsReport, RunConfig, Variant, ablate, train_cmg
from .synthdata import Dataset, GenConfig, SampleSet, generate

__version__ = "0.1.0"

__all__ = [
    "Bundle", "CMGDetector", "CMGError", "ConfigError", "DataError", "Dataset",
    "DegenerateGroupError", "DomainError", "GaussianBank", "GenConfig", "GroupWeights",
    "MLP", "MahalanobisDetector", "MaskSpec", "MetricsReport", "NumericalError",
    "ParseError", "RedundancyMasker", "RunConfig", "SampleSet", "ScoredLabels",
    "ShapeError", "TrainConfig", "TrainingDiverged", "Variant", "VersionError",
    "ablate", "auprc", "auroc", "distance_correlation", "fit_group_weights", "generate",
    "histogram_entropy", "kmeans", "lle_weights", "train_cmg",
]
