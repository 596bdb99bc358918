"""Topology-consistent descriptor learning toolkit.

Trains small unit-norm embedding networks with a triplet objective whose
positive term blends Euclidean distance with a locally-linear topology
distance, using hardest-in-batch negative mining throughout.
"""

from .config import RunConfig, parse_config_file, resolve_config
from .data import DatasetFile, PatchPair, generate, read_dataset, sample_batch, write_dataset
from .errors import (
    DatasetFormatError,
    DegenerateDescriptorError,
    DegenerateFitError,
    InvalidArgumentError,
    InvalidBatchError,
    InvalidInputError,
    SingularSystemError,
)
from .gradcheck import GradCheckReport, grad_check
from .knn import NeighborSet, pairwise_distances, top_k_within
from .loss import (
    LossConfig,
    LossReport,
    batch_loss,
    hardest_negative,
    lambda_schedule,
    positive_distance,
)
from .metrics import LabeledDistance, MetricReport, fpr95, retrieval_map, verification_pairs
from .net import EmbeddingNet, embed, init_net, load_checkpoint, save_checkpoint, sgd_step
from .topology import (
    LleWeights,
    TopologyVector,
    batch_topology_vectors,
    fit_weights,
    topology_distance,
    topology_vector,
)
from .train import TrainingDivergenceError, TrainResult, run_training

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "parse_config_file",
    "resolve_config",
    "DatasetFile",
    "PatchPair",
    "generate",
    "read_dataset",
    "sample_batch",
    "write_dataset",
    "DatasetFormatError",
    "DegenerateDescriptorError",
    "DegenerateFitError",
    "InvalidArgumentError",
    "InvalidBatchError",
    "InvalidInputError",
    "SingularSystemError",
    "GradCheckReport",
    "grad_check",
    "NeighborSet",
    "pairwise_distances",
    "top_k_within",
    "LossConfig",
    "LossReport",
    "batch_loss",
    "hardest_negative",
    "lambda_schedule",
    "positive_distance",
    "LabeledDistance",
    "MetricReport",
    "fpr95",
    "retrieval_map",
    "verification_pairs",
    "EmbeddingNet",
    "embed",
    "init_net",
    "load_checkpoint",
    "save_checkpoint",
    "sgd_step",
    "LleWeights",
    "TopologyVector",
    "batch_topology_vectors",
    "fit_weights",
    "topology_distance",
    "topology_vector",
    "TrainingDivergenceError",
    "TrainResult",
    "run_training",
    "__version__",
]
