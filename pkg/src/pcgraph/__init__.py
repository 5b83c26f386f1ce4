"""Predictive-coding graphs: energy-based learning on arbitrary digraphs.

Value nodes on every vertex relax toward the predictions their neighbors
make of them; weights then move to make those predictions better. The same
trained graph answers different queries depending on which vertices are
clamped: pin pixels and read labels to classify, pin labels and read
pixels to generate, or just initialize and relax to denoise.
"""

from .backend import BACKEND
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .core import (ACTIVATIONS, HARDTANH, IDENTITY, RELU, TANH, Activation,
                   ClusterSpec, ConfigurationError, DimensionError, NodeState,
                   PCGraph, compute_errors, energy, inference_step, make_state,
                   predict, topk_fire, weight_gradient)
from .data import (Corruption, IdxFormatError, ImageDataset, corrupt,
                   export_image_grid, load_idx, load_split, onehot, read_pgm,
                   write_idx)
from .engine import (AdamWeights, ClampSpec, DivergenceError, EnergyTrace,
                     SgdWeights, TrainSchedule, converged, query_batch,
                     query_by_conditioning, query_by_initialization, train)
from .tasks import (TaskResult, am_retrieve, classify, classify_batch, denoise,
                    evaluate_accuracy, generate, mse, reconstruct)
from .topology import (TopologyMask, assembly, assembly_mask, fully_connected,
                       fully_connected_mask, layered, layered_edge_count,
                       layered_mask, prune)

__version__ = "0.1.0"

__all__ = [
    "ACTIVATIONS", "BACKEND", "Activation", "AdamWeights", "ClampSpec",
    "ClusterSpec", "CheckpointError", "ConfigError", "ConfigurationError",
    "Corruption", "DimensionError", "DivergenceError", "EnergyTrace",
    "ExperimentConfig", "HARDTANH", "IDENTITY", "IdxFormatError",
    "ImageDataset", "NodeState", "PCGraph", "RELU", "SgdWeights", "TANH",
    "TaskResult", "TopologyMask", "TrainSchedule", "am_retrieve", "assembly",
    "assembly_mask", "classify", "classify_batch", "compute_errors",
    "converged", "corrupt", "denoise", "energy", "evaluate_accuracy",
    "export_image_grid", "fully_connected", "fully_connected_mask",
    "generate", "inference_step", "layered", "layered_edge_count",
    "layered_mask", "load_checkpoint", "load_config", "load_idx",
    "load_split", "make_state", "mse", "onehot", "predict", "prune",
    "query_batch", "query_by_conditioning", "query_by_initialization",
    "read_pgm", "reconstruct", "save_checkpoint", "topk_fire", "train",
    "weight_gradient", "write_idx",
]
