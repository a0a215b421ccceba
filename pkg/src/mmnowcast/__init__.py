"""Multi-modal PV nowcasting with an end-to-end differentiable dispatch layer."""

from mmnowcast import datagen, fusion, grid, harness, nn, opflayer, qpsolve, tensor
from mmnowcast.datagen import Dataset, DatasetConfig, FarmSpec, build_dataset
from mmnowcast.grid import GridCase, SystemInstant, builtin_ieee6
from mmnowcast.harness import ExperimentConfig, run_experiment
from mmnowcast.opflayer import OpfLayer
from mmnowcast.tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DatasetConfig", "ExperimentConfig", "FarmSpec", "GridCase", "OpfLayer", "SystemInstant", "Tensor",
    "build_dataset", "builtin_ieee6", "datagen", "fusion", "grid", "harness", "nn", "opflayer", "qpsolve",
    "run_experiment", "tensor",
]
