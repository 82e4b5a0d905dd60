"""Distributed hybrid-order optimization on simulated workers.

Sharded Lanczos estimates the extreme Hessian spectrum, the hybrid step
combines a Newton step inside that subspace with a first-order optimizer
outside it, and an ADMM-like outer loop drives the training.
"""

from .collectives import CommLedger, Communicator, WorkerGroup, make_shards
from .dist_lanczos import extract_ese_distributed, lanczos_distributed, run_distributed_lanczos
from .exceptions import (
    ConfigError,
    DatasetParseError,
    DeadlockError,
    DimensionError,
    DivergenceError,
    NumericError,
    TrainingAborted,
)
from .lanczos import EseResult, extract_ese, lanczos_budget, lanczos_single
from .optimizer import (
    AdmmState,
    BaseOptimizerState,
    FosiConfig,
    admm_deltas,
    admm_dual_update,
    admm_w_update,
    base_step,
    fosi_deltas,
)
from .oracle import (
    Dataset,
    generate_synthetic_dataset,
    load_csv_dataset,
    mlp_oracle,
    outlier_spectrum,
    quadratic_oracle,
)
from .trainers import TrainConfig, TrainResult, dho2_train, fosi_train, sgd_train, train

__version__ = "0.1.0"

__all__ = [
    "AdmmState",
    "BaseOptimizerState",
    "CommLedger",
    "Communicator",
    "ConfigError",
    "DatasetParseError",
    "Dataset",
    "DeadlockError",
    "DimensionError",
    "DivergenceError",
    "EseResult",
    "FosiConfig",
    "NumericError",
    "TrainConfig",
    "TrainResult",
    "TrainingAborted",
    "WorkerGroup",
    "admm_deltas",
    "admm_dual_update",
    "admm_w_update",
    "base_step",
    "dho2_train",
    "extract_ese",
    "extract_ese_distributed",
    "fosi_deltas",
    "fosi_train",
    "generate_synthetic_dataset",
    "lanczos_budget",
    "lanczos_distributed",
    "lanczos_single",
    "load_csv_dataset",
    "make_shards",
    "mlp_oracle",
    "outlier_spectrum",
    "quadratic_oracle",
    "run_distributed_lanczos",
    "sgd_train",
    "train",
]
