"""Classification networks augmented with mirrored reconstructive decoders.

Set SWWAE_NUM_THREADS before importing to cap the BLAS thread pool (it is
exported to OMP/OpenBLAS/MKL if those are not already pinned).
"""

import os as _os

_threads = _os.environ.get("SWWAE_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .data import AugmentSpec, Dataset, batches, load_idx, save_idx, synthetic_digits
from .estimator import WhatWhereClassifier
from .evaluation import (
    EvalReport,
    evaluate,
    gradcheck,
    invert_from_layer,
    make_gradcheck_case,
    reconstruction_l2,
    top_k_accuracy,
)
from .exceptions import (
    CheckpointError,
    ConfigError,
    DataError,
    DivergenceError,
    ShapeError,
    StaleRecordError,
    SwitchError,
    SwwaeError,
)
from .layers import ConvSpec
from .network import (
    MacroLayerSpec,
    NetworkConfig,
    ParameterStore,
    backward,
    build_network,
    copy_layerwise_into_stacked,
    forward,
    set_trainable,
)
from .training import (
    SgdConfig,
    TrainPlan,
    balance_gammas,
    run_step2_layerwise,
    run_step3_stacked,
    run_step4_joint,
    sgd_step,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentSpec", "Dataset", "batches", "load_idx", "save_idx", "synthetic_digits",
    "WhatWhereClassifier",
    "EvalReport", "evaluate", "gradcheck", "invert_from_layer", "make_gradcheck_case",
    "reconstruction_l2", "top_k_accuracy",
    "CheckpointError", "ConfigError", "DataError", "DivergenceError", "ShapeError",
    "StaleRecordError", "SwitchError", "SwwaeError",
    "ConvSpec", "MacroLayerSpec", "NetworkConfig", "ParameterStore",
    "backward", "build_network", "copy_layerwise_into_stacked", "forward", "set_trainable",
    "SgdConfig", "TrainPlan", "balance_gammas",
    "run_step2_layerwise", "run_step3_stacked", "run_step4_joint", "sgd_step",
]
