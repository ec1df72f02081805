"""Long-term wind power forecasting toolkit.

Pipeline: per-turbine mode decomposition of the power history, graph node
embeddings over the farm layout, and an encoder-only network whose layers
score turbine relationships through two attention paths (decomposition
modes and weather) fused by a learned gate.  Ships with a training and
evaluation harness plus a CLI (``hiformer --help``).
"""

from .data import (
    NormStats,
    RawDataset,
    SynthRecipe,
    WindowedDataset,
    load_csv,
    make_windows,
    synth_generate,
)
from .errors import (
    ConfigError,
    DataError,
    HiformerError,
    NanLossError,
    NumericsError,
    SchemaError,
    ShapeError,
)
from .graph import Node2vecConfig, TurbineGraph, build_adjacency, node2vec_embed
from .model import (
    HiformerParams,
    ModelConfig,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import Tape, Tensor
from .training import (
    Adam,
    MetricsReport,
    TrainConfig,
    evaluate,
    persistence_baseline,
    prepare_inputs,
    train,
)
from .vmd import ImfSet, VmdConfig, analytic_signal, decompose_all, vmd_decompose

__version__ = "0.1.0"

__all__ = [
    "Adam", "ConfigError", "DataError", "HiformerError", "HiformerParams",
    "ImfSet", "MetricsReport", "ModelConfig", "NanLossError", "Node2vecConfig",
    "NormStats", "NumericsError", "RawDataset", "SchemaError", "ShapeError",
    "SynthRecipe", "Tape", "Tensor", "TrainConfig", "TurbineGraph", "VmdConfig",
    "WindowedDataset", "analytic_signal", "build_adjacency", "decompose_all",
    "evaluate", "forward", "forward_batch", "init_params", "load_checkpoint",
    "load_csv", "make_windows", "node2vec_embed", "persistence_baseline",
    "prepare_inputs", "save_checkpoint", "synth_generate", "train",
    "vmd_decompose",
]
