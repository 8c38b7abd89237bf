"""Sequence classification with temporal dilated convolution branches and
channel attention fusion, on a small float64 autodiff core.

The public surface mirrors the subpackages:

- :mod:`tdcn.tensor`: the autodiff engine.
- :mod:`tdcn.layers`: convolution, pooling, normalization, activations.
- :mod:`tdcn.model`: blocks, branches, fusion, classifier, checkpoints.
- :mod:`tdcn.data`: CSV ingestion, resampling, synthetic datasets.
- :mod:`tdcn.training`: SGD loop, evaluation strategies, metrics.
- :mod:`tdcn.analysis`: receptive field / parameter / FLOPs reports.
- :mod:`tdcn.cli`: the ``tdcn`` command.
"""

from .tensor import Tensor, ShapeError, zero_grads
from .layers import (
    Conv1DParams,
    BatchNormParams,
    LinearParams,
    conv1d,
    elu,
    relu,
    sigmoid,
    max_pool1d,
    avg_pool1d,
    batch_norm,
    linear,
    softmax,
    global_avg_pool,
)
from .model import (
    BranchConfig,
    DCBConfig,
    Model,
    ModelConfig,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from .data import (
    FeatureSequence,
    NormalizationStats,
    Subject,
    SyntheticSpec,
    generate_synthetic_dataset,
    parse_cue_csv,
    resample_head_first,
    split_average_pieces,
)
from .training import (
    ConfusionCounts,
    Metrics,
    TrainConfig,
    compute_metrics,
    cross_entropy,
    evaluate,
    sgd_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "ShapeError",
    "zero_grads",
    "Conv1DParams",
    "BatchNormParams",
    "LinearParams",
    "conv1d",
    "elu",
    "relu",
    "sigmoid",
    "max_pool1d",
    "avg_pool1d",
    "batch_norm",
    "linear",
    "softmax",
    "global_avg_pool",
    "BranchConfig",
    "DCBConfig",
    "Model",
    "ModelConfig",
    "load_checkpoint",
    "model_from_checkpoint",
    "save_checkpoint",
    "FeatureSequence",
    "NormalizationStats",
    "Subject",
    "SyntheticSpec",
    "generate_synthetic_dataset",
    "parse_cue_csv",
    "resample_head_first",
    "split_average_pieces",
    "ConfusionCounts",
    "Metrics",
    "TrainConfig",
    "compute_metrics",
    "cross_entropy",
    "evaluate",
    "sgd_step",
    "train",
    "__version__",
]
