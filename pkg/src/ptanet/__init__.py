"""From-scratch convolutional network library with runtime-reconfigurable
adaptive blocks, a trainer, anti-spoofing metrics, and a complexity analyzer.

The usual workflow touches four layers, all re-exported here:

* ``build_network`` constructs the classifier; ``PtaConfig`` / ``as_config``
  pick which branch each adaptive block runs, at any time, without touching
  weights.
* ``SamplerSpec`` + ``ConfigSampler`` draw per-batch configurations for
  ``fit`` / ``train_epoch``; ``evaluate`` scores a network under one
  configuration.
* ``compute`` / ``tally`` turn predictions into accuracy and the
  APCER/BPCER/ACER trio.
* ``count_params`` / ``count_macs`` / ``bench_latency`` measure a
  configuration's cost analytically and on the wall clock.
"""

__version__ = "0.1.0"

from .analysis import (
    CANONICAL_ORDER,
    bench_latency,
    complexity_suite,
    count_macs,
    count_params,
)
from .data import (
    AugmentSpec,
    Sample,
    augment,
    generate_synthetic,
    load_directory,
    stack_batch,
    write_dataset,
)
from .metrics import ConfusionCounts, MetricsReport, compute, tally
from .model import (
    InvertedResidual,
    PtaBlock,
    PtaConfig,
    PtaNetwork,
    as_config,
    build_network,
)
from .sampler import DEFAULT_MIX, ConfigSampler, SamplerSpec
from .tensor import Tensor, no_grad
from .trainer import (
    AdamOptimizer,
    EpochStats,
    NumericError,
    TrainConfig,
    TrainReport,
    evaluate,
    fit,
    stratified_split,
    train_epoch,
)
from .weights import load_model, read_arrays, save_model, write_arrays

__all__ = [
    "__version__",
    "AdamOptimizer",
    "AugmentSpec",
    "CANONICAL_ORDER",
    "ConfigSampler",
    "ConfusionCounts",
    "DEFAULT_MIX",
    "EpochStats",
    "InvertedResidual",
    "MetricsReport",
    "NumericError",
    "PtaBlock",
    "PtaConfig",
    "PtaNetwork",
    "Sample",
    "SamplerSpec",
    "Tensor",
    "TrainConfig",
    "TrainReport",
    "as_config",
    "augment",
    "bench_latency",
    "build_network",
    "complexity_suite",
    "compute",
    "count_macs",
    "count_params",
    "evaluate",
    "fit",
    "generate_synthetic",
    "load_directory",
    "load_model",
    "no_grad",
    "read_arrays",
    "save_model",
    "stack_batch",
    "stratified_split",
    "tally",
    "train_epoch",
    "write_arrays",
    "write_dataset",
]
