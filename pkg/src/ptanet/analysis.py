"""Per-configuration complexity accounting and latency benchmarking.

``count_macs`` walks the network structure and prices every operation the
forward pass executes (convolutions, fused norm+clamp, pooling, the final
affine), so it agrees with the kernels' own operation counter exactly.
Latency is measured on the host CPU and reported as medians with
percentile spread; cross-config comparisons use ratios, never absolute
milliseconds.
"""

import contextlib
import json
import time
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np

from .model import (
    MIN_INPUT_SIZE,
    BranchChoice,
    InvertedResidual,
    PtaBlock,
    PtaConfig,
    PtaNetwork,
    as_config,
)
from .nn import _conv_out_hw
from .tensor import Tensor, no_grad

# canonical report order: the plain-equivalent HHH baseline leads
CANONICAL_ORDER = ("HHH", "LHH", "HLH", "HHL", "LLL", "BBB")

MIN_TIMED_RUNS = 30


@dataclass(frozen=True)
class ComplexityReport:
    config: str
    params: int
    macs: int
    relative_macs: float

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "params": self.params,
            "macs": self.macs,
            "relative_macs": self.relative_macs,
        }


@dataclass(frozen=True)
class LatencyReport:
    config: str
    warmup_runs: int
    timed_runs: int
    median_ms: float
    p10_ms: float
    p90_ms: float
    relative_to_HHH: float
    single_threaded: bool = True

    def __post_init__(self):
        if self.timed_runs < MIN_TIMED_RUNS:
            raise ValueError(f"timed_runs must be >= {MIN_TIMED_RUNS}")
        if not (self.p10_ms <= self.median_ms <= self.p90_ms):
            raise ValueError("percentiles must satisfy p10 <= median <= p90")

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "warmup_runs": self.warmup_runs,
            "timed_runs": self.timed_runs,
            "median_ms": self.median_ms,
            "p10_ms": self.p10_ms,
            "p90_ms": self.p90_ms,
            "relative_to_HHH": self.relative_to_HHH,
            "single_threaded": self.single_threaded,
        }


# -- counting ----------------------------------------------------------


def count_params(net: PtaNetwork, cfg: Union[PtaConfig, str]) -> int:
    """Trainable element count for ``cfg`` (running stats excluded)."""
    return net.active_parameters(cfg)


def _conv_cost(layer, h: int, w: int) -> Tuple[int, int, int]:
    """MACs of one conv at spatial size (h, w), plus its output size."""
    k, s, p = layer.kernel_size, layer.stride, layer.padding
    ho, wo = _conv_out_hw(h, w, k, k, s, p)
    cin_g = layer.in_channels // layer.groups
    macs = ho * wo * layer.out_channels * (k * k * cin_g)
    if layer.bias is not None:
        macs += layer.out_channels * ho * wo
    return macs, ho, wo


def _residual_cost(block: InvertedResidual, h: int, w: int) -> Tuple[int, int, int]:
    total = 0
    if block.expand is not None:
        macs, h, w = _conv_cost(block.expand, h, w)
        total += macs + 3 * block.hidden_channels * h * w  # fused norm+clamp
    macs, h, w = _conv_cost(block.depthwise, h, w)
    total += macs + 3 * block.hidden_channels * h * w
    macs, h, w = _conv_cost(block.project, h, w)
    total += macs + 2 * block.out_channels * h * w  # linear projection norm
    return total, h, w


def count_macs(
    net: PtaNetwork,
    cfg: Union[PtaConfig, str, None] = None,
    input_hw: Tuple[int, int] = (128, 128),
) -> int:
    """Analytic operation count of a 1-image forward at ``input_hw``.

    Prices exactly what the kernels execute: convolutions at
    out_elements*(kh*kw*cin/groups), batch norm at 2 per element (3 when
    fused with the clamp), pooling at 1 per input element, and the
    classifier affine.  Elementwise skip/merge additions ride along with
    the kernels and are not priced separately.
    """
    h, w = input_hw
    if h < MIN_INPUT_SIZE or w < MIN_INPUT_SIZE:
        raise ValueError(f"input must be at least {MIN_INPUT_SIZE} per side")
    choices = as_config(cfg).choices if cfg is not None else net.config.choices

    total, h, w = _conv_cost(net.stem, h, w)
    total += 3 * net.stem.out_channels * h * w
    adaptive = 0
    for stage in net.stages:
        if isinstance(stage, PtaBlock):
            choice = choices[adaptive]
            adaptive += 1
            branches = []
            if choice in (BranchChoice.LIGHT, BranchChoice.BOTH):
                branches.append(stage.light)
            if choice in (BranchChoice.HEAVY, BranchChoice.BOTH):
                branches.append(stage.heavy)
            h_out, w_out = h, w
            for branch in branches:
                bh, bw = h, w
                for block in branch:
                    macs, bh, bw = _residual_cost(block, bh, bw)
                    total += macs
                h_out, w_out = bh, bw
            h, w = h_out, w_out
        else:
            for block in stage:
                macs, h, w = _residual_cost(block, h, w)
                total += macs
    macs, h, w = _conv_cost(net.head, h, w)
    total += macs + 3 * net.head.out_channels * h * w
    total += net.head.out_channels * h * w  # global average pool
    total += net.classifier.in_features * net.classifier.out_features
    total += net.classifier.out_features  # bias
    return total


# -- latency -----------------------------------------------------------


def _single_thread_limiter():
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except ImportError:  # pragma: no cover - dependency is installed
        return contextlib.nullcontext()


def bench_latency(
    net: PtaNetwork,
    cfg: Union[PtaConfig, str],
    runs: int = 50,
    warmup: int = 5,
    seed: int = 0,
    clock: Callable[[], float] = time.perf_counter,
    single_threaded: bool = True,
) -> LatencyReport:
    """Per-forward wall-clock of single 1x3x128x128 inputs.

    Inputs are generated from ``seed`` alone, so every configuration is
    timed on bitwise-identical data.  ``clock`` is injectable for tests.
    """
    if runs < MIN_TIMED_RUNS:
        raise ValueError(f"need at least {MIN_TIMED_RUNS} timed runs, got {runs}")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    config = as_config(cfg)
    net.configure(config)
    net.set_training(False)
    rng = np.random.default_rng(seed)
    inputs = [
        rng.random(size=(1, 3, 128, 128), dtype=np.float32) for _ in range(warmup + runs)
    ]
    times_ms = []
    ctx = _single_thread_limiter() if single_threaded else contextlib.nullcontext()
    with ctx, no_grad():
        for i, x in enumerate(inputs):
            start = clock()
            net.forward(Tensor(x))
            elapsed = clock() - start
            if i >= warmup:
                times_ms.append(elapsed * 1e3)
    return LatencyReport(
        config=str(config),
        warmup_runs=warmup,
        timed_runs=runs,
        median_ms=float(np.median(times_ms)),
        p10_ms=float(np.percentile(times_ms, 10)),
        p90_ms=float(np.percentile(times_ms, 90)),
        relative_to_HHH=float("nan"),
        single_threaded=single_threaded,
    )


def with_relative(
    reports: Sequence[LatencyReport], baseline: LatencyReport
) -> List[LatencyReport]:
    """Fill ``relative_to_HHH`` as median ratio against ``baseline``."""
    out = []
    for rep in reports:
        ratio = rep.median_ms / baseline.median_ms
        out.append(
            LatencyReport(
                config=rep.config,
                warmup_runs=rep.warmup_runs,
                timed_runs=rep.timed_runs,
                median_ms=rep.median_ms,
                p10_ms=rep.p10_ms,
                p90_ms=rep.p90_ms,
                relative_to_HHH=ratio,
                single_threaded=rep.single_threaded,
            )
        )
    return out


# -- reporting ---------------------------------------------------------


def complexity_suite(
    net: PtaNetwork,
    configs: Sequence[str] = CANONICAL_ORDER,
    input_hw: Tuple[int, int] = (128, 128),
) -> List[ComplexityReport]:
    """Parameter and MAC rows for ``configs``, relative column vs HHH."""
    base = count_macs(net, "HHH", input_hw)
    out = []
    for name in configs:
        macs = count_macs(net, name, input_hw)
        out.append(
            ComplexityReport(
                config=str(as_config(name)),
                params=count_params(net, name),
                macs=macs,
                relative_macs=macs / base,
            )
        )
    return out


def _order_key(name: str) -> Tuple[int, str]:
    try:
        return (CANONICAL_ORDER.index(name), name)
    except ValueError:
        return (len(CANONICAL_ORDER), name)


def emit_report(
    complexity: Sequence[ComplexityReport],
    latency: Sequence[LatencyReport] = (),
) -> dict:
    """Merge rows into one table-shaped document, canonical config order."""
    if not complexity and not latency:
        raise ValueError("nothing to report")
    rows = {}
    for rep in complexity:
        rows.setdefault(rep.config, {}).update(rep.as_dict())
    for rep in latency:
        rows.setdefault(rep.config, {}).update(rep.as_dict())
    ordered = sorted(rows, key=_order_key)
    return {"configs": [rows[name] for name in ordered]}


def format_table(doc: dict) -> str:
    """Aligned text table: params in millions, Mops, ms, relative columns."""
    header = f"{'config':<8}{'params (M)':>12}{'Mops':>10}{'ms':>10}{'relative':>10}"
    lines = [header, "-" * len(header)]
    for row in doc["configs"]:
        params = f"{row['params'] / 1e6:.2f}" if "params" in row else "-"
        macs = f"{row['macs'] / 1e6:.2f}" if "macs" in row else "-"
        ms = f"{row['median_ms']:.2f}" if "median_ms" in row else "-"
        if "relative_to_HHH" in row:
            rel = f"{row['relative_to_HHH']:.2f}"
        elif "relative_macs" in row:
            rel = f"{row['relative_macs']:.2f}"
        else:
            rel = "-"
        lines.append(f"{row['config']:<8}{params:>12}{macs:>10}{ms:>10}{rel:>10}")
    return "\n".join(lines)


def report_json(doc: dict) -> str:
    return json.dumps(doc, indent=2)
