"""Network definition: MobileNetV2-style backbone with adaptive blocks.

The body is a fixed sequence of ten stages.  Seven are ordinary inverted
residual stages; stages 4, 6 and 8 are adaptive blocks that carry a light
branch (one inverted residual) and a heavy branch (two) at the same channel
width.  Which branch runs is chosen per block at call time via ``configure``,
so a single weight set serves every light/heavy/both combination.

Parameter names are canonical and stable, e.g. ``body.4.heavy.0.expand.weight``
or ``body.1.0.project_bn.gamma``; the weight file format and the optimizer key
state by these names.
"""

import enum
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np

from . import tensor as T
from .nn import BatchNormLayer, Conv2dLayer, LinearLayer, bn_relu6, global_avg_pool
from .tensor import Tensor

NUM_CLASSES = 2
MIN_INPUT_SIZE = 32


class BranchChoice(enum.Enum):
    LIGHT = "L"
    HEAVY = "H"
    BOTH = "B"


_CHOICE_BY_CHAR = {c.value: c for c in BranchChoice}


@dataclass(frozen=True)
class PtaConfig:
    """Branch selection for the three adaptive blocks, in network order."""

    choices: Tuple[BranchChoice, BranchChoice, BranchChoice]

    def __post_init__(self):
        if len(self.choices) != 3 or not all(
            isinstance(c, BranchChoice) for c in self.choices
        ):
            raise ValueError("PtaConfig needs exactly 3 branch choices")

    @classmethod
    def from_string(cls, s: str) -> "PtaConfig":
        if not isinstance(s, str) or len(s) != 3:
            raise ValueError(
                f"config string must have exactly 3 characters from {{H,L,B}}, got {s!r}"
            )
        try:
            return cls(tuple(_CHOICE_BY_CHAR[ch] for ch in s.upper()))
        except KeyError:
            raise ValueError(
                f"config string must use only H, L or B, got {s!r}"
            ) from None

    def __str__(self) -> str:
        return "".join(c.value for c in self.choices)


def as_config(cfg: Union[PtaConfig, str]) -> PtaConfig:
    return cfg if isinstance(cfg, PtaConfig) else PtaConfig.from_string(cfg)


def make_divisible(v: float, divisor: int = 8, min_value: Optional[int] = None) -> int:
    """Round channel counts to a multiple of ``divisor``, never dropping >10%."""
    if min_value is None:
        min_value = divisor
    new_v = max(min_value, int(v + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * v:
        new_v += divisor
    return new_v


class InvertedResidual:
    """Expand (1x1) -> depthwise (3x3) -> project (1x1), residual when shapes allow.

    ``expand_ratio == 1`` drops the expansion conv entirely.  ReLU6 follows the
    expand and depthwise norms; the projection is linear.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int,
                 expand_ratio: int, rng: Optional[np.random.Generator] = None):
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        hidden = int(round(in_channels * expand_ratio))
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.hidden_channels = hidden
        self.stride = stride
        self.use_skip = stride == 1 and in_channels == out_channels
        if expand_ratio != 1:
            self.expand = Conv2dLayer(in_channels, hidden, 1, rng=rng)
            self.expand_bn = BatchNormLayer(hidden)
        else:
            self.expand = None
            self.expand_bn = None
        self.depthwise = Conv2dLayer(hidden, hidden, 3, stride=stride, padding=1,
                                     groups=hidden, rng=rng)
        self.depthwise_bn = BatchNormLayer(hidden)
        self.project = Conv2dLayer(hidden, out_channels, 1, rng=rng)
        self.project_bn = BatchNormLayer(out_channels)

    def __call__(self, x: Tensor) -> Tensor:
        y = x
        if self.expand is not None:
            y = bn_relu6(self.expand_bn, self.expand(y))
        y = bn_relu6(self.depthwise_bn, self.depthwise(y))
        y = self.project_bn(self.project(y))
        return T.add(x, y) if self.use_skip else y

    def parts(self) -> Iterator[Tuple[str, object]]:
        if self.expand is not None:
            yield "expand", self.expand
            yield "expand_bn", self.expand_bn
        yield "depthwise", self.depthwise
        yield "depthwise_bn", self.depthwise_bn
        yield "project", self.project
        yield "project_bn", self.project_bn


class PtaBlock:
    """Adaptive block: light branch (1 block) and heavy branch (2) at equal width.

    ``choice`` picks LIGHT, HEAVY, or BOTH; BOTH runs the two branches on the
    same input and averages their outputs elementwise.
    """

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None):
        self.channels = channels
        self.in_channels = channels
        self.out_channels = channels
        self.light: List[InvertedResidual] = [
            InvertedResidual(channels, channels, 1, 6, rng)
        ]
        self.heavy: List[InvertedResidual] = [
            InvertedResidual(channels, channels, 1, 6, rng),
            InvertedResidual(channels, channels, 1, 6, rng),
        ]
        self.choice = BranchChoice.HEAVY

    def _run(self, branch: List[InvertedResidual], x: Tensor) -> Tensor:
        for block in branch:
            x = block(x)
        return x

    def __call__(self, x: Tensor) -> Tensor:
        if self.choice is BranchChoice.LIGHT:
            return self._run(self.light, x)
        if self.choice is BranchChoice.HEAVY:
            return self._run(self.heavy, x)
        return T.scale_mean2(self._run(self.light, x), self._run(self.heavy, x))

    def branches(self) -> Iterator[Tuple[str, List[InvertedResidual]]]:
        yield "light", self.light
        yield "heavy", self.heavy

    def active_branches(self) -> Iterator[List[InvertedResidual]]:
        if self.choice in (BranchChoice.LIGHT, BranchChoice.BOTH):
            yield self.light
        if self.choice in (BranchChoice.HEAVY, BranchChoice.BOTH):
            yield self.heavy


# (out_channels, repeats, first_stride, expand_ratio) or adaptive marker
_STAGE_TABLE = [
    (16, 1, 1, 1),
    (24, 2, 2, 6),
    (32, 3, 2, 6),
    (64, 2, 2, 6),
    "adaptive",
    (96, 1, 1, 6),
    "adaptive",
    (160, 1, 2, 6),
    "adaptive",
    (320, 1, 1, 6),
]


class PtaNetwork:
    """Full classifier: stem, ten-stage body, 1x1 head, pooled linear output."""

    def __init__(self, stem: Conv2dLayer, stem_bn: BatchNormLayer,
                 stages: List[object], head: Conv2dLayer, head_bn: BatchNormLayer,
                 classifier: LinearLayer):
        self.stem = stem
        self.stem_bn = stem_bn
        self.stages = stages
        self.head = head
        self.head_bn = head_bn
        self.classifier = classifier
        self.num_classes = classifier.out_features

    # -- configuration -------------------------------------------------

    @property
    def pta_blocks(self) -> List[PtaBlock]:
        return [s for s in self.stages if isinstance(s, PtaBlock)]

    def configure(self, cfg: Union[PtaConfig, str]) -> None:
        cfg = as_config(cfg)
        blocks = self.pta_blocks
        if len(cfg.choices) != len(blocks):
            raise ValueError(
                f"config has {len(cfg.choices)} choices for {len(blocks)} adaptive blocks"
            )
        for block, choice in zip(blocks, cfg.choices):
            block.choice = choice

    @property
    def config(self) -> PtaConfig:
        return PtaConfig(tuple(b.choice for b in self.pta_blocks))

    # -- execution -----------------------------------------------------

    def set_training(self, training: bool) -> None:
        for _, layer in self._layers():
            if isinstance(layer, BatchNormLayer):
                layer.training_mode = training

    def forward(self, x: Union[Tensor, np.ndarray], training: bool = False) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.data.ndim != 4 or x.data.shape[1] != 3:
            raise ValueError(f"input must be [N, 3, H, W], got shape {x.shape}")
        if x.data.shape[2] < MIN_INPUT_SIZE or x.data.shape[3] < MIN_INPUT_SIZE:
            raise ValueError(
                f"input spatial size must be at least {MIN_INPUT_SIZE}, got "
                f"{x.data.shape[2]}x{x.data.shape[3]}"
            )
        self.set_training(training)
        y = bn_relu6(self.stem_bn, self.stem(x))
        for stage in self.stages:
            if isinstance(stage, PtaBlock):
                y = stage(y)
            else:
                for block in stage:
                    y = block(y)
        y = bn_relu6(self.head_bn, self.head(y))
        y = global_avg_pool(y)
        return self.classifier(y)

    __call__ = forward

    # -- parameter traversal -------------------------------------------

    def _layers(self) -> Iterator[Tuple[str, object]]:
        """Every (name, layer) pair in canonical order, both branches included."""
        yield "stem", self.stem
        yield "stem_bn", self.stem_bn
        for i, stage in enumerate(self.stages):
            if isinstance(stage, PtaBlock):
                for bname, branch in stage.branches():
                    for j, block in enumerate(branch):
                        for pname, layer in block.parts():
                            yield f"body.{i}.{bname}.{j}.{pname}", layer
            else:
                for j, block in enumerate(stage):
                    for pname, layer in block.parts():
                        yield f"body.{i}.{j}.{pname}", layer
        yield "head", self.head
        yield "head_bn", self.head_bn
        yield "classifier", self.classifier

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for lname, layer in self._layers():
            for pname, p in layer.named_parameters():
                yield f"{lname}.{pname}", p

    def state_items(self) -> Iterator[Tuple[str, np.ndarray]]:
        """Parameters and running statistics, canonical order, for serialization."""
        for lname, layer in self._layers():
            for pname, p in layer.named_parameters():
                yield f"{lname}.{pname}", p.data
            if isinstance(layer, BatchNormLayer):
                for bname, b in layer.named_buffers():
                    yield f"{lname}.{bname}", b

    def load_state(self, state: dict) -> None:
        """Install arrays by canonical name; names and shapes must match exactly."""
        expected = dict(self.state_items())
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        if missing or extra:
            raise ValueError(
                f"state mismatch: missing {missing[:4]}{'...' if len(missing) > 4 else ''}, "
                f"unexpected {extra[:4]}{'...' if len(extra) > 4 else ''}"
            )
        params = dict(self.named_parameters())
        buffer_owners = {}
        for lname, layer in self._layers():
            if isinstance(layer, BatchNormLayer):
                for bname, _ in layer.named_buffers():
                    buffer_owners[f"{lname}.{bname}"] = (layer, bname)
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float32)
            if value.shape != expected[name].shape:
                raise ValueError(
                    f"shape mismatch for {name}: file has {value.shape}, "
                    f"model needs {expected[name].shape}"
                )
            if name in params:
                params[name].data[...] = value
            else:
                layer, bname = buffer_owners[name]
                layer.set_buffer(bname, value)

    # -- accounting ----------------------------------------------------

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def active_parameters(self, cfg: Optional[Union[PtaConfig, str]] = None) -> int:
        """Trainable parameter count for the given (or current) configuration."""
        if cfg is not None:
            choices = as_config(cfg).choices
        else:
            choices = self.config.choices
        total = 0
        adaptive = 0
        for i, stage in enumerate(self.stages):
            if isinstance(stage, PtaBlock):
                choice = choices[adaptive]
                adaptive += 1
                branches = []
                if choice in (BranchChoice.LIGHT, BranchChoice.BOTH):
                    branches.append(stage.light)
                if choice in (BranchChoice.HEAVY, BranchChoice.BOTH):
                    branches.append(stage.heavy)
                for branch in branches:
                    for block in branch:
                        for _, layer in block.parts():
                            total += sum(p.size for _, p in layer.named_parameters())
            else:
                for block in stage:
                    for _, layer in block.parts():
                        total += sum(p.size for _, p in layer.named_parameters())
        for layer in (self.stem, self.stem_bn, self.head, self.head_bn, self.classifier):
            total += sum(p.size for _, p in layer.named_parameters())
        return total


def build_network(seed: int, width: float = 1.0) -> PtaNetwork:
    """Construct the classifier with seeded init.

    ``width`` scales every channel count (rounded to multiples of 8); the head
    never shrinks below 1280.  Construction order is fixed, so equal seeds give
    bitwise-equal initial weights.
    """
    if width <= 0:
        raise ValueError(f"width must be positive, got {width}")
    rng = np.random.default_rng(seed)
    stem_ch = make_divisible(32 * width)
    stem = Conv2dLayer(3, stem_ch, 3, stride=2, padding=1, rng=rng)
    stem_bn = BatchNormLayer(stem_ch)

    stages: List[object] = []
    in_ch = stem_ch
    for entry in _STAGE_TABLE:
        if entry == "adaptive":
            stages.append(PtaBlock(in_ch, rng))
            continue
        out_base, repeats, stride, ratio = entry
        out_ch = make_divisible(out_base * width)
        blocks = []
        for r in range(repeats):
            blocks.append(
                InvertedResidual(in_ch, out_ch, stride if r == 0 else 1, ratio, rng)
            )
            in_ch = out_ch
        stages.append(blocks)

    head_ch = make_divisible(1280 * max(1.0, width))
    head = Conv2dLayer(in_ch, head_ch, 1, rng=rng)
    head_bn = BatchNormLayer(head_ch)
    classifier = LinearLayer(head_ch, NUM_CLASSES, rng=rng)
    return PtaNetwork(stem, stem_bn, stages, head, head_bn, classifier)
