"""Adam training loop with per-iteration branch-configuration sampling.

Each mini-batch draws a configuration from the sampler, reconfigures the
network, and runs forward/backward/step on the active path only.  After
every epoch the model is validated under the HHH configuration and the
best-ACER snapshot is written out.
"""

import dataclasses
import json
import math
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import AugmentSpec, Sample, augment, stack_batch
from .metrics import MetricsReport, compute, tally
from .model import PtaConfig, PtaNetwork, as_config
from .nn import softmax_cross_entropy
from .sampler import ConfigSampler, SamplerSpec
from .tensor import Tensor, no_grad
from .weights import save_model, write_arrays

HHH = PtaConfig.from_string("HHH")


class NumericError(RuntimeError):
    """Raised when training produces a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.2
    # 0 disables the loader thread; >0 is the bounded-queue capacity.
    prefetch_batches: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if not (0 < self.val_fraction < 1):
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.prefetch_batches < 0:
            raise ValueError("prefetch_batches must be >= 0")


class AdamOptimizer:
    """Bias-corrected Adam over named parameters.

    Branch weights receive gradients only when their branch is active, so
    each weight keeps its own step counter: bias correction uses the
    number of updates that weight has actually seen, not the global
    iteration count.
    """

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        # name -> [m, v, t]
        self.state: Dict[str, list] = {}

    def step(self, named_params: Iterable[Tuple[str, Tensor]]) -> int:
        """Update every parameter that holds a gradient; clear those grads.

        Parameters without a gradient (inactive branches) are left
        untouched, moments included.  Returns the number of updated
        weights.
        """
        cfg = self.cfg
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        updated = 0
        for name, p in named_params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name!r}")
            st = self.state.get(name)
            if st is None:
                st = [np.zeros_like(p.data), np.zeros_like(p.data), 0]
                self.state[name] = st
            m, v, _ = st
            st[2] += 1
            t = st[2]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
            p.grad = None
            updated += 1
        return updated

    def save_state(self, path: str) -> None:
        items = []
        for name, (m, v, t) in self.state.items():
            items.append((name + ".m", m))
            items.append((name + ".v", v))
            items.append((name + ".t", np.array([t], dtype=np.float32)))
        write_arrays(path, items)


def epoch_sample_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Deterministic per-epoch shuffle of sample indices."""
    rng = np.random.default_rng([seed, 2, epoch])
    return rng.permutation(n)


def _epoch_augment_spec(spec: AugmentSpec, epoch: int) -> AugmentSpec:
    # distinct per-epoch noise streams, still a pure function of the base seed
    return dataclasses.replace(spec, rng_seed=spec.rng_seed * 1_000_003 + epoch)


def _iter_batches(data, order, batch_size, aug):
    for start in range(0, len(order), batch_size):
        samples = [data[i] for i in order[start : start + batch_size]]
        if aug is not None:
            samples = [augment(s, aug) for s in samples]
        yield stack_batch(samples)


def _prefetched(gen, capacity: int):
    """Run the batch generator on a worker thread, preserving order."""
    q: queue.Queue = queue.Queue(maxsize=capacity)
    done = object()

    def worker():
        try:
            for item in gen:
                q.put(item)
            q.put(done)
        except BaseException as exc:  # re-raised on the consumer side
            q.put(exc)

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    while True:
        item = q.get()
        if item is done:
            break
        if isinstance(item, BaseException):
            raise item
        yield item
    thread.join()


def train_epoch(
    net: PtaNetwork,
    data: Sequence[Sample],
    sampler: Union[ConfigSampler, SamplerSpec],
    opt: AdamOptimizer,
    *,
    epoch: int = 0,
    augment_spec: Optional[AugmentSpec] = None,
) -> Tuple[float, Dict[str, int]]:
    """One pass over ``data``: per batch, sample a config, forward,
    backward, Adam step.  Returns (mean loss, sampled-config multiset).
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if isinstance(sampler, SamplerSpec):
        sampler = ConfigSampler(sampler)
    cfg = opt.cfg
    aug = None
    if augment_spec is not None and not augment_spec.is_identity:
        aug = _epoch_augment_spec(augment_spec, epoch)
    order = epoch_sample_order(len(data), cfg.seed, epoch)
    batches = _iter_batches(data, order, cfg.batch_size, aug)
    if cfg.prefetch_batches > 0:
        batches = _prefetched(batches, cfg.prefetch_batches)

    total = 0.0
    count = 0
    batch_index = 0
    drawn: Dict[str, int] = {}
    for images, labels in batches:
        config = sampler.sample()
        drawn[str(config)] = drawn.get(str(config), 0) + 1
        net.configure(config)
        logits = net.forward(Tensor(images), training=True)
        loss = softmax_cross_entropy(logits, labels)
        value = loss.value
        if not math.isfinite(value):
            raise NumericError(
                f"non-finite loss at epoch {epoch}, batch {batch_index}"
            )
        loss.backward()
        opt.step(net.named_parameters())
        total += value * len(labels)
        count += len(labels)
        batch_index += 1
    return total / count, drawn


def evaluate(
    net: PtaNetwork,
    data: Sequence[Sample],
    *,
    batch_size: int = 32,
    config: Union[PtaConfig, str, None] = None,
) -> MetricsReport:
    """Accuracy/APCER/BPCER/ACER of ``net`` on ``data`` in eval mode."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if config is not None:
        net.configure(as_config(config))
    net.set_training(False)
    preds = []
    labels = []
    with no_grad():
        for start in range(0, len(data), batch_size):
            x, y = stack_batch(data[start : start + batch_size])
            logits = net.forward(Tensor(x))
            preds.append(np.argmax(logits.data, axis=1))
            labels.append(y)
    return compute(tally(np.concatenate(preds), np.concatenate(labels)))


def stratified_split(
    data: Sequence[Sample], val_fraction: float, seed: int
) -> Tuple[List[Sample], List[Sample]]:
    """Disjoint, exhaustive train/val split, stratified by label."""
    if not (0 < val_fraction < 1):
        raise ValueError("val_fraction must lie in (0, 1)")
    rng = np.random.default_rng([seed, 1])
    train: List[Sample] = []
    val: List[Sample] = []
    for label in (0, 1):
        idx = [i for i, s in enumerate(data) if s.label == label]
        if not idx:
            continue
        perm = rng.permutation(len(idx))
        n_val = int(round(len(idx) * val_fraction))
        n_val = min(max(n_val, 1), len(idx) - 1) if len(idx) > 1 else 0
        chosen = {idx[p] for p in perm[:n_val]}
        for i in idx:
            (val if i in chosen else train).append(data[i])
    return train, val


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_acer: float
    val_accuracy: float
    wall_clock_sec: float
    sampled_configs: Dict[str, int]


@dataclass
class TrainReport:
    train_config: TrainConfig
    sampler: SamplerSpec
    epochs: List[EpochStats] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_weights: Optional[str] = None
    error: Optional[str] = None

    def as_dict(self) -> dict:
        """JSON form.  Wall-clock readings live in one 'timing' block so
        everything outside it is bit-for-bit reproducible across runs."""
        return {
            "train_config": dataclasses.asdict(self.train_config),
            "sampler": {
                "probabilities": self.sampler.as_mapping(),
                "rng_seed": self.sampler.rng_seed,
            },
            "epochs": [
                {
                    "epoch": e.epoch,
                    "train_loss": e.train_loss,
                    "val_acer": e.val_acer,
                    "val_accuracy": e.val_accuracy,
                    "sampled_configs": dict(sorted(e.sampled_configs.items())),
                }
                for e in self.epochs
            ],
            "best_epoch": self.best_epoch,
            "best_weights": self.best_weights,
            "error": self.error,
            "timing": {
                "per_epoch_sec": [e.wall_clock_sec for e in self.epochs],
                "total_sec": sum(e.wall_clock_sec for e in self.epochs),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def fit(
    net: PtaNetwork,
    train_set: Sequence[Sample],
    val_set: Optional[Sequence[Sample]],
    train_cfg: TrainConfig,
    sampler: Union[ConfigSampler, SamplerSpec],
    *,
    out_dir: str = ".",
    augment_spec: Optional[AugmentSpec] = None,
    on_epoch: Optional[Callable[[EpochStats], None]] = None,
) -> TrainReport:
    """Train for ``train_cfg.epochs`` epochs, validating ACER under HHH
    after each one, and snapshot the best-ACER weights (ties keep the
    earlier epoch).  With ``val_set=None`` the training set is split
    stratified ``val_fraction``/the rest.
    """
    spec = sampler.spec if isinstance(sampler, ConfigSampler) else sampler
    if isinstance(sampler, SamplerSpec):
        sampler = ConfigSampler(sampler)
    report = TrainReport(train_config=train_cfg, sampler=spec)
    if train_cfg.epochs == 0:
        report.error = "no training epochs requested"
        return report

    if val_set is None:
        train_set, val_set = stratified_split(
            train_set, train_cfg.val_fraction, train_cfg.seed
        )
    if not train_set or not val_set:
        raise ValueError("train and validation sets must both be non-empty")
    for name, part in (("train", train_set), ("validation", val_set)):
        if len({s.label for s in part}) < 2:
            raise ValueError(f"{name} set must contain both classes")

    os.makedirs(out_dir, exist_ok=True)
    weights_path = os.path.join(out_dir, "model.ptaw")
    optim_path = os.path.join(out_dir, "model.optim")
    opt = AdamOptimizer(train_cfg)
    best_acer = float("inf")

    for epoch in range(train_cfg.epochs):
        started = time.perf_counter()
        mean_loss, drawn = train_epoch(
            net, train_set, sampler, opt, epoch=epoch, augment_spec=augment_spec
        )
        rep = evaluate(net, val_set, batch_size=train_cfg.batch_size, config=HHH)
        if rep.acer is None:
            raise ValueError("validation ACER undefined: a class is missing")
        elapsed = time.perf_counter() - started
        report.epochs.append(
            EpochStats(
                epoch=epoch,
                train_loss=mean_loss,
                val_acer=rep.acer,
                val_accuracy=rep.accuracy,
                wall_clock_sec=elapsed,
                sampled_configs=drawn,
            )
        )
        if rep.acer < best_acer:
            best_acer = rep.acer
            report.best_epoch = epoch
            save_model(net, weights_path)
            opt.save_state(optim_path)
            report.best_weights = weights_path
        if on_epoch is not None:
            on_epoch(report.epochs[-1])
    return report
