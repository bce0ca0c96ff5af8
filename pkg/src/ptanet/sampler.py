"""Per-iteration configuration sampling.

Training draws a branch configuration for every batch from a categorical
distribution over config strings.  The PRNG is a self-contained SplitMix64 so
sampled sequences are reproducible across platforms and numpy versions, and
sampling is inverse-CDF over the spec's fixed entry order so the draw for a
given uniform never depends on dict insertion history.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

from .model import PtaConfig

_MASK = (1 << 64) - 1

DEFAULT_MIX = {
    "HHH": 0.45,
    "LHH": 0.15,
    "HLH": 0.15,
    "HHL": 0.15,
    "LLL": 0.10,
    "BBB": 0.00,
}

PROB_SUM_TOL = 1e-9


class SplitMix64:
    """64-bit SplitMix generator; uniform() yields 53-bit doubles in [0, 1)."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (2.0 ** -53)


@dataclass
class SamplerSpec:
    """Categorical distribution over configuration strings.

    Entry order is part of the spec: inverse-CDF sampling walks ``entries`` in
    order, so two specs with equal probabilities but different order can map
    the same uniform draw to different configs.
    """

    entries: List[Tuple[str, float]] = field(
        default_factory=lambda: list(DEFAULT_MIX.items())
    )
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.entries:
            raise ValueError("sampler spec has no entries")
        seen = set()
        total = 0.0
        for name, prob in self.entries:
            PtaConfig.from_string(name)  # raises on malformed configs
            if name in seen:
                raise ValueError(f"duplicate config {name!r} in sampler spec")
            seen.add(name)
            if not (prob >= 0.0):
                raise ValueError(f"probability for {name!r} must be >= 0, got {prob}")
            total += prob
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(
                f"probabilities must sum to 1 within {PROB_SUM_TOL}, got {total!r}"
            )
        if all(p == 0.0 for _, p in self.entries):
            raise ValueError("at least one probability must be positive")

    @classmethod
    def from_mapping(cls, probs: Dict[str, float], rng_seed: int = 0) -> "SamplerSpec":
        return cls(list(probs.items()), rng_seed=rng_seed)

    def as_mapping(self) -> Dict[str, float]:
        return dict(self.entries)

    def configs(self) -> Iterator[str]:
        for name, _ in self.entries:
            yield name


class ConfigSampler:
    """Seeded stream of configuration draws from a ``SamplerSpec``.

    ``seed`` overrides the spec's own ``rng_seed`` when given.
    """

    def __init__(self, spec: SamplerSpec, seed: Optional[int] = None):
        spec.validate()
        self.spec = spec
        self._rng = SplitMix64(spec.rng_seed if seed is None else seed)

    def sample(self) -> str:
        u = self._rng.uniform()
        acc = 0.0
        last_positive = None
        for name, prob in self.spec.entries:
            if prob > 0.0:
                last_positive = name
            acc += prob
            if u < acc:
                return name
        # u == sum(p) - rounding tail: fall back to the last viable entry
        return last_positive
