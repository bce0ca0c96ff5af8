"""Anti-spoofing evaluation metrics.

Convention: the positive class is spoof/attack (label 1).  APCER is the
fraction of attack presentations misclassified as bona fide, FN/(TP+FN);
BPCER is the fraction of bona fide presentations misclassified as attacks,
FP/(FP+TN); ACER is their mean.  A metric whose denominator class is absent
is undefined (None), never silently 0.

Percent rendering divides the raw integer counts in decimal arithmetic and
rounds half away from zero, so e.g. 2.625% prints as "2.63" the way a
results table would, not the "2.62" that float formatting produces.
"""

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts; positive class = spoof (label 1)."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.tn + other.tn,
            self.fp + other.fp, self.fn + other.fn,
        )


def tally(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    """Count the four confusion cells from binary predictions and labels."""
    preds = np.asarray(predictions)
    labs = np.asarray(labels)
    if preds.shape != labs.shape or preds.ndim != 1:
        raise ValueError(
            f"predictions and labels must be equal-length vectors, got "
            f"{preds.shape} and {labs.shape}"
        )
    for name, a in (("predictions", preds), ("labels", labs)):
        if a.size and not np.isin(a, (0, 1)).all():
            raise ValueError(f"{name} must be binary (0=live, 1=spoof)")
    tp = int(np.count_nonzero((labs == 1) & (preds == 1)))
    tn = int(np.count_nonzero((labs == 0) & (preds == 0)))
    fp = int(np.count_nonzero((labs == 0) & (preds == 1)))
    fn = int(np.count_nonzero((labs == 1) & (preds == 0)))
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den > 0 else None


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy plus APCER/BPCER/ACER; None marks an undefined metric."""

    counts: ConfusionCounts
    accuracy: Optional[float]
    apcer: Optional[float]
    bpcer: Optional[float]
    acer: Optional[float]

    def _percent_fractions(self):
        c = self.counts
        out = {}
        out["accuracy"] = (
            Fraction(100 * (c.tp + c.tn), c.total) if c.total else None
        )
        attacks = c.tp + c.fn
        bona_fide = c.fp + c.tn
        out["apcer"] = Fraction(100 * c.fn, attacks) if attacks else None
        out["bpcer"] = Fraction(100 * c.fp, bona_fide) if bona_fide else None
        if out["apcer"] is not None and out["bpcer"] is not None:
            out["acer"] = (out["apcer"] + out["bpcer"]) / 2
        else:
            out["acer"] = None
        return out

    def percent_strings(self, places: int = 2) -> dict:
        """Exact count-derived percentages, rounded half away from zero."""
        quantum = Decimal(1).scaleb(-places)
        out = {}
        for name, frac in self._percent_fractions().items():
            if frac is None:
                out[name] = None
            else:
                d = Decimal(frac.numerator) / Decimal(frac.denominator)
                out[name] = str(d.quantize(quantum, rounding=ROUND_HALF_UP))
        return out

    def as_dict(self) -> dict:
        c = self.counts
        return {
            "counts": {"tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn, "total": c.total},
            "accuracy": self.accuracy,
            "apcer": self.apcer,
            "bpcer": self.bpcer,
            "acer": self.acer,
            "percent": self.percent_strings(),
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.as_dict(), indent=indent)


def compute(counts: ConfusionCounts) -> MetricsReport:
    """Derive the metric set from confusion counts."""
    c = counts
    accuracy = _ratio(c.tp + c.tn, c.total)
    apcer = _ratio(c.fn, c.tp + c.fn)
    bpcer = _ratio(c.fp, c.fp + c.tn)
    acer = (apcer + bpcer) / 2 if apcer is not None and bpcer is not None else None
    return MetricsReport(counts=c, accuracy=accuracy, apcer=apcer, bpcer=bpcer, acer=acer)
