"""Temperature softmax over raw confidences and the three OoD score functions."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .vocab import ClassTag, EffectiveVocab

# Softmax runs on raw 0-100 values; tau=1 keeps one-hot responses saturated for any class count.
DEFAULT_TAU = 1.0


@dataclass(frozen=True)
class ProbMap:
    probabilities: dict[str, float]
    tags: dict[str, ClassTag]

    def __post_init__(self) -> None:
        if set(self.probabilities) != set(self.tags):
            raise ValueError("probabilities and tags cover different classes")
        if sum(t is ClassTag.REJECT for t in self.tags.values()) != 1:
            raise ValueError("exactly one rejection class is required")
        total = math.fsum(self.probabilities.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, not 1")

    def of(self, tag: ClassTag) -> list[float]:
        return [p for c, p in self.probabilities.items() if self.tags[c] is tag]


def normalize(confidences: Mapping[str, float], vocab: EffectiveVocab, tau: float = DEFAULT_TAU) -> ProbMap:
    """Softmax of ``s / tau`` over every class in ``vocab``, rejection included.

    ``confidences`` must already hold a value for each class (the parser's repaired map).
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if not confidences:
        raise ValueError("no confidences to normalize")
    names = list(vocab.classes)
    missing = [c for c in names if c not in confidences]
    if missing:
        raise ValueError(f"no confidence for {missing[:3]}")
    values = np.empty(len(names), dtype=np.float64)
    for i, c in enumerate(names):
        v = float(confidences[c])
        if not math.isfinite(v):
            raise ValueError(f"non-finite confidence {v} for class {c!r}")
        values[i] = v
    z = values / tau
    e = np.exp(z - z.max())
    p = e / e.sum()
    return ProbMap(dict(zip(names, p.tolist())), dict(zip(names, vocab.tags)))


def score_max(p: ProbMap) -> float:
    ids = p.of(ClassTag.ID)
    if not ids:
        raise ValueError("no ID-tagged class")
    return max(ids)


def score_sumsub(p: ProbMap) -> float:
    return math.fsum(p.of(ClassTag.ID)) - math.fsum(p.of(ClassTag.AUX))


def score_maxsub(p: ProbMap) -> float:
    aux = p.of(ClassTag.AUX)
    if not aux:
        return score_max(p)
    return score_max(p) - max(aux)


class ScoreKind(str, enum.Enum):
    MAX = "max"
    SUMSUB = "sumsub"
    MAXSUB = "maxsub"


SCORE_FUNCTIONS: dict[ScoreKind, Callable[[ProbMap], float]] = {
    ScoreKind.MAX: score_max,
    ScoreKind.SUMSUB: score_sumsub,
    ScoreKind.MAXSUB: score_maxsub,
}


def ood_score(p: ProbMap, kind: ScoreKind | str = ScoreKind.MAX) -> float:
    return SCORE_FUNCTIONS[ScoreKind(kind)](p)
