"""OoD and selective-prediction metrics, and the per-run report."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .benchmark import BenchmarkManifest, Role

ALL_OOD = "ALL_OOD"
DEFAULT_TPR_TARGETS = (0.95, 0.90)
DEFAULT_ECE_BINS = 15
ECE_SCALE = 100
AURC_SCALE = 1000


def _arrays(a: Sequence[float], b: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise ValueError("score lists must be non-empty")
    return x, y


def auroc(id_scores: Sequence[float], ood_scores: Sequence[float]) -> float:
    """Mann-Whitney estimate of P(id > ood) with ties counted as one half."""
    x, y = _arrays(id_scores, ood_scores)
    ys = np.sort(y)
    below = np.searchsorted(ys, x, side="left")
    at_or_below = np.searchsorted(ys, x, side="right")
    # twice the concordance count stays an integer, so the ratio is exact
    twice = int(np.sum(below + at_or_below))
    return twice / (2 * x.size * y.size)


def _threshold_at_tpr(x: np.ndarray, tpr_target: float) -> float:
    values, counts = np.unique(x, return_counts=True)
    values, counts = values[::-1], counts[::-1]
    tpr = np.cumsum(counts) / x.size
    idx = int(np.argmax(tpr >= tpr_target))
    return float(values[idx])


def fpr_at_tpr(id_scores: Sequence[float], ood_scores: Sequence[float], tpr_target: float = 0.95) -> float:
    """FPR at the largest threshold ``t`` whose ID acceptance rate (score >= t) reaches the target."""
    if not 0.0 < tpr_target <= 1.0:
        raise ValueError(f"tpr_target must be in (0, 1], got {tpr_target}")
    x, y = _arrays(id_scores, ood_scores)
    t = _threshold_at_tpr(x, tpr_target)
    return int(np.sum(y >= t)) / y.size


def roc_points(id_scores: Sequence[float], ood_scores: Sequence[float]) -> list[tuple[float, float, float]]:
    """``(threshold, fpr, tpr)`` for every distinct score, starting at (inf, 0, 0)."""
    x, y = _arrays(id_scores, ood_scores)
    thresholds = np.unique(np.concatenate([x, y]))[::-1]
    xs, ys = np.sort(x), np.sort(y)
    tpr = (x.size - np.searchsorted(xs, thresholds, side="left")) / x.size
    fpr = (y.size - np.searchsorted(ys, thresholds, side="left")) / y.size
    return [(float("inf"), 0.0, 0.0)] + list(zip(thresholds.tolist(), fpr.tolist(), tpr.tolist()))


def _check_pairs(conf: Sequence[float], correct: Sequence[bool]) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(conf, dtype=np.float64)
    k = np.asarray(correct, dtype=bool)
    if c.shape != k.shape:
        raise ValueError(f"length mismatch: {c.size} confidences vs {k.size} labels")
    return c, k


def ece(top_confidences: Sequence[float], correct: Sequence[bool], n_bins: int = DEFAULT_ECE_BINS) -> float:
    """Binned expected calibration error; bins are (i/n, (i+1)/n] with 0 folded into the first."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    c, k = _check_pairs(top_confidences, correct)
    if c.size == 0:
        raise ValueError("no confidences")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.digitize(c, edges[1:-1], right=True), 0, n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        mask = idx == b
        m = int(mask.sum())
        if m:
            total += (m / c.size) * abs(float(k[mask].mean()) - float(c[mask].mean()))
    return total


def aurc(top_confidences: Sequence[float], correct: Sequence[bool]) -> float:
    """Mean selective risk over coverages 1/n .. n/n, most confident first, ties in input order."""
    c, k = _check_pairs(top_confidences, correct)
    if c.size == 0:
        raise ValueError("no confidences")
    order = np.argsort(-c, kind="stable")
    errors = np.cumsum(~k[order])
    risks = errors / np.arange(1, c.size + 1)
    return float(risks.mean())


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    dataset: str
    role: Role
    valid: bool
    ood_score: float | None = None
    predicted_class: str | None = None
    predicted_tag: str | None = None
    label: str | None = None
    correct: bool | None = None
    top_confidence: float | None = None
    failures: tuple[int, ...] = ()
    fallback: bool = False
    rationale: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "failures", tuple(self.failures))
        if self.valid and self.ood_score is None:
            raise ValueError(f"valid record {self.sample_id!r} has no score")
        if self.valid and self.role is Role.ID and (self.correct is None or self.top_confidence is None):
            raise ValueError(f"valid ID record {self.sample_id!r} needs correct and top_confidence")

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id, "dataset": self.dataset, "role": self.role.value,
            "valid": self.valid, "ood_score": self.ood_score, "predicted_class": self.predicted_class,
            "predicted_tag": self.predicted_tag, "label": self.label, "correct": self.correct,
            "top_confidence": self.top_confidence, "failures": list(self.failures),
            "fallback": self.fallback, "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvalRecord":
        d = dict(d)
        d["failures"] = tuple(d.get("failures", ()))
        return cls(**d)


@dataclass(frozen=True)
class OodMetrics:
    n_valid: int
    auroc: float | None
    fpr_at_tpr: dict[float, float | None]


@dataclass(frozen=True)
class IdMetrics:
    n_valid: int
    accuracy: float | None
    ece: float | None
    aurc: float | None


@dataclass(frozen=True)
class MetricsReport:
    benchmark: str
    ood: dict[str, OodMetrics]
    id: IdMetrics
    valid_count: int
    total_queries: int
    valid_ratio: float | None
    tpr_targets: tuple[float, ...] = DEFAULT_TPR_TARGETS
    ece_bins: int = DEFAULT_ECE_BINS
    meta: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready form; ECE is multiplied by 100 and AURC by 1000 here and only here."""
        def scaled(v: float | None, s: int) -> float | None:
            return None if v is None else v * s
        return {
            "benchmark": self.benchmark,
            "valid_count": self.valid_count,
            "total_queries": self.total_queries,
            "valid_ratio": self.valid_ratio,
            "id": {
                "n_valid": self.id.n_valid,
                "accuracy": self.id.accuracy,
                "ece_x100": scaled(self.id.ece, ECE_SCALE),
                "aurc_x1000": scaled(self.id.aurc, AURC_SCALE),
            },
            "ood": {
                name: {
                    "n_valid": m.n_valid,
                    "auroc": m.auroc,
                    "fpr_at_tpr": {f"{t:g}": v for t, v in m.fpr_at_tpr.items()},
                }
                for name, m in self.ood.items()
            },
            "tpr_targets": list(self.tpr_targets),
            "ece_bins": self.ece_bins,
            "aurc_tie_break": "stable input order",
            "meta": self.meta,
        }

    def rows(self) -> list[dict[str, Any]]:
        """One flat row per OoD dataset (and the pooled set) for delimited output."""
        d = self.to_dict()
        out = []
        for name, m in d["ood"].items():
            row: dict[str, Any] = {"dataset": name, "n_valid": m["n_valid"], "auroc": m["auroc"]}
            for t, v in m["fpr_at_tpr"].items():
                row[f"fpr@{t}"] = v
            row.update({"id_accuracy": d["id"]["accuracy"], "id_ece_x100": d["id"]["ece_x100"],
                        "id_aurc_x1000": d["id"]["aurc_x1000"], "valid_ratio": d["valid_ratio"],
                        "valid_count": d["valid_count"], "total_queries": d["total_queries"]})
            out.append(row)
        return out


def _ood_block(id_scores: list[float], ood_scores: list[float], tpr_targets: Iterable[float]) -> OodMetrics:
    if not id_scores or not ood_scores:
        return OodMetrics(len(ood_scores), None, {t: None for t in tpr_targets})
    return OodMetrics(len(ood_scores), auroc(id_scores, ood_scores),
                      {t: fpr_at_tpr(id_scores, ood_scores, t) for t in tpr_targets})


def build_report(records: Sequence[EvalRecord], benchmark: BenchmarkManifest,
                 tpr_targets: Sequence[float] = DEFAULT_TPR_TARGETS, n_bins: int = DEFAULT_ECE_BINS,
                 meta: dict[str, Any] | None = None) -> MetricsReport:
    """Aggregate records; invalid ones count toward the valid ratio and nothing else."""
    tpr_targets = tuple(tpr_targets)
    valid = [r for r in records if r.valid]
    id_valid = [r for r in valid if r.role is Role.ID]
    id_scores = [r.ood_score for r in id_valid]

    ood: dict[str, OodMetrics] = {}
    for name in benchmark.ood_datasets:
        scores = [r.ood_score for r in valid if r.dataset == name and r.role.is_ood]
        ood[name] = _ood_block(id_scores, scores, tpr_targets)  # type: ignore[arg-type]
    pooled = [r.ood_score for r in valid if r.role.is_ood]
    ood[ALL_OOD] = _ood_block(id_scores, pooled, tpr_targets)  # type: ignore[arg-type]

    if id_valid:
        correct = [bool(r.correct) for r in id_valid]
        conf = [float(r.top_confidence) for r in id_valid]  # type: ignore[arg-type]
        id_block = IdMetrics(len(id_valid), sum(correct) / len(correct), ece(conf, correct, n_bins), aurc(conf, correct))
    else:
        id_block = IdMetrics(0, None, None, None)

    total = len(records)
    return MetricsReport(
        benchmark=benchmark.name, ood=ood, id=id_block, valid_count=len(valid), total_queries=total,
        valid_ratio=(len(valid) / total) if total else None, tpr_targets=tpr_targets, ece_bins=n_bins,
        meta=dict(meta or {}),
    )


def valid_ratio(valid_count: int, total: int) -> float:
    if total <= 0:
        raise ValueError("total must be positive")
    return valid_count / total
