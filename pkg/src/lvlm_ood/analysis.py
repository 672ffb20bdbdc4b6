"""Report add-ons: FPR-vs-TPR curves, score histograms, failure tallies, shared-valid subsets, run joins."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .benchmark import BenchmarkManifest
from .metrics import ALL_OOD, DEFAULT_ECE_BINS, DEFAULT_TPR_TARGETS, EvalRecord, MetricsReport, build_report, fpr_at_tpr
from .parse import FailureCode

DEFAULT_TPR_GRID = tuple(round(0.05 * i, 2) for i in range(1, 21))


def fpr_curve(id_scores: Sequence[float], ood_scores: Sequence[float],
              tpr_grid: Sequence[float] = DEFAULT_TPR_GRID) -> list[tuple[float, float]]:
    """``fpr_at_tpr`` at each grid point, in grid order."""
    if len(tpr_grid) == 0:
        raise ValueError("empty TPR grid")
    return [(float(t), fpr_at_tpr(id_scores, ood_scores, t)) for t in tpr_grid]


@dataclass(frozen=True)
class Histogram:
    edges: tuple[float, ...]
    counts: tuple[int, ...]

    def rows(self) -> list[tuple[float, float, int]]:
        return [(self.edges[i], self.edges[i + 1], c) for i, c in enumerate(self.counts)]


def score_histogram(scores: Sequence[float], n_bins: int = 20, lo: float = 0.0, hi: float = 1.0) -> Histogram:
    """Equal-width bins over [lo, hi]; out-of-range scores are clipped into the end bins."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    x = np.clip(np.asarray(scores, dtype=np.float64), lo, hi)
    counts, edges = np.histogram(x, bins=n_bins, range=(lo, hi))
    return Histogram(tuple(edges.tolist()), tuple(int(c) for c in counts))


@dataclass(frozen=True)
class FailureTally:
    counts: dict[int, int]
    total_queries: int

    def rows(self) -> list[dict[str, Any]]:
        return [{"code": int(c), "name": FailureCode(c).name, "count": n} for c, n in sorted(self.counts.items())]


def failure_tally(records: Sequence[EvalRecord]) -> FailureTally:
    """Occurrences of each failure code; a record with several codes adds to each."""
    counts = {int(c): 0 for c in FailureCode}
    for r in records:
        for code in r.failures:
            counts[int(code)] += 1
    return FailureTally(counts, len(records))


@dataclass(frozen=True)
class SharedValid:
    sample_ids: frozenset[str]
    reports: dict[str, MetricsReport]

    @property
    def empty(self) -> bool:
        return not self.sample_ids


def shared_valid_set(runs: Mapping[str, Sequence[EvalRecord]], benchmark: BenchmarkManifest,
                     tpr_targets: Sequence[float] = DEFAULT_TPR_TARGETS,
                     n_bins: int = DEFAULT_ECE_BINS) -> SharedValid:
    """Ids valid in every run, and each run's report recomputed on exactly those ids."""
    if len(runs) < 2:
        raise ValueError("need at least two runs")
    sets = [{r.sample_id for r in recs if r.valid} for recs in runs.values()]
    shared = frozenset(set.intersection(*sets))
    reports = {
        name: build_report([r for r in recs if r.sample_id in shared], benchmark, tpr_targets, n_bins,
                           meta={"subset": "shared_valid", "n_shared": len(shared)})
        for name, recs in runs.items()
    }
    return SharedValid(shared, reports)


@dataclass(frozen=True)
class RunData:
    path: Path
    config: dict[str, Any]
    report: dict[str, Any]
    records: list[EvalRecord]


def load_run(run_dir: str | Path) -> RunData:
    run_dir = Path(run_dir)
    config = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    records = []
    with open(run_dir / "records.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(EvalRecord.from_dict(json.loads(line)))
    return RunData(run_dir, config, report, records)


def ablation_table(run_dirs: Sequence[str | Path]) -> list[dict[str, Any]]:
    """Failure counts per run next to the prompt switches that produced it."""
    rows = []
    for d in run_dirs:
        run = load_run(d)
        tally = failure_tally(run.records)
        row: dict[str, Any] = {
            "run": run.path.name,
            "guidelines": run.config.get("prompt_guidelines", True),
            "examples": run.config.get("prompt_examples", True),
        }
        row.update({FailureCode(c).name: n for c, n in tally.counts.items()})
        row["total_failures"] = sum(tally.counts.values())
        row["total_queries"] = tally.total_queries
        rows.append(row)
    return rows


def scaling_table(runs: Mapping[str | Path, float]) -> list[dict[str, Any]]:
    """Join run reports with user-supplied parameter counts, smallest model first."""
    rows = []
    for d, params in runs.items():
        run = load_run(d)
        pooled = run.report["ood"].get(ALL_OOD, {})
        row = {"run": run.path.name, "model": run.config.get("model"), "param_count": params,
               "auroc": pooled.get("auroc"), "id_accuracy": run.report["id"]["accuracy"],
               "valid_ratio": run.report["valid_ratio"]}
        for t, v in pooled.get("fpr_at_tpr", {}).items():
            row[f"fpr@{t}"] = v
        rows.append(row)
    return sorted(rows, key=lambda r: (r["param_count"], r["run"]))
