"""Writing run artifacts: structured report, delimited tables, and columnar plot data."""

from __future__ import annotations

import csv
import hashlib
import json
import re
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .analysis import DEFAULT_TPR_GRID, failure_tally, fpr_curve, score_histogram
from .benchmark import BenchmarkManifest, Role
from .metrics import ALL_OOD, EvalRecord, MetricsReport, roc_points

RECORD_FIELDS = ["sample_id", "dataset", "role", "valid", "ood_score", "predicted_class", "predicted_tag",
                 "label", "correct", "top_confidence", "failures", "fallback"]


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def write_jsonl(path: str | Path, rows: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def write_csv(path: str | Path, rows: Sequence[Mapping[str, Any]], fieldnames: Sequence[str] | None = None) -> None:
    if fieldnames is None:
        fieldnames = list(dict.fromkeys(k for row in rows for k in row))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fieldnames), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower() or "dataset"


def _scores_by_dataset(records: Sequence[EvalRecord], benchmark: BenchmarkManifest
                       ) -> tuple[list[float], dict[str, list[float]]]:
    valid = [r for r in records if r.valid]
    id_scores = [float(r.ood_score) for r in valid if r.role is Role.ID]  # type: ignore[arg-type]
    ood = {name: [float(r.ood_score) for r in valid if r.dataset == name and r.role.is_ood]  # type: ignore[arg-type]
           for name in benchmark.ood_datasets}
    ood[ALL_OOD] = [s for name in benchmark.ood_datasets for s in ood[name]]
    return id_scores, ood


def write_plot_data(run_dir: Path, records: Sequence[EvalRecord], benchmark: BenchmarkManifest,
                    score_range: tuple[float, float] = (0.0, 1.0), n_hist_bins: int = 20,
                    tpr_grid: Sequence[float] = DEFAULT_TPR_GRID) -> list[str]:
    """ROC points per dataset, an FPR-vs-TPR grid, and score histograms, all as CSV."""
    written = []
    id_scores, ood = _scores_by_dataset(records, benchmark)
    for name, scores in ood.items():
        if id_scores and scores:
            fname = f"roc_{_slug(name)}.csv"
            write_csv(run_dir / fname, [{"threshold": t, "fpr": f, "tpr": p}
                                        for t, f, p in roc_points(id_scores, scores)])
            written.append(fname)

    curves = {name: dict(fpr_curve(id_scores, s, tpr_grid)) for name, s in ood.items() if id_scores and s}
    if curves:
        rows = [{"tpr": t, **{name: c[float(t)] for name, c in curves.items()}} for t in tpr_grid]
        write_csv(run_dir / "fpr_curve.csv", rows, ["tpr", *curves])
        written.append("fpr_curve.csv")

    lo, hi = score_range
    hists = {"ID": score_histogram(id_scores, n_hist_bins, lo, hi)}
    hists.update({name: score_histogram(s, n_hist_bins, lo, hi) for name, s in ood.items()})
    first = hists["ID"]
    rows = []
    for i in range(n_hist_bins):
        row: dict[str, Any] = {"bin_lo": first.edges[i], "bin_hi": first.edges[i + 1]}
        row.update({name: h.counts[i] for name, h in hists.items()})
        rows.append(row)
    write_csv(run_dir / "histogram.csv", rows, ["bin_lo", "bin_hi", *hists])
    written.append("histogram.csv")
    return written


def write_run(run_dir: str | Path, report: MetricsReport, records: Sequence[EvalRecord],
              benchmark: BenchmarkManifest, config: Mapping[str, Any],
              suggestions: Sequence[Mapping[str, Any]] = (), log: Sequence[Mapping[str, Any]] = (),
              score_range: tuple[float, float] = (0.0, 1.0)) -> list[str]:
    """Write every artifact of a run plus ``outputs.json`` listing them with content digests."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / "config.json", dict(config))
    write_json(run_dir / "report.json", report.to_dict())
    write_csv(run_dir / "report.csv", report.rows())
    rows = [r.to_dict() for r in records]
    write_csv(run_dir / "records.csv",
              [{**row, "failures": " ".join(map(str, row["failures"]))} for row in rows], RECORD_FIELDS)
    write_jsonl(run_dir / "records.jsonl", rows)
    write_csv(run_dir / "failure_tally.csv", failure_tally(records).rows(), ["code", "name", "count"])
    write_jsonl(run_dir / "run_log.jsonl", log)
    files = ["config.json", "report.json", "report.csv", "records.csv", "records.jsonl",
             "failure_tally.csv", "run_log.jsonl"]
    if suggestions:
        write_jsonl(run_dir / "suggestions.jsonl", suggestions)
        files.append("suggestions.jsonl")
    files += write_plot_data(run_dir, records, benchmark, score_range)
    digests = {f: hashlib.sha256((run_dir / f).read_bytes()).hexdigest() for f in sorted(files)}
    write_json(run_dir / "outputs.json", {"files": digests})
    return sorted(files) + ["outputs.json"]
