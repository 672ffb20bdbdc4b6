"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import analysis, cost
from .benchmark import ManifestError, builtin_benchmarks, load_manifest, stratified_subsample, write_manifest
from .metrics import MetricsReport
from .pipeline import ConfigError, CoverageError, RunConfig, RunMode, metrics_from_cache, run_eval
from .report import write_csv, write_json

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def _tpr_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values or not all(0.0 < v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError("TPR targets must lie in (0, 1]")
    return values


def _add_run_flags(p: argparse.ArgumentParser, mode: str | None, needs_endpoint: bool = True) -> None:
    p.add_argument("--benchmark", required=True, help="manifest file (JSON lines)")
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", default="mock")
    p.add_argument("--endpoint", required=needs_endpoint, default="",
                   help="chat-completions base URL, or mock:<script.json>")
    p.add_argument("--api-key-env", default="OPENAI_API_KEY")
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--score", choices=["max", "sumsub", "maxsub"], default="max")
    p.add_argument("--order", choices=["as-given", "random", "similar-first", "similar-last"], default="as-given")
    p.add_argument("--groups", help="class group table (JSON) for similar-first/last ordering")
    p.add_argument("--n-suggestions", type=int, default=None, help="suggestions per group (N)")
    p.add_argument("--tpr", type=_tpr_list, default=(0.95, 0.90))
    p.add_argument("--ece-bins", type=int, default=15)
    if mode is None:
        p.add_argument("--mode", choices=[m.value for m in RunMode], default="baseline")
    p.add_argument("--out", default="runs")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--no-guidelines", action="store_true", help="drop the guideline section (ablation)")
    p.add_argument("--no-examples", action="store_true", help="drop the response examples (ablation)")
    p.add_argument("--max-attempts", type=int, default=5)
    p.add_argument("--backoff", type=float, default=1.0, help="base backoff in seconds")
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("--max-tokens", type=int, default=4096)
    p.set_defaults(fixed_mode=mode)


def _config(args: argparse.Namespace) -> RunConfig:
    mode = args.fixed_mode or args.mode
    n = args.n_suggestions
    if n is None and mode in (RunMode.REGUIDE.value, RunMode.GPT_TEXT.value):
        n = 20
    return RunConfig(
        manifest=args.benchmark, out=args.out, mode=mode, fraction=args.fraction, seed=args.seed,
        model=args.model, endpoint=args.endpoint, api_key_env=args.api_key_env or None,
        concurrency=args.concurrency, tau=args.tau, score=args.score, order=args.order, groups=args.groups,
        n_per_group=n, tpr_targets=args.tpr, ece_bins=args.ece_bins,
        prompt_guidelines=not args.no_guidelines, prompt_examples=not args.no_examples,
        cache_dir=args.cache_dir, max_attempts=args.max_attempts, base_backoff=args.backoff,
        request_timeout=args.timeout, max_tokens=args.max_tokens,
    )


def _summary(report: MetricsReport) -> str:
    d = report.to_dict()
    lines = [f"valid {d['valid_count']}/{d['total_queries']}"
             + (f" ({100 * d['valid_ratio']:.2f}%)" if d["valid_ratio"] is not None else "")]
    for name, m in d["ood"].items():
        fprs = " ".join(f"FPR@{t}={'-' if v is None else f'{100 * v:.2f}'}" for t, v in m["fpr_at_tpr"].items())
        auroc = "-" if m["auroc"] is None else f"{100 * m['auroc']:.2f}"
        lines.append(f"{name:>14}  n={m['n_valid']:<6} AUROC={auroc} {fprs}")
    i = d["id"]
    if i["accuracy"] is not None:
        lines.append(f"{'ID':>14}  n={i['n_valid']:<6} acc={100 * i['accuracy']:.2f} "
                     f"ECE(x100)={i['ece_x100']:.2f} AURC(x1000)={i['aurc_x1000']:.2f}")
    return "\n".join(lines)


def cmd_run(args: argparse.Namespace) -> int:
    result = run_eval(_config(args))
    print(_summary(result.report))
    print(f"artifacts: {result.run_dir}")
    if result.failed:
        print(f"partial coverage: {len(result.failed)} samples failed (see run_log.jsonl)", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_from_cache(args: argparse.Namespace) -> int:
    cfg = _config(args)
    result = metrics_from_cache(args.cache_dir or Path(args.out) / "cache", args.benchmark, cfg.tau,
                                cfg.tpr_targets, config=cfg)
    print(_summary(result.report))
    if args.report:
        write_json(args.report, result.report.to_dict())
    if result.failed:
        print(f"missing from cache: {', '.join(o.sample.id for o in result.failed)}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_subsample(args: argparse.Namespace) -> int:
    manifest = stratified_subsample(load_manifest(args.benchmark), args.fraction, args.seed)
    write_manifest(manifest, args.out)
    for name, n in manifest.counts().items():
        print(f"{name}\t{n}")
    print(f"total\t{len(manifest.samples)}")
    return EXIT_OK


def cmd_benchmarks(args: argparse.Namespace) -> int:
    for b in builtin_benchmarks(args.name):
        print(json.dumps({"name": b.name, "id": b.id_dataset, "near_ood": list(b.near_ood_datasets),
                          "far_ood": list(b.far_ood_datasets), "n_classes": len(b.vocabulary)}))
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "shared-valid":
        runs = [analysis.load_run(d) for d in args.runs]
        cfg = RunConfig.from_dict(runs[0].config)
        manifest = stratified_subsample(load_manifest(cfg.manifest), cfg.fraction, cfg.seed)
        shared = analysis.shared_valid_set({r.path.name: r.records for r in runs}, manifest,
                                           cfg.tpr_targets, cfg.ece_bins)
        rows = []
        for name, rep in shared.reports.items():
            for row in rep.rows():
                rows.append({"run": name, **row})
        write_csv(out / "shared_valid.csv", rows)
        (out / "shared_valid_ids.txt").write_text("".join(f"{i}\n" for i in sorted(shared.sample_ids)))
        print(f"shared valid samples: {len(shared.sample_ids)}")
    elif args.kind == "ablation":
        write_csv(out / "ablation.csv", analysis.ablation_table(args.runs))
    else:
        pairs = {}
        for item in args.runs:
            path, _, params = item.rpartition("=")
            if not path:
                raise ConfigError(f"scaling runs are given as RUN_DIR=PARAM_COUNT, got {item!r}")
            pairs[path] = float(params)
        write_csv(out / "scaling.csv", analysis.scaling_table(pairs))
    print(f"written to {out}")
    return EXIT_OK


def cmd_cost(args: argparse.Namespace) -> int:
    if args.kind == "flops":
        if args.stage2_input or args.stage2_output:
            f = cost.estimate_reguide_flops(args.params, args.image_tokens, args.input_tokens, args.output_tokens,
                                            args.stage2_input, args.stage2_output)
        else:
            f = cost.estimate_flops(args.params, args.image_tokens, args.input_tokens, args.output_tokens)
        print(f"{f} FLOPs ({f / 1e13:.3f} x 1e13)")
    else:
        if args.price_in is not None and args.price_out is not None:
            p_in, p_out = args.price_in, args.price_out
        else:
            table = cost.load_price_table(args.prices)
            if args.model not in table:
                raise ConfigError(f"no price for {args.model!r}; known: {', '.join(sorted(table))}")
            p_in, p_out = table[args.model].input, table[args.model].output
        print(f"${cost.api_cost(args.input_tokens, args.output_tokens, p_in, p_out)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lvlm-ood", description="OoD-detection evaluation for vision-language models")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, mode, helptext in (
        ("run", None, "evaluate in any mode (--mode)"),
        ("evaluate", None, "baseline, reasoning or class-order evaluation"),
        ("reguide", RunMode.REGUIDE.value, "two-stage evaluation with image-based suggestions"),
        ("gpt-text", RunMode.GPT_TEXT.value, "evaluation with one text-based suggestion set"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_run_flags(p, mode)
        p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics-from-cache", help="re-score cached responses offline")
    _add_run_flags(p, None, needs_endpoint=False)
    p.add_argument("--report", help="write the report JSON here")
    p.set_defaults(func=cmd_from_cache)

    p = sub.add_parser("subsample", help="write a label-stratified subset of a manifest")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("benchmarks", help="list built-in benchmark compositions")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_benchmarks)

    p = sub.add_parser("analyze", help="cross-run analyses written as CSV")
    p.add_argument("kind", choices=["shared-valid", "ablation", "scaling"])
    p.add_argument("runs", nargs="+", help="run directories (scaling: RUN_DIR=PARAM_COUNT)")
    p.add_argument("--out", default="analysis")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("cost", help="FLOPs or API cost estimate")
    p.add_argument("kind", choices=["flops", "api"])
    p.add_argument("--params", type=int, default=0, help="model parameter count N")
    p.add_argument("--image-tokens", type=int, default=0)
    p.add_argument("--input-tokens", type=int, default=0)
    p.add_argument("--output-tokens", type=int, default=0)
    p.add_argument("--stage2-input", type=int, default=0)
    p.add_argument("--stage2-output", type=int, default=0)
    p.add_argument("--model", default="")
    p.add_argument("--prices", help="price table JSON (defaults to the bundled one)")
    p.add_argument("--price-in", default=None)
    p.add_argument("--price-out", default=None)
    p.set_defaults(func=cmd_cost)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ManifestError, CoverageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
