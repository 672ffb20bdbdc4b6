"""End-to-end evaluation runs: prompt, query, parse, score, aggregate, write artifacts."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from .backend import (Backend, BoundedBackend, CachedBackend, CacheOnlyBackend, HttpBackend, ImagePayload,
                      MockBackend, ModelEndpoint, QueryFailed, RetryPolicy, load_image)
from .benchmark import SAMPLER_ALGORITHM, BenchmarkManifest, ManifestError, Role, Sample, load_manifest, \
    stratified_subsample
from .metrics import DEFAULT_ECE_BINS, DEFAULT_TPR_TARGETS, EvalRecord, MetricsReport, build_report
from .parse import ParsedResponse, parse_response
from .prompt import TEMPLATE_VERSION, ClassGroupTable, OrderKind, OrderStrategy, PromptOptions, \
    build_oodd_prompt, order_classes
from .reguide import classify_with_suggestions, request_text_suggestions, run_reguide
from .report import write_run
from .score import DEFAULT_TAU, ScoreKind, normalize, ood_score
from .suggestions import SuggestionSet, SuggestionSource
from .vocab import ClassTag, ClassVocabulary, EffectiveVocab, normalize_name

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """The run cannot start: bad manifest, inconsistent options, unusable endpoint."""


class RunMode(str, enum.Enum):
    BASELINE = "baseline"
    REASONING = "reasoning"
    REGUIDE = "reguide"
    GPT_TEXT = "gpt-text"


# fields that change where or how fast a run happens but not what it computes
_NON_IDENTITY_FIELDS = {"out", "cache_dir", "concurrency", "api_key_env", "request_timeout"}


@dataclass(frozen=True)
class RunConfig:
    manifest: str
    out: str = "runs"
    mode: RunMode = RunMode.BASELINE
    fraction: float = 1.0
    seed: int = 0
    model: str = "mock"
    endpoint: str = ""
    api_key_env: str | None = "OPENAI_API_KEY"
    concurrency: int = 4
    tau: float = DEFAULT_TAU
    score: ScoreKind = ScoreKind.MAX
    order: OrderKind = OrderKind.AS_GIVEN
    groups: str | None = None
    n_per_group: int | None = None
    tpr_targets: tuple[float, ...] = DEFAULT_TPR_TARGETS
    ece_bins: int = DEFAULT_ECE_BINS
    prompt_guidelines: bool = True
    prompt_examples: bool = True
    cache_dir: str | None = None
    max_attempts: int = 5
    base_backoff: float = 1.0
    request_timeout: float = 120.0
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", RunMode(self.mode))
        object.__setattr__(self, "score", ScoreKind(self.score))
        object.__setattr__(self, "order", OrderKind(self.order))
        object.__setattr__(self, "tpr_targets", tuple(float(t) for t in self.tpr_targets))
        if not all(0.0 < t <= 1.0 for t in self.tpr_targets) or not self.tpr_targets:
            raise ConfigError(f"TPR targets must lie in (0, 1]: {self.tpr_targets}")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"fraction must lie in (0, 1]: {self.fraction}")
        if self.mode in (RunMode.REGUIDE, RunMode.GPT_TEXT) and (self.n_per_group is None or self.n_per_group < 1):
            raise ConfigError(f"mode {self.mode.value} needs a positive n_per_group")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k in ("mode", "score", "order"):
            d[k] = getattr(self, k).value
        d["tpr_targets"] = list(self.tpr_targets)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @property
    def run_id(self) -> str:
        identity = {k: v for k, v in self.to_dict().items() if k not in _NON_IDENTITY_FIELDS}
        return hashlib.sha256(json.dumps(identity, sort_keys=True).encode("utf-8")).hexdigest()[:16]

    @property
    def run_dir(self) -> Path:
        return Path(self.out) / self.run_id

    @property
    def resolved_cache_dir(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.out) / "cache"

    @property
    def reasoning(self) -> bool:
        return self.mode is RunMode.REASONING

    @property
    def prompt_options(self) -> PromptOptions:
        return PromptOptions(guidelines=self.prompt_guidelines, examples=self.prompt_examples)


@dataclass
class SampleOutcome:
    sample: Sample
    record: EvalRecord | None = None
    error: str | None = None
    status: int | None = None
    cached: bool = False
    suggestions: dict[str, Any] | None = None


@dataclass
class RunResult:
    report: MetricsReport
    records: list[EvalRecord]
    failed: list[SampleOutcome] = field(default_factory=list)
    run_dir: Path | None = None
    text_suggestions: SuggestionSet | None = None

    @property
    def complete(self) -> bool:
        return not self.failed

    @property
    def exit_code(self) -> int:
        return 0 if self.complete else 2


def to_record(sample: Sample, parsed: ParsedResponse, eff: EffectiveVocab, vocab: ClassVocabulary,
              tau: float, score: ScoreKind, fallback: bool = False) -> EvalRecord:
    """Score a parsed response; invalid responses keep their failure codes and no score."""
    codes = tuple(sorted(int(c) for c in parsed.codes))
    if not parsed.valid:
        return EvalRecord(sample.id, sample.dataset, sample.role, False, predicted_class=parsed.prediction,
                          label=sample.label, failures=codes, fallback=fallback, rationale=parsed.rationale)
    probs = normalize(parsed.confidences, eff, tau)
    pred = parsed.prediction
    tag = eff.tag_of(pred) if pred is not None else None
    top = probs.probabilities.get(pred) if pred is not None else None
    correct = None
    if sample.role is Role.ID:
        correct = (tag is ClassTag.ID and sample.label is not None
                   and normalize_name(pred or "") == normalize_name(sample.label))
    return EvalRecord(sample.id, sample.dataset, sample.role, True, ood_score(probs, score), pred,
                      tag.value if tag else None, sample.label, correct, top, codes, fallback, parsed.rationale)


@dataclass
class _Context:
    config: RunConfig
    manifest: BenchmarkManifest
    backend: Backend
    groups: ClassGroupTable | None
    text_suggestions: SuggestionSet | None = None


def evaluate_sample(sample: Sample, ctx: _Context) -> SampleOutcome:
    """Run one sample through the configured mode. Query failures are captured, not raised."""
    cfg, vocab = ctx.config, ctx.manifest.vocabulary
    try:
        image: ImagePayload = load_image(sample.image_ref)
        label = sample.label if sample.role is Role.ID else None
        ordered = order_classes(vocab, OrderStrategy(cfg.order, cfg.seed), ctx.groups, label, key=sample.id)
        audit = None
        fallback = False
        if cfg.mode is RunMode.REGUIDE:
            res = run_reguide(sample, vocab, ctx.backend, cfg.n_per_group or 0, cfg.seed, ordered,
                              cfg.reasoning, cfg.prompt_options, image)
            parsed, eff, fallback = res.parsed, res.effective_vocab, res.fallback
            audit = {"sample_id": sample.id, "raw": res.raw_suggestions.to_dict(),
                     "processed": res.suggestions.to_dict(), "fallback": fallback}
        elif cfg.mode is RunMode.GPT_TEXT:
            assert ctx.text_suggestions is not None
            _, _, parsed, eff, fallback = classify_with_suggestions(
                sample, vocab, ctx.backend, ctx.text_suggestions, image, ordered, False, cfg.prompt_options)
        else:
            prompt = build_oodd_prompt(vocab, ordered, cfg.reasoning, cfg.prompt_options)
            result = ctx.backend.query(prompt, image, sample_id=sample.id, tag="oodd")
            eff = vocab.effective(ordered)
            parsed = parse_response(result.text, eff)
    except QueryFailed as exc:
        return SampleOutcome(sample, error=str(exc), status=exc.status)
    record = to_record(sample, parsed, eff, vocab, cfg.tau, cfg.score, fallback)
    return SampleOutcome(sample, record, suggestions=audit)


def make_backend(config: RunConfig) -> Backend:
    """Inner backend for the endpoint string: ``mock:<script.json>`` or an http(s) base URL."""
    ep = config.endpoint
    if ep.startswith("mock:"):
        path = ep[len("mock:"):]
        try:
            mock = MockBackend.from_file(path, model_id=config.model)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load mock script {path!r}: {exc}") from exc
        return BoundedBackend(mock, config.concurrency)
    if ep.startswith(("http://", "https://")):
        endpoint = ModelEndpoint(ep, config.model, config.api_key_env, config.concurrency,
                                 RetryPolicy(config.max_attempts, config.base_backoff),
                                 config.request_timeout, max_tokens=config.max_tokens)
        return HttpBackend(endpoint)
    raise ConfigError(f"endpoint must be an http(s) URL or mock:<script.json>, got {ep!r}")


def prepare_manifest(config: RunConfig) -> BenchmarkManifest:
    try:
        manifest = load_manifest(config.manifest)
    except (OSError, ManifestError, ValueError) as exc:
        raise ConfigError(f"cannot load manifest {config.manifest!r}: {exc}") from exc
    return stratified_subsample(manifest, config.fraction, config.seed)


def _groups(config: RunConfig, manifest: BenchmarkManifest) -> ClassGroupTable | None:
    if config.order not in (OrderKind.SIMILAR_FIRST, OrderKind.SIMILAR_LAST):
        return None
    if config.groups:
        table = ClassGroupTable.from_file(config.groups)
    elif manifest.name.casefold() == "imagenet200":
        table = ClassGroupTable.imagenet200()
    else:
        raise ConfigError(f"{config.order.value} ordering needs --groups for benchmark {manifest.name!r}")
    try:
        table.check_covers(manifest.vocabulary)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return table


def execute(config: RunConfig, backend: Backend, manifest: BenchmarkManifest | None = None,
            write: bool = True) -> RunResult:
    """Evaluate every manifest sample against ``backend`` and aggregate in manifest order."""
    manifest = manifest if manifest is not None else prepare_manifest(config)
    ctx = _Context(config, manifest, backend, _groups(config, manifest))
    log_rows: list[dict[str, Any]] = []

    if config.mode is RunMode.GPT_TEXT:
        try:
            _, ctx.text_suggestions, _ = request_text_suggestions(manifest.vocabulary, backend,
                                                                  config.n_per_group or 0, config.seed)
        except QueryFailed as exc:
            log_rows.append({"event": "text_suggestions_failed", "error": str(exc), "status": exc.status})
            ctx.text_suggestions = SuggestionSet(source=SuggestionSource.TEXT, no_suggestion=True)

    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        outcomes = list(pool.map(lambda s: evaluate_sample(s, ctx), manifest.samples))

    records = [o.record for o in outcomes if o.record is not None]
    failed = [o for o in outcomes if o.record is None]
    for o in outcomes:
        if o.record is None:
            log_rows.append({"event": "query_failed", "sample_id": o.sample.id, "status": o.status, "error": o.error})
        elif o.record.fallback:
            log_rows.append({"event": "baseline_fallback", "sample_id": o.sample.id})

    meta = {
        "mode": config.mode.value, "model": config.model, "score": config.score.value, "tau": config.tau,
        "order": config.order.value, "seed": config.seed, "fraction": config.fraction,
        "sampler": SAMPLER_ALGORITHM, "template_version": TEMPLATE_VERSION,
        "n_per_group": config.n_per_group, "run_id": config.run_id,
        "coverage": {"expected": len(manifest.samples), "completed": len(records), "query_failed": len(failed),
                     "failed_ids": [o.sample.id for o in failed]},
    }
    if ctx.text_suggestions is not None:
        meta["text_suggestions"] = ctx.text_suggestions.to_dict()
    report = build_report(records, manifest, config.tpr_targets, config.ece_bins, meta)

    run_dir = None
    if write:
        run_dir = config.run_dir
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        log_rows.insert(0, {"event": "run", "run_id": config.run_id, "time": stamp,
                            "samples": len(manifest.samples), "failed": len(failed)})
        suggestions = [o.suggestions for o in outcomes if o.suggestions is not None]
        score_range = (0.0, 1.0) if config.score is ScoreKind.MAX else (-1.0, 1.0)
        write_run(run_dir, report, records, manifest, config.to_dict(), suggestions, log_rows, score_range)
    return RunResult(report, records, failed, run_dir, ctx.text_suggestions)


def run_eval(config: RunConfig, backend: Backend | None = None, write: bool = True) -> RunResult:
    """Full run with the response cache in front of the model; warm entries cost no network calls.

    ``backend`` overrides the endpoint-derived one (tests pass an instrumented mock).
    """
    inner = backend if backend is not None else make_backend(config)
    cached = CachedBackend(inner, config.resolved_cache_dir)
    return execute(config, cached, write=write)


class CoverageError(RuntimeError):
    pass


def metrics_from_cache(cache_dir: str | Path, manifest: str | Path, tau: float = DEFAULT_TAU,
                       tpr_targets: Sequence[float] = DEFAULT_TPR_TARGETS, *, config: RunConfig | None = None,
                       **overrides: Any) -> RunResult:
    """Re-parse and re-score cached responses without any network I/O.

    Prompts are rebuilt from ``config`` (or ``overrides``), so mode, order, seed and prompt switches
    must match the original run. Missing entries are listed in the report's coverage block; an
    entirely cold cache raises ``CoverageError``.
    """
    base = config or RunConfig(manifest=str(manifest))
    cfg = replace(base, manifest=str(manifest), tau=tau, tpr_targets=tuple(tpr_targets),
                  cache_dir=str(cache_dir), **overrides)
    result = execute(cfg, CacheOnlyBackend(cache_dir, cfg.model), write=False)
    if not result.records and result.failed:
        raise CoverageError(f"no cached responses for any of {len(result.failed)} samples")
    return result
