"""Two-stage suggestion-guided classification: suggest auxiliary OoD classes, then classify with them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

from .backend import Backend, ImagePayload, load_image
from .benchmark import Sample, seeded_rng
from .metrics import EvalRecord
from .parse import ParsedResponse, parse_response, parse_suggestions
from .prompt import PromptOptions, build_gpt_text_prompt, build_oodd_prompt, build_stage1_prompt, build_stage2_prompt
from .suggestions import SuggestionSet, SuggestionSource
from .vocab import ClassTag, ClassVocabulary, EffectiveVocab, normalize_name

__all__ = [
    "SuggestionSet", "SuggestionSource", "ReGuideResult", "postprocess_suggestions", "run_reguide",
    "classify_with_suggestions", "request_text_suggestions", "non_id_prediction_ratio",
]


def _cap(items: list[str], k: int, rng) -> list[str]:
    if len(items) <= k:
        return items
    keep = sorted(rng.sample(range(len(items)), k))
    return [items[i] for i in keep]


def postprocess_suggestions(raw: SuggestionSet, vocab: ClassVocabulary, n_per_group: int,
                            seed: int, key: str = "") -> SuggestionSet:
    """Turn a raw suggestion set into a usable auxiliary class set.

    Drops ID names and the rejection name (compared after name normalization), drops later
    duplicates across both groups, and when more than ``2 * n_per_group`` remain, samples down
    with the seed: each group is trimmed toward ``n_per_group`` first, the smaller group's
    shortfall going to the larger one. Survivors keep their original order. Short sets are
    kept as they are, and a no-suggestion set passes through untouched.
    """
    if n_per_group < 1:
        raise ValueError("n_per_group must be >= 1")
    if raw.no_suggestion:
        return raw
    banned = set(vocab.lookup) | {normalize_name(vocab.rejection_class)}
    seen: set[str] = set()
    groups: list[list[str]] = [[], []]
    for gi, names in enumerate((raw.near, raw.far)):
        for name in names:
            name = name.strip()
            k = normalize_name(name)
            if not k or k in banned or k in seen:
                continue
            seen.add(k)
            groups[gi].append(name)
    near, far = groups
    limit = 2 * n_per_group
    if len(near) + len(far) > limit:
        rng = seeded_rng(seed, "suggestions", key)
        if len(near) > n_per_group and len(far) > n_per_group:
            near_k = far_k = n_per_group
        elif len(near) > n_per_group:
            near_k, far_k = limit - len(far), len(far)
        else:
            near_k, far_k = len(near), limit - len(near)
        near = _cap(near, near_k, rng)
        far = _cap(far, far_k, rng)
    return SuggestionSet(tuple(near), tuple(far), raw.source, False)


@dataclass(frozen=True)
class ReGuideResult:
    raw_suggestions: SuggestionSet
    suggestions: SuggestionSet
    parsed: ParsedResponse
    effective_vocab: EffectiveVocab
    stage1_response: str
    stage2_prompt: str
    stage2_response: str
    fallback: bool

    def __iter__(self) -> Iterator[object]:
        # unpacks as (suggestions, parsed)
        return iter((self.suggestions, self.parsed))


def classify_with_suggestions(sample: Sample, vocab: ClassVocabulary, backend: Backend,
                              suggestions: SuggestionSet, image: ImagePayload | None,
                              ordered_classes: Sequence[str] | None = None, reasoning: bool = False,
                              options: PromptOptions = PromptOptions(), tag: str = "stage2"
                              ) -> tuple[str, str, ParsedResponse, EffectiveVocab, bool]:
    """Stage 2. Returns (prompt, response text, parsed, effective vocabulary, fell back to baseline)."""
    ordered = tuple(vocab.id_classes if ordered_classes is None else ordered_classes)
    fallback = suggestions.no_suggestion
    if fallback:
        prompt = build_oodd_prompt(vocab, ordered, reasoning, options)
        eff = vocab.effective(ordered)
    else:
        prompt = build_stage2_prompt(vocab, suggestions, ordered, reasoning, options)
        eff = vocab.effective(ordered, suggestions.near, suggestions.far)
    result = backend.query(prompt, image, sample_id=sample.id, tag=tag)
    return prompt, result.text, parse_response(result.text, eff), eff, fallback


def run_reguide(sample: Sample, vocab: ClassVocabulary, backend: Backend, n_per_group: int, seed: int,
                ordered_classes: Sequence[str] | None = None, reasoning: bool = False,
                options: PromptOptions = PromptOptions(), image: ImagePayload | None = None) -> ReGuideResult:
    """Both stages for one sample. Raises ``QueryFailed`` if either query gives up."""
    if image is None:
        image = load_image(sample.image_ref)
    stage1 = backend.query(build_stage1_prompt(n_per_group, vocab), image, sample_id=sample.id, tag="stage1")
    raw = parse_suggestions(stage1.text, SuggestionSource.IMAGE)
    suggestions = postprocess_suggestions(raw, vocab, n_per_group, seed, key=sample.id)
    prompt, text, parsed, eff, fallback = classify_with_suggestions(
        sample, vocab, backend, suggestions, image, ordered_classes, reasoning, options)
    return ReGuideResult(raw, suggestions, parsed, eff, stage1.text, prompt, text, fallback)


def request_text_suggestions(vocab: ClassVocabulary, backend: Backend, n_per_group: int, seed: int
                             ) -> tuple[SuggestionSet, SuggestionSet, str]:
    """One image-free suggestion request from the ID names; returns (raw, post-processed, response)."""
    result = backend.query(build_gpt_text_prompt(vocab, n_per_group), None, sample_id="__text__", tag="gpt_text")
    raw = parse_suggestions(result.text, SuggestionSource.TEXT)
    return raw, postprocess_suggestions(raw, vocab, n_per_group, seed, key="__text__"), result.text


def non_id_prediction_ratio(records: Sequence[EvalRecord]) -> float:
    """Share of valid OoD records whose prediction is an auxiliary class or the rejection class."""
    pool = [r for r in records if r.valid and r.role.is_ood]
    if not pool:
        raise ValueError("no valid OoD records")
    non_id = sum(r.predicted_tag in (ClassTag.AUX.value, ClassTag.REJECT.value) for r in pool)
    return non_id / len(pool)

