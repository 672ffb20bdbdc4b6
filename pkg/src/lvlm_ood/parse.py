"""Response parsing: prediction line, per-class confidence block, failure classification and repair.

Canonical response grammar::

    Prediction: <class name>
    Confidence: {<class name>: <value>, <class name>: <value>, ...}
    Reasoning: <free text>            (optional)

Values are on a 0-100 scale. The parser accepts surrounding prose, quoted or bolded names,
a trailing ``%`` on values, ellipsis placeholders inside the block, and a brace-less block
of ``name: value`` lines directly under ``Confidence:``.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .suggestions import SuggestionSet, SuggestionSource
from .vocab import ClassTag, EffectiveVocab, normalize_name

DEFAULT_REFUSAL_PATTERNS: tuple[str, ...] = (
    r"\bI['’]?\s?a?m sorry\b",
    r"\bI apologi[sz]e\b",
    r"\bI (?:can['’]?t|cannot|can not|am unable to|['’]m unable to|am not able to)\s+"
    r"(?:help|assist|identify|classify|analy[sz]e|determine|see|recognize|provide|comply)",
    r"\b(?:do not|don['’]t) feel comfortable\b",
    r"\b(?:do not|don['’]t) (?:actually )?see (?:an|any) image\b",
)

_ELLIPSIS = {"...", "…", "⋯", "etc", "etc."}
_LABEL = r"[*_#\s]*{name}[*_\s]*[:：][*_]*"
_PREDICTION = re.compile(_LABEL.format(name="prediction"), re.IGNORECASE)
_CONFIDENCE = re.compile(_LABEL.format(name="confidence(?: scores?)?"), re.IGNORECASE)
_RATIONALE = re.compile(_LABEL.format(name="(?:reasoning|rationale|explanation)"), re.IGNORECASE)
_PRED_STOP = re.compile(r"confidence|\{|\n", re.IGNORECASE)
_NUMBER = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?$")
_QUOTES = "'\"`‘’“”*_ "


class FailureCode(enum.IntEnum):
    PRED_MAX_MISMATCH = 1
    MISSING_CONFIDENCES = 2
    MALFORMED = 3
    REFUSAL = 4
    UNLISTED_CLASS = 5
    DUPLICATE_CLASS = 6


@dataclass(frozen=True, order=True)
class FailureCase:
    code: FailureCode
    detail: str = field(default="", compare=False)


@dataclass(frozen=True)
class ParsedResponse:
    prediction: str | None
    confidences: dict[str, float]
    rationale: str | None = None
    failures: tuple[FailureCase, ...] = ()
    valid: bool = False
    repaired: bool = False
    unknown_entries: tuple[str, ...] = ()

    @property
    def codes(self) -> frozenset[FailureCode]:
        return frozenset(f.code for f in self.failures)


@dataclass
class RawParse:
    """What the text yields before any vocabulary checks."""

    text: str
    prediction: str | None = None
    entries: list[tuple[str, str]] = field(default_factory=list)
    has_block: bool = False
    rationale: str | None = None


def _clean_name(s: str) -> str:
    s = s.strip().strip(_QUOTES).strip()
    return s.rstrip(".").strip(_QUOTES).strip()


def _find_block(text: str, start: int) -> tuple[str, bool] | None:
    """Return (block body, braced) for the confidence block at or after ``start``."""
    i = start
    while i < len(text) and text[i] in " \t\r\n*_":
        i += 1
    if i < len(text) and text[i] == "{":
        depth = 0
        for j in range(i, len(text)):
            if text[j] == "{":
                depth += 1
            elif text[j] == "}":
                depth -= 1
                if depth == 0:
                    return text[i + 1:j], True
        return text[i + 1:], True
    lines = []
    for line in text[i:].splitlines():
        if not line.strip():
            if lines:
                break
            continue
        if ":" not in line or _RATIONALE.match(line) or _PREDICTION.match(line):
            break
        lines.append(line.strip(" -*\t"))
    return ("\n".join(lines), False) if lines else None


def _split_entries(body: str) -> list[tuple[str, str]]:
    entries = []
    for chunk in re.split(r"[,\n;]", body):
        chunk = chunk.strip()
        if not chunk or chunk.strip(_QUOTES) in _ELLIPSIS:
            continue
        name, sep, value = chunk.rpartition(":")
        if not sep:
            entries.append((chunk, ""))
            continue
        entries.append((_clean_name(name), value.strip().strip(_QUOTES)))
    return entries


def extract(text: str) -> RawParse:
    raw = RawParse(text=text)
    m = _PREDICTION.search(text)
    if m:
        rest = text[m.end():]
        stop = _PRED_STOP.search(rest)
        value = _clean_name(rest[:stop.start()] if stop else rest)
        raw.prediction = value or None

    block = None
    m = _CONFIDENCE.search(text)
    if m:
        block = _find_block(text, m.end())
    if block is None:
        # fall back to the last braced block that holds name: value pairs
        for body in reversed(re.findall(r"\{([^{}]*)\}", text)):
            if ":" in body:
                block = (body, True)
                break
    if block is not None:
        entries = _split_entries(block[0])
        if entries:
            raw.has_block = True
            raw.entries = entries

    m = _RATIONALE.search(text)
    if m:
        tail = text[m.end():]
        nxt = _PREDICTION.search(tail) or _CONFIDENCE.search(tail)
        raw.rationale = (tail[:nxt.start()] if nxt else tail).strip() or None
    return raw


def is_refusal(text: str, patterns: Sequence[str] = DEFAULT_REFUSAL_PATTERNS) -> bool:
    return any(re.search(p, text, re.IGNORECASE) for p in patterns)


def _to_value(s: str) -> float | None:
    s = s.rstrip("%").strip()
    if not _NUMBER.match(s):
        return None
    v = float(s)
    return v if math.isfinite(v) else None


def classify_failures(raw: RawParse, vocab: EffectiveVocab,
                      refusal_patterns: Sequence[str] = DEFAULT_REFUSAL_PATTERNS
                      ) -> tuple[set[FailureCase], dict[str, float], list[str]]:
    """Failure set plus the (unrepaired) canonical confidence map and unknown entry names."""
    failures: set[FailureCase] = set()
    confidences: dict[str, float] = {}
    unknown: list[str] = []

    if raw.prediction is None or not raw.has_block:
        if is_refusal(raw.text, refusal_patterns):
            return {FailureCase(FailureCode.REFUSAL, raw.text.strip()[:120])}, {}, []
        missing = "prediction" if raw.prediction is None else "confidence block"
        failures.add(FailureCase(FailureCode.MALFORMED, f"no {missing}"))

    dupes: list[str] = []
    for name, value in raw.entries:
        canonical = vocab.lookup.get(normalize_name(name))
        if canonical is None:
            unknown.append(name)
            continue
        v = _to_value(value)
        if v is None:
            failures.add(FailureCase(FailureCode.MALFORMED, f"non-numeric confidence {value!r} for {name!r}"))
            continue
        if canonical in confidences:
            dupes.append(canonical)
            continue
        if not 0.0 <= v <= 100.0:
            failures.add(FailureCase(FailureCode.MALFORMED, f"confidence {v} for {name!r} outside [0, 100]"))
            v = min(100.0, max(0.0, v))
        confidences[canonical] = v
    if dupes:
        failures.add(FailureCase(FailureCode.DUPLICATE_CLASS, ", ".join(dict.fromkeys(dupes))))

    if raw.has_block:
        missing_classes = [c for c in vocab.classes if c not in confidences]
        if missing_classes:
            failures.add(FailureCase(FailureCode.MISSING_CONFIDENCES, f"{len(missing_classes)} classes filled with 0.0"))

    if raw.prediction is not None:
        pred = vocab.lookup.get(normalize_name(raw.prediction))
        if pred is None:
            failures.add(FailureCase(FailureCode.UNLISTED_CLASS, raw.prediction))
        elif confidences:
            top = max(confidences.values())
            if confidences.get(pred, 0.0) < top:
                argmax = next(c for c, v in confidences.items() if v == top)
                failures.add(FailureCase(FailureCode.PRED_MAX_MISMATCH, f"{pred!r} vs argmax {argmax!r} ({top})"))
    return failures, confidences, unknown


def parse_response(text: str, effective_vocab: EffectiveVocab | Sequence[str],
                   refusal_patterns: Sequence[str] = DEFAULT_REFUSAL_PATTERNS) -> ParsedResponse:
    """Parse one classification response against the classes offered in its prompt."""
    if not text or not text.strip():
        raise ValueError("empty response text")
    vocab = effective_vocab if isinstance(effective_vocab, EffectiveVocab) else EffectiveVocab.from_names(effective_vocab)
    raw = extract(text)
    failures, confidences, unknown = classify_failures(raw, vocab, refusal_patterns)

    repaired = FailureCode.MISSING_CONFIDENCES in {f.code for f in failures}
    if raw.has_block:
        confidences = {c: confidences.get(c, 0.0) for c in vocab.classes}
    prediction = raw.prediction
    if prediction is not None:
        prediction = vocab.lookup.get(normalize_name(prediction), prediction)
    valid = all(f.code is FailureCode.MISSING_CONFIDENCES for f in failures)
    return ParsedResponse(prediction=prediction, confidences=confidences, rationale=raw.rationale,
                          failures=tuple(sorted(failures)), valid=valid, repaired=repaired,
                          unknown_entries=tuple(unknown))


def _fmt_value(v: float) -> str:
    return f"{v:.2f}" if round(v, 2) == v else repr(float(v))


def format_response(prediction: str, confidences: Mapping[str, float], rationale: str | None = None) -> str:
    """Render in the canonical response grammar."""
    body = ", ".join(f"{c}: {_fmt_value(v)}" for c, v in confidences.items())
    out = f"Prediction: {prediction}\nConfidence: {{{body}}}\n"
    if rationale:
        out += f"Reasoning: {rationale}\n"
    return out


# ---------------------------------------------------------------- suggestion lists

_GROUP = re.compile(r"^[\s*_#>-]*(near|far)[\s_-]*(?:ood)?[^:\n]{0,40}[:：]", re.IGNORECASE | re.MULTILINE)
_BULLET = re.compile(r"^\s*(?:[-*•]+|\d+[.)])\s*")


def _split_names(body: str) -> list[str]:
    names = []
    for line in body.splitlines():
        line = _BULLET.sub("", line)
        for part in line.split(","):
            name = _clean_name(_BULLET.sub("", part))
            if name and name not in _ELLIPSIS:
                names.append(name)
    return names


def parse_suggestions(text: str, source: SuggestionSource = SuggestionSource.IMAGE,
                      refusal_patterns: Sequence[str] = DEFAULT_REFUSAL_PATTERNS) -> SuggestionSet:
    """Extract the near and far lists in the order given. Nothing usable flags ``no_suggestion``."""
    matches = list(_GROUP.finditer(text or ""))
    groups: dict[str, list[str]] = {"near": [], "far": []}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        body = text[m.end():end]
        if i + 1 == len(matches):
            # stop the last list at the first blank line to drop trailing prose
            body = re.split(r"\n\s*\n", body.strip("\n"), maxsplit=1)[0]
        groups[m.group(1).lower()].extend(_split_names(body))
    if not groups["near"] and not groups["far"]:
        return SuggestionSet(source=source, no_suggestion=True)
    return SuggestionSet(tuple(groups["near"]), tuple(groups["far"]), source, False)


def predicted_tag(parsed: ParsedResponse, vocab: EffectiveVocab) -> ClassTag | None:
    return None if parsed.prediction is None else vocab.tag_of(parsed.prediction)


def failure_codes(failures: Iterable[FailureCase]) -> list[int]:
    return sorted(int(f.code) for f in failures)
