"""Prompt construction: classification-with-confidence prompts, suggestion prompts, class ordering."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .benchmark import seeded_rng
from .suggestions import SuggestionSet
from .vocab import ClassVocabulary, normalize_name

TEMPLATE_VERSION = "1"

_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")


class TemplateError(KeyError):
    pass


@lru_cache(maxsize=64)
def load_template(name: str, template_dir: str | Path | None = None) -> str:
    """Read ``{name}.txt`` from ``template_dir`` or the bundled set."""
    if template_dir is not None:
        return Path(template_dir, f"{name}.txt").read_text(encoding="utf-8")
    return resources.files("lvlm_ood").joinpath(f"templates/{name}.txt").read_text(encoding="utf-8")


def render(template: str, values: Mapping[str, object]) -> str:
    """Substitute ``{{name}}`` placeholders; an unknown placeholder is an error."""
    def sub(m: re.Match[str]) -> str:
        key = m.group(1)
        if key not in values:
            raise TemplateError(f"no value for placeholder {key!r}")
        return str(values[key])
    return _PLACEHOLDER.sub(sub, template)


class Scenario(str, enum.Enum):
    ID = "id"
    OOD = "ood"


@dataclass(frozen=True)
class PromptOptions:
    """Switches for the guideline/example ablation."""

    guidelines: bool = True
    examples: bool = True
    template_dir: str | None = None


@dataclass(frozen=True)
class PromptSpec:
    task_description: str
    rejection_explanation: str
    guidelines: tuple[str, ...]
    examples: tuple[tuple[Scenario, str], ...]
    class_list: tuple[str, ...]
    reasoning_requested: bool = False
    response_format: str = ""
    reasoning_instruction: str = ""

    def render(self) -> str:
        parts = [self.task_description, self.rejection_explanation]
        if self.guidelines:
            parts.append("Guidelines:\n" + "\n".join(f"{i}. {g}" for i, g in enumerate(self.guidelines, 1)))
        if self.response_format:
            parts.append(self.response_format)
        if self.reasoning_requested:
            parts.append(self.reasoning_instruction)
        parts.extend(text for _, text in self.examples)
        return "\n\n".join(p.strip("\n") for p in parts if p) + "\n"


# ---------------------------------------------------------------- class ordering

class OrderKind(str, enum.Enum):
    AS_GIVEN = "as-given"
    RANDOM = "random"
    SIMILAR_FIRST = "similar-first"
    SIMILAR_LAST = "similar-last"


@dataclass(frozen=True)
class OrderStrategy:
    kind: OrderKind = OrderKind.AS_GIVEN
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OrderKind(self.kind))


@dataclass(frozen=True)
class ClassGroupTable:
    groups: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        groups = {g: tuple(cs) for g, cs in self.groups.items()}
        object.__setattr__(self, "groups", groups)
        owner: dict[str, str] = {}
        for g, classes in groups.items():
            for c in classes:
                key = normalize_name(c)
                if key in owner:
                    raise ValueError(f"class {c!r} is in both {owner[key]!r} and {g!r}")
                owner[key] = g
        object.__setattr__(self, "_owner", owner)

    @classmethod
    def imagenet200(cls) -> "ClassGroupTable":
        text = resources.files("lvlm_ood").joinpath("data/imagenet200_groups.json").read_text("utf-8")
        return cls(json.loads(text)["groups"])

    @classmethod
    def from_file(cls, path: str | Path) -> "ClassGroupTable":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data.get("groups", data))

    def group_of(self, name: str) -> str | None:
        return self._owner.get(normalize_name(name))  # type: ignore[attr-defined]

    def check_covers(self, vocab: ClassVocabulary) -> None:
        missing = [c for c in vocab.id_classes if self.group_of(c) is None]
        if missing:
            raise ValueError(f"{len(missing)} ID classes have no group, e.g. {missing[:3]}")


def order_classes(vocab: ClassVocabulary, strategy: OrderStrategy,
                  groups: ClassGroupTable | None = None, ground_truth_label: str | None = None,
                  key: str = "") -> list[str]:
    """Order the ID classes for one query. ``key`` (usually the sample id) varies the shuffle per query.

    Similar-first and similar-last share one random draw, so the label's group block and the
    remaining classes have the same internal order under both; only block placement differs.
    """
    classes = list(vocab.id_classes)
    if strategy.kind is OrderKind.AS_GIVEN:
        return classes
    rng = seeded_rng(strategy.seed, "order", key)
    if strategy.kind is OrderKind.RANDOM:
        rng.shuffle(classes)
        return classes
    if groups is None:
        raise ValueError(f"{strategy.kind.value} ordering needs a class group table")
    if ground_truth_label is None:
        rng.shuffle(classes)
        return classes
    group = groups.group_of(ground_truth_label)
    if group is None:
        raise ValueError(f"label {ground_truth_label!r} is not in any class group")
    block = [c for c in classes if groups.group_of(c) == group]
    rest = [c for c in classes if groups.group_of(c) != group]
    rng.shuffle(rest)
    return block + rest if strategy.kind is OrderKind.SIMILAR_FIRST else rest + block


# ---------------------------------------------------------------- classification prompts

def _schema(classes: Sequence[str]) -> str:
    return ", ".join(f"{c}: confidence score" for c in classes)


def format_example(prediction: str, scores: Mapping[str, float]) -> str:
    body = ", ".join(f"{c}: {v:.2f}" for c, v in scores.items())
    return f"Prediction: {prediction}\nConfidence: {{{body}}}"


def _example_scores(classes: Sequence[str], top: str) -> dict[str, float]:
    return {c: (95.0 if c == top else 0.0) for c in classes}


def build_prompt_spec(vocab: ClassVocabulary, ordered_classes: Sequence[str], reasoning: bool = False,
                      aux_classes: Sequence[str] = (), options: PromptOptions = PromptOptions()) -> PromptSpec:
    ordered = list(ordered_classes)
    if sorted(ordered) != sorted(vocab.id_classes):
        raise ValueError("ordered_classes must be a permutation of the vocabulary's ID classes")
    listed = ordered + list(aux_classes)
    class_list = tuple(listed) + (vocab.rejection_class,)
    rej = vocab.rejection_class
    tdir = options.template_dir

    task = render(load_template("oodd_task", tdir), {
        "n_classes": len(listed),
        "class_list": ", ".join(listed),
    })
    rejection = render(load_template("oodd_rejection", tdir), {"rejection_class": rej})
    guidelines: tuple[str, ...] = ()
    if options.guidelines:
        lines = render(load_template("oodd_guidelines", tdir), {"rejection_class": rej}).splitlines()
        guidelines = tuple(line for line in lines if line.strip())
    response_format = render(load_template("oodd_format", tdir), {"schema": _schema(class_list)})
    examples: tuple[tuple[Scenario, str], ...] = ()
    if options.examples:
        id_ex = format_example(ordered[0], _example_scores(class_list, ordered[0]))
        ood_ex = format_example(rej, _example_scores(class_list, rej))
        examples = (
            (Scenario.ID, render(load_template("oodd_example_id", tdir), {"example": id_ex})),
            (Scenario.OOD, render(load_template("oodd_example_ood", tdir), {"example": ood_ex})),
        )
    reasoning_text = load_template("oodd_reasoning", tdir) if reasoning else ""
    return PromptSpec(task_description=task, rejection_explanation=rejection, guidelines=guidelines,
                      examples=examples, class_list=class_list, reasoning_requested=reasoning,
                      response_format=response_format, reasoning_instruction=reasoning_text)


def build_oodd_prompt(vocab: ClassVocabulary, ordered_classes: Sequence[str] | None = None,
                      reasoning: bool = False, options: PromptOptions = PromptOptions()) -> str:
    ordered = vocab.id_classes if ordered_classes is None else ordered_classes
    return build_prompt_spec(vocab, ordered, reasoning, (), options).render()


def build_stage2_prompt(vocab: ClassVocabulary, suggestions: SuggestionSet,
                        ordered_classes: Sequence[str] | None = None, reasoning: bool = False,
                        options: PromptOptions = PromptOptions()) -> str:
    """Classification prompt with near then far suggestions appended after the ID classes."""
    ordered = vocab.id_classes if ordered_classes is None else ordered_classes
    return build_prompt_spec(vocab, ordered, reasoning, suggestions.all, options).render()


# ---------------------------------------------------------------- suggestion prompts

def _check_n(n_per_group: int) -> None:
    if n_per_group < 1:
        raise ValueError(f"n_per_group must be >= 1, got {n_per_group}")


def build_stage1_prompt(n_per_group: int, vocab: ClassVocabulary | None = None,
                        template_dir: str | None = None) -> str:
    """Image-based suggestion request. With ``vocab`` the ID names are listed as excluded."""
    _check_n(n_per_group)
    id_block = ""
    rule = "Do not suggest the name of any class from the original classification task."
    if vocab is not None:
        id_block = "\nExcluded classes:\n" + ", ".join(vocab.id_classes) + "\n"
        rule = "Do not suggest any class name that appears in the list of excluded classes."
    return render(load_template("suggest_image", template_dir),
                  {"n_near": n_per_group, "n_far": n_per_group, "id_block": id_block, "exclusion_rule": rule})


def build_gpt_text_prompt(vocab: ClassVocabulary, n_per_group: int, template_dir: str | None = None) -> str:
    """Text-only suggestion request built from the ID class names."""
    _check_n(n_per_group)
    return render(load_template("suggest_text", template_dir), {
        "n_id": len(vocab.id_classes), "n_near": n_per_group, "n_far": n_per_group,
        "class_list": ", ".join(vocab.id_classes),
    })
