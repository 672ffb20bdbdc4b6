"""Class vocabularies and the name normalization shared by parsing and filtering."""

from __future__ import annotations

import enum
import re
import unicodedata
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

REJECTION_CLASS = "none of these classes"

_NON_ALNUM = re.compile(r"[^0-9a-z]+")


def normalize_name(name: str) -> str:
    """Canonical matching key for a class name.

    Case-folds, maps every run of non-alphanumeric characters (punctuation,
    quotes, hyphens, whitespace) to one space, and trims. ``"Shih-Tzu"`` and
    ``"shih tzu"`` collide; ``"shihtzu"`` does not.
    """
    folded = unicodedata.normalize("NFKC", name).casefold()
    return _NON_ALNUM.sub(" ", folded).strip()


class ClassTag(str, enum.Enum):
    """Partition of an effective vocabulary: ID classes, auxiliary OoD classes, rejection."""

    ID = "id"
    AUX = "aux"
    REJECT = "reject"


@dataclass(frozen=True)
class ClassVocabulary:
    """Ordered ID class list plus the rejection class name."""

    id_classes: tuple[str, ...]
    rejection_class: str = REJECTION_CLASS

    def __post_init__(self) -> None:
        object.__setattr__(self, "id_classes", tuple(self.id_classes))
        if not self.id_classes:
            raise ValueError("vocabulary needs at least one ID class")
        seen: dict[str, str] = {}
        for name in self.id_classes:
            key = " ".join(name.casefold().split())
            if not key:
                raise ValueError("empty class name in vocabulary")
            if key in seen:
                raise ValueError(f"duplicate ID class {name!r} (collides with {seen[key]!r})")
            seen[key] = name
        if " ".join(self.rejection_class.casefold().split()) in seen:
            raise ValueError(f"rejection class {self.rejection_class!r} is also an ID class")

    def __len__(self) -> int:
        return len(self.id_classes)

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and normalize_name(name) in self.lookup

    @cached_property
    def lookup(self) -> dict[str, str]:
        """Normalized key -> canonical ID class name."""
        return {normalize_name(c): c for c in self.id_classes}

    def canonical(self, name: str) -> str | None:
        return self.lookup.get(normalize_name(name))

    def effective(self, ordered_id: Sequence[str] | None = None,
                  near: Iterable[str] = (), far: Iterable[str] = ()) -> "EffectiveVocab":
        """ID classes (optionally reordered), then near, then far suggestions, rejection last."""
        ids = tuple(ordered_id) if ordered_id is not None else self.id_classes
        aux = tuple(near) + tuple(far)
        classes = ids + aux + (self.rejection_class,)
        tags = (ClassTag.ID,) * len(ids) + (ClassTag.AUX,) * len(aux) + (ClassTag.REJECT,)
        return EffectiveVocab(classes, tags)


@dataclass(frozen=True)
class EffectiveVocab:
    """The class list a single query is scored against, each name tagged ID/AUX/REJECT."""

    classes: tuple[str, ...]
    tags: tuple[ClassTag, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "tags", tuple(ClassTag(t) for t in self.tags))
        if len(self.classes) != len(self.tags):
            raise ValueError("classes and tags differ in length")
        if not self.classes:
            raise ValueError("effective vocabulary is empty")
        if sum(t is ClassTag.REJECT for t in self.tags) != 1:
            raise ValueError("effective vocabulary needs exactly one rejection class")
        keys = [normalize_name(c) for c in self.classes]
        if len(set(keys)) != len(keys):
            dupes = sorted({c for c, k in zip(self.classes, keys) if keys.count(k) > 1})
            raise ValueError(f"class names collide after normalization: {dupes}")

    @classmethod
    def from_names(cls, names: Sequence[str], rejection_class: str = REJECTION_CLASS) -> "EffectiveVocab":
        """Plain name list; the rejection class is tagged REJECT, everything else ID."""
        rej = normalize_name(rejection_class)
        names = list(names)
        if rej not in {normalize_name(n) for n in names}:
            names.append(rejection_class)
        tags = [ClassTag.REJECT if normalize_name(n) == rej else ClassTag.ID for n in names]
        return cls(tuple(names), tuple(tags))

    def __iter__(self) -> Iterator[str]:
        return iter(self.classes)

    def __len__(self) -> int:
        return len(self.classes)

    @cached_property
    def lookup(self) -> dict[str, str]:
        """Normalized key -> canonical class name."""
        return {normalize_name(c): c for c in self.classes}

    @cached_property
    def tag_map(self) -> dict[str, ClassTag]:
        return dict(zip(self.classes, self.tags))

    def tag_of(self, name: str) -> ClassTag | None:
        canonical = self.lookup.get(normalize_name(name))
        return None if canonical is None else self.tag_map[canonical]

    @property
    def rejection_class(self) -> str:
        return self.classes[self.tags.index(ClassTag.REJECT)]
