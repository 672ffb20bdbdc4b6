"""Auxiliary OoD class suggestions (near and far groups)."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class SuggestionSource(str, enum.Enum):
    IMAGE = "image"
    TEXT = "text"
    NONE = "none"


@dataclass(frozen=True)
class SuggestionSet:
    near: tuple[str, ...] = ()
    far: tuple[str, ...] = ()
    source: SuggestionSource = SuggestionSource.NONE
    no_suggestion: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "near", tuple(self.near))
        object.__setattr__(self, "far", tuple(self.far))
        object.__setattr__(self, "source", SuggestionSource(self.source))

    @property
    def all(self) -> tuple[str, ...]:
        return self.near + self.far

    def __len__(self) -> int:
        return len(self.near) + len(self.far)

    @property
    def is_empty(self) -> bool:
        return not self.near and not self.far

    def to_dict(self) -> dict:
        return {"near": list(self.near), "far": list(self.far),
                "source": self.source.value, "no_suggestion": self.no_suggestion}

    @classmethod
    def from_dict(cls, d: dict) -> "SuggestionSet":
        return cls(tuple(d.get("near", ())), tuple(d.get("far", ())),
                   SuggestionSource(d.get("source", "none")), bool(d.get("no_suggestion", False)))
