"""Benchmark manifests, the two built-in compositions, and label-stratified subsampling."""

from __future__ import annotations

import enum
import hashlib
import json
import random
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

from .vocab import REJECTION_CLASS, ClassVocabulary

# Recorded in every report so a subsample can be regenerated exactly.
SAMPLER_ALGORITHM = "per-label floor; random.Random(MT19937) seeded by sha256(seed|dataset|label); sample() over id-sorted pool"

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)


class Role(str, enum.Enum):
    ID = "id"
    NEAR_OOD = "near_ood"
    FAR_OOD = "far_ood"

    @property
    def is_ood(self) -> bool:
        return self is not Role.ID


class ManifestError(ValueError):
    """Malformed manifest file or a violated sample invariant."""


@dataclass(frozen=True)
class Sample:
    id: str
    image_ref: str
    dataset: str
    role: Role
    label: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "image_ref": self.image_ref,
                               "dataset": self.dataset, "role": self.role.value}
        if self.label is not None:
            out["label"] = self.label
        return out


@dataclass(frozen=True)
class BenchmarkManifest:
    name: str
    id_dataset: str
    near_ood_datasets: tuple[str, ...]
    far_ood_datasets: tuple[str, ...]
    vocabulary: ClassVocabulary
    samples: tuple[Sample, ...] = field(default=())

    def __post_init__(self) -> None:
        for attr in ("near_ood_datasets", "far_ood_datasets", "samples"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))

    @property
    def dataset_roles(self) -> dict[str, Role]:
        roles = {self.id_dataset: Role.ID}
        roles.update({d: Role.NEAR_OOD for d in self.near_ood_datasets})
        roles.update({d: Role.FAR_OOD for d in self.far_ood_datasets})
        return roles

    @property
    def ood_datasets(self) -> tuple[str, ...]:
        return self.near_ood_datasets + self.far_ood_datasets

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}

    def counts(self) -> dict[str, int]:
        out = {d: 0 for d in (self.id_dataset, *self.ood_datasets)}
        for s in self.samples:
            out[s.dataset] += 1
        return out

    def validate(self) -> None:
        """Raise :class:`ManifestError` on the first violated invariant."""
        placements = [self.id_dataset, *self.near_ood_datasets, *self.far_ood_datasets]
        dupes = {d for d in placements if placements.count(d) > 1}
        if dupes:
            raise ManifestError(f"datasets placed in more than one role: {sorted(dupes)}")
        roles = self.dataset_roles
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise ManifestError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if s.dataset not in roles:
                raise ManifestError(f"sample {s.id!r}: dataset {s.dataset!r} is not part of benchmark {self.name!r}")
            if roles[s.dataset] is not s.role:
                raise ManifestError(
                    f"sample {s.id!r}: role {s.role.value} does not match dataset {s.dataset!r} "
                    f"({roles[s.dataset].value})")
            if s.role is Role.ID:
                if s.label is None:
                    raise ManifestError(f"sample {s.id!r}: ID samples need a label")
                if s.label not in self.vocabulary:
                    raise ManifestError(f"sample {s.id!r}: label {s.label!r} is not in the ID vocabulary")


def _load_groups() -> dict[str, list[str]]:
    text = resources.files("lvlm_ood").joinpath("data/imagenet200_groups.json").read_text("utf-8")
    return json.loads(text)["groups"]


def imagenet200_classes() -> tuple[str, ...]:
    return tuple(c for group in _load_groups().values() for c in group)


def builtin_benchmarks(name: str | None = None) -> list[BenchmarkManifest]:
    """Sample-free templates for the ImageNet200 and CIFAR10 compositions.

    With ``name`` the list is filtered (case-insensitive); an unknown name gives ``[]``.
    """
    templates = [
        BenchmarkManifest(
            name="ImageNet200",
            id_dataset="ImageNet200",
            near_ood_datasets=("NINCO", "SSB-Hard"),
            far_ood_datasets=("iNaturalist", "Textures", "Openimage-O"),
            vocabulary=ClassVocabulary(imagenet200_classes()),
        ),
        BenchmarkManifest(
            name="CIFAR10",
            id_dataset="CIFAR10",
            near_ood_datasets=("CIFAR100",),
            far_ood_datasets=("MNIST", "SVHN", "Textures", "Places365", "Tiny ImageNet"),
            vocabulary=ClassVocabulary(CIFAR10_CLASSES),
        ),
    ]
    if name is None:
        return templates
    return [t for t in templates if t.name.casefold() == name.casefold()]


def _sample_from_record(rec: dict[str, Any], lineno: int) -> Sample:
    try:
        role = Role(str(rec["role"]).lower())
        label = rec.get("label")
        return Sample(id=str(rec["id"]), image_ref=str(rec["image_ref"]), dataset=str(rec["dataset"]),
                      role=role, label=None if label in (None, "") else str(label))
    except KeyError as exc:
        raise ManifestError(f"line {lineno}: missing field {exc.args[0]!r}") from None
    except ValueError:
        raise ManifestError(f"line {lineno}: unknown role {rec.get('role')!r}") from None


def load_manifest(path: str | Path, vocabulary: ClassVocabulary | None = None) -> BenchmarkManifest:
    """Read a line-delimited JSON manifest.

    Each line is a sample object ``{id, image_ref, dataset, role, label?}``. An optional
    ``{"header": {...}}`` line declares ``name``, ``benchmark`` (a built-in template to
    inherit from), ``id_dataset``, ``near_ood_datasets``, ``far_ood_datasets``,
    ``id_classes`` and ``rejection_class``. Without a header, dataset roles come from the
    samples and the vocabulary from ``vocabulary`` or, failing that, from the ID labels in
    first-seen order. Image files are not touched here.
    """
    header: dict[str, Any] = {}
    samples: list[Sample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ManifestError(f"line {lineno}: expected an object")
            if "header" in rec:
                if header or samples:
                    raise ManifestError(f"line {lineno}: header must be the first record")
                header = dict(rec["header"])
                continue
            samples.append(_sample_from_record(rec, lineno))

    base = None
    if header.get("benchmark"):
        found = builtin_benchmarks(header["benchmark"])
        if not found:
            raise ManifestError(f"unknown built-in benchmark {header['benchmark']!r}")
        base = found[0]

    if header.get("id_classes"):
        vocab = ClassVocabulary(tuple(header["id_classes"]),
                                header.get("rejection_class", REJECTION_CLASS))
    elif vocabulary is not None:
        vocab = vocabulary
    elif base is not None:
        vocab = base.vocabulary
    else:
        labels = OrderedDict((s.label, None) for s in samples if s.role is Role.ID and s.label)
        if not labels:
            raise ManifestError("no vocabulary: declare id_classes or include labeled ID samples")
        vocab = ClassVocabulary(tuple(labels), header.get("rejection_class", REJECTION_CLASS))

    def datasets_with(role: Role) -> tuple[str, ...]:
        return tuple(OrderedDict((s.dataset, None) for s in samples if s.role is role))

    id_ds = header.get("id_dataset") or (base.id_dataset if base else None)
    if id_ds is None:
        found_id = datasets_with(Role.ID)
        if len(found_id) > 1:
            raise ManifestError(f"more than one ID dataset: {list(found_id)}")
        id_ds = found_id[0] if found_id else "ID"
    near = header.get("near_ood_datasets") or (base.near_ood_datasets if base else datasets_with(Role.NEAR_OOD))
    far = header.get("far_ood_datasets") or (base.far_ood_datasets if base else datasets_with(Role.FAR_OOD))
    name = header.get("name") or (base.name if base else Path(path).stem)

    manifest = BenchmarkManifest(name=name, id_dataset=id_ds, near_ood_datasets=tuple(near),
                                 far_ood_datasets=tuple(far), vocabulary=vocab, samples=tuple(samples))
    manifest.validate()
    return manifest


def write_manifest(manifest: BenchmarkManifest, path: str | Path) -> None:
    header = {
        "name": manifest.name,
        "id_dataset": manifest.id_dataset,
        "near_ood_datasets": list(manifest.near_ood_datasets),
        "far_ood_datasets": list(manifest.far_ood_datasets),
        "id_classes": list(manifest.vocabulary.id_classes),
        "rejection_class": manifest.vocabulary.rejection_class,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"header": header}, ensure_ascii=False) + "\n")
        for s in manifest.samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


def derive_seed(seed: int, *keys: Any) -> int:
    """Stable 64-bit seed from a base seed and any string-able keys."""
    payload = "\x1f".join([str(seed), *map(str, keys)]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


def seeded_rng(seed: int, *keys: Any) -> random.Random:
    return random.Random(derive_seed(seed, *keys))


def _draw(pool: list[Sample], k: int, seed: int, *keys: Any) -> Iterable[Sample]:
    if k >= len(pool):
        return pool
    ordered = sorted(pool, key=lambda s: s.id)
    return seeded_rng(seed, *keys).sample(ordered, k)


def stratified_subsample(manifest: BenchmarkManifest, fraction: float, seed: int) -> BenchmarkManifest:
    """Keep ``floor(fraction * n)`` samples per (dataset, label), or per dataset when unlabeled.

    A dataset counts as labeled only when every one of its samples has a label. The draw
    for each stratum depends on the seed and the stratum's sample ids, never on manifest
    order, and the output keeps the input order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return manifest

    by_dataset: dict[str, list[Sample]] = OrderedDict()
    for s in manifest.samples:
        by_dataset.setdefault(s.dataset, []).append(s)

    keep: set[str] = set()
    for dataset, pool in by_dataset.items():
        if all(s.label is not None for s in pool):
            strata: dict[str, list[Sample]] = OrderedDict()
            for s in pool:
                strata.setdefault(s.label, []).append(s)  # type: ignore[arg-type]
            for label, members in strata.items():
                k = int(fraction * len(members))
                keep.update(s.id for s in _draw(members, k, seed, dataset, label))
        else:
            k = int(fraction * len(pool))
            keep.update(s.id for s in _draw(pool, k, seed, dataset))

    return replace(manifest, samples=tuple(s for s in manifest.samples if s.id in keep))
