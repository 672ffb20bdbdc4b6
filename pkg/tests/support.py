"""Shared builders for offline runs: fake images, manifests and mock scripts."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from lvlm_ood.benchmark import Role
from lvlm_ood.parse import format_response
from lvlm_ood.vocab import REJECTION_CLASS

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def fake_png(tag: str) -> bytes:
    # unique bytes per image keep cache keys distinct
    return PNG_MAGIC + tag.encode("utf-8")


def one_hot(prediction: str, rejection: str = REJECTION_CLASS) -> str:
    """A response that puts 100 on the prediction and 0 on the rejection class; the rest is repaired."""
    scores = {prediction: 100.0}
    if prediction != rejection:
        scores[rejection] = 0.0
    return format_response(prediction, scores)


def write_manifest(root: Path, rows: Iterable[tuple[str, str, Role, str | None]],
                   id_classes: Sequence[str], name: str = "synthetic",
                   near: Sequence[str] = (), far: Sequence[str] = ()) -> Path:
    """Rows are (sample_id, dataset, role, label); images are written next to the manifest."""
    root.mkdir(parents=True, exist_ok=True)
    img_dir = root / "images"
    img_dir.mkdir(exist_ok=True)
    rows = list(rows)
    id_ds = next((d for _, d, r, _ in rows if r is Role.ID), "ID")
    header = {"name": name, "id_dataset": id_ds, "id_classes": list(id_classes),
              "near_ood_datasets": list(near) or sorted({d for _, d, r, _ in rows if r is Role.NEAR_OOD}),
              "far_ood_datasets": list(far) or sorted({d for _, d, r, _ in rows if r is Role.FAR_OOD})}
    lines = [json.dumps({"header": header})]
    for sid, dataset, role, label in rows:
        img = img_dir / f"{sid}.png"
        img.write_bytes(fake_png(sid))
        rec = {"id": sid, "image_ref": str(img), "dataset": dataset, "role": role.value}
        if label is not None:
            rec["label"] = label
        lines.append(json.dumps(rec))
    path = root / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_script(path: Path, responses: Mapping[str, str], default: str | None = None,
                 failures: Mapping[str, int] | None = None, model_id: str = "mock") -> Path:
    data: dict = {"responses": dict(responses), "model_id": model_id}
    if default is not None:
        data["default"] = default
    if failures:
        data["failures"] = dict(failures)
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


SMALL_CLASSES = ("goldfish", "bald eagle", "tree frog", "hammerhead", "whippet")


def small_benchmark(root: Path, n_id: int = 10, n_near: int = 10, n_far: int = 10) -> Path:
    """Labeled ID samples cycling through SMALL_CLASSES plus unlabeled near and far sets."""
    rows = [(f"id{i:03d}", "ToyID", Role.ID, SMALL_CLASSES[i % len(SMALL_CLASSES)]) for i in range(n_id)]
    rows += [(f"near{i:03d}", "ToyNear", Role.NEAR_OOD, None) for i in range(n_near)]
    rows += [(f"far{i:03d}", "ToyFar", Role.FAR_OOD, None) for i in range(n_far)]
    return write_manifest(root, rows, SMALL_CLASSES)
