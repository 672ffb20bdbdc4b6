from __future__ import annotations

import pytest

from lvlm_ood.backend import ImagePayload, MockBackend
from lvlm_ood.benchmark import Role, Sample, imagenet200_classes
from lvlm_ood.metrics import EvalRecord
from lvlm_ood.prompt import build_oodd_prompt, build_stage2_prompt
from lvlm_ood.reguide import (non_id_prediction_ratio, postprocess_suggestions, request_text_suggestions,
                              run_reguide)
from lvlm_ood.suggestions import SuggestionSet, SuggestionSource
from lvlm_ood.vocab import REJECTION_CLASS, ClassVocabulary, normalize_name

import golden
from support import fake_png, one_hot

VOCAB = ClassVocabulary(imagenet200_classes())
IMAGE = ImagePayload(fake_png("img"), "image/png", "img.png")


def test_id_names_and_rejection_removed():
    raw = SuggestionSet(golden.HAMMERHEAD_NEAR + ("None of these classes",), golden.HAMMERHEAD_FAR)
    out = postprocess_suggestions(raw, VOCAB, 20, 0)
    for name in ("great white shark", "starfish", "snail", "None of these classes"):
        assert name not in out.all
    assert "pufferfish" in out.near  # differs from the ID name "puffer fish" after normalization
    assert len(out) == 37


def test_duplicates_across_groups_keep_first():
    out = postprocess_suggestions(SuggestionSet(("lynx", "Lynx", "otter"), ("otter", "drone")), VOCAB, 5, 0)
    assert out.near == ("lynx", "otter") and out.far == ("drone",)


def test_downsampling_to_2n_balanced_and_seeded():
    raw = SuggestionSet(tuple(f"n{i}" for i in range(25)), tuple(f"f{i}" for i in range(20)))
    a = postprocess_suggestions(raw, VOCAB, 20, 1, key="s")
    assert len(a) == 40 and len(a.near) == 20 and len(a.far) == 20
    assert list(a.near) == sorted(a.near, key=raw.near.index)
    assert a == postprocess_suggestions(raw, VOCAB, 20, 1, key="s")
    assert a != postprocess_suggestions(raw, VOCAB, 20, 2, key="s")


def test_short_group_shortfall_goes_to_other():
    raw = SuggestionSet(tuple(f"n{i}" for i in range(30)), ("f0", "f1"))
    out = postprocess_suggestions(raw, VOCAB, 10, 0)
    assert len(out.far) == 2 and len(out.near) == 18


def test_no_suggestion_passes_through():
    raw = SuggestionSet(no_suggestion=True)
    assert postprocess_suggestions(raw, VOCAB, 20, 0) is raw
    with pytest.raises(ValueError):
        postprocess_suggestions(raw, VOCAB, 0, 0)


def _stage1_text(near, far):
    return "Near-OoD: " + ", ".join(near) + "\nFar-OoD: " + ", ".join(far) + "\n"


def test_two_stage_hammerhead_stays_id():
    sample = Sample("h1", "img.png", "ImageNet200", Role.ID, "hammerhead")
    mock = MockBackend({"h1:stage1": _stage1_text(golden.HAMMERHEAD_NEAR, golden.HAMMERHEAD_FAR),
                        "h1:stage2": one_hot("hammerhead")})
    res = run_reguide(sample, VOCAB, mock, 20, 0, image=IMAGE)
    assert not res.fallback and res.parsed.valid
    assert res.effective_vocab.tag_of("hammerhead").value == "id"
    assert "great white shark" in res.raw_suggestions.near
    assert "great white shark" not in res.suggestions.all
    suggestions, parsed = res
    assert parsed.prediction == "hammerhead" and suggestions is res.suggestions


def test_two_stage_polka_dot_is_aux():
    sample = Sample("d1", "img.png", "Textures", Role.FAR_OOD)
    mock = MockBackend({"d1:stage1": _stage1_text(golden.DOTTED_NEAR, golden.DOTTED_FAR),
                        "d1:stage2": one_hot("polka dot")})
    res = run_reguide(sample, VOCAB, mock, 20, 0, image=IMAGE)
    assert res.effective_vocab.tag_of(res.parsed.prediction).value == "aux"
    assert res.stage2_prompt.index("polka dot") > res.stage2_prompt.index(VOCAB.id_classes[-1])


def test_stage1_refusal_falls_back_to_baseline_prompt():
    sample = Sample("r1", "img.png", "SSB-Hard", Role.NEAR_OOD)
    mock = MockBackend({"r1:stage1": "I'm sorry, I can't help with that.", "r1:stage2": one_hot(REJECTION_CLASS)})
    res = run_reguide(sample, VOCAB, mock, 20, 0, image=IMAGE)
    assert res.fallback and res.suggestions.no_suggestion
    assert res.stage2_prompt == build_oodd_prompt(VOCAB)
    assert res.parsed.prediction == REJECTION_CLASS


def test_text_suggestions_single_request():
    mock = MockBackend({"__text__:gpt_text": _stage1_text(golden.TEXT_NEAR, golden.TEXT_FAR)})
    raw, processed, text = request_text_suggestions(VOCAB, mock, 20, 0)
    assert raw.source is SuggestionSource.TEXT and len(processed) == 40
    assert mock.calls == 1
    prompt = build_stage2_prompt(VOCAB, processed)
    assert "swordfish" in prompt


def test_non_id_ratio():
    recs = [EvalRecord(f"o{i}", "X", Role.FAR_OOD, True, 0.1, "p", tag) for i, tag in
            enumerate(["aux", "reject", "id", "aux"])]
    recs.append(EvalRecord("bad", "X", Role.FAR_OOD, False))
    recs.append(EvalRecord("i", "ID", Role.ID, True, 0.9, "a", "id", "a", True, 0.9))
    assert non_id_prediction_ratio(recs) == 0.75
    with pytest.raises(ValueError):
        non_id_prediction_ratio(recs[-1:])


def test_postprocess_invariants_on_published_lists():
    for near, far in [(golden.HAMMERHEAD_NEAR, golden.HAMMERHEAD_FAR), (golden.SOFTBALL_NEAR, golden.SOFTBALL_FAR),
                      (golden.DOTTED_NEAR, golden.DOTTED_FAR), (golden.TEXT_NEAR, golden.TEXT_FAR)]:
        out = postprocess_suggestions(SuggestionSet(near, far), VOCAB, 20, 0)
        keys = [normalize_name(n) for n in out.all]
        assert len(keys) == len(set(keys)) and not set(keys) & set(VOCAB.lookup)
