from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvlm_ood.benchmark import imagenet200_classes
from lvlm_ood.parse import FailureCode, extract, format_response, parse_response, parse_suggestions
from lvlm_ood.reguide import postprocess_suggestions
from lvlm_ood.suggestions import SuggestionSet, SuggestionSource
from lvlm_ood.vocab import REJECTION_CLASS, ClassVocabulary, EffectiveVocab

import golden

VOCAB = ClassVocabulary(imagenet200_classes())
BASE = VOCAB.effective()


def _effective(g: golden.Golden) -> EffectiveVocab:
    if not (g.near or g.far):
        return BASE
    s = postprocess_suggestions(SuggestionSet(g.near, g.far), VOCAB, 100, 0)
    return VOCAB.effective(None, s.near, s.far)


@pytest.mark.parametrize("case", golden.ALL, ids=lambda g: g.name)
def test_golden_response(case):
    eff = _effective(case)
    p = parse_response(case.text, eff)
    assert p.valid == case.valid
    assert p.prediction == case.prediction
    assert {int(c) for c in p.codes} - {FailureCode.MISSING_CONFIDENCES} == set(case.codes)
    if case.valid:
        assert eff.tag_of(p.prediction).value == case.tag


def test_partial_block_is_repaired():
    p = parse_response("Prediction: bald eagle\nConfidence: {bald eagle: 98.75, vulture: 1.0, "
                       "none of these classes: 0.25}", BASE)
    assert p.valid and p.repaired
    assert len(p.confidences) == 201
    assert sum(v == 0.0 for v in p.confidences.values()) == 198
    assert p.confidences["bald eagle"] == 98.75


def test_refusal_is_the_only_code():
    p = parse_response("I'm sorry, I can't help with that.", BASE)
    assert p.codes == {FailureCode.REFUSAL} and not p.valid


def test_structured_apology_is_not_refusal():
    p = parse_response("I'm sorry for the wait.\nPrediction: goldfish\nConfidence: {goldfish: 90}", BASE)
    assert p.valid and p.prediction == "goldfish"


def test_unknown_entries_are_dropped():
    p = parse_response(f"Prediction: {REJECTION_CLASS}\nConfidence: {{{REJECTION_CLASS}: 99.99, "
                       "all the other classes: 0.01}", BASE)
    assert p.valid and p.unknown_entries == ("all the other classes",)


@pytest.mark.parametrize("block, code", [
    ("goldfish: high", FailureCode.MALFORMED),
    ("goldfish: 120", FailureCode.MALFORMED),
    ("goldfish: 90, goldfish: 10", FailureCode.DUPLICATE_CLASS),
    ("goldfish: 10, junco: 90", FailureCode.PRED_MAX_MISMATCH),
])
def test_block_defects(block, code):
    p = parse_response(f"Prediction: goldfish\nConfidence: {{{block}}}", BASE)
    assert code in p.codes and not p.valid


def test_out_of_range_is_clamped():
    p = parse_response("Prediction: goldfish\nConfidence: {goldfish: 120}", BASE)
    assert p.confidences["goldfish"] == 100.0


def test_markdown_and_percent_accepted():
    text = "**Prediction:** *junco*\n**Confidence:**\n- junco: 87%\n- goldfinch: 13%\n"
    p = parse_response(text, BASE)
    assert p.valid and p.prediction == "junco" and p.confidences["goldfinch"] == 13.0


def test_name_matching_is_case_and_space_insensitive():
    p = parse_response("Prediction: Bald  Eagle\nConfidence: {BALD EAGLE: 90}", BASE)
    assert p.valid and p.prediction == "bald eagle"


def test_rationale_captured():
    p = parse_response("Prediction: goldfish\nConfidence: {goldfish: 90}\nReasoning: orange fish in a bowl", BASE)
    assert p.rationale == "orange fish in a bowl"


def test_empty_text_raises():
    with pytest.raises(ValueError):
        parse_response("   ", BASE)


def test_plain_name_list_vocab():
    p = parse_response("Prediction: cat\nConfidence: {cat: 70, dog: 30}", ["cat", "dog"])
    assert p.valid and set(p.confidences) == {"cat", "dog", REJECTION_CLASS}


SMALL = EffectiveVocab.from_names(["cat", "dog", "red fox", "sea lion"])
_scores = st.floats(min_value=0, max_value=100, allow_nan=False).map(lambda v: round(v, 2))


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.sampled_from(SMALL.classes), _scores, min_size=1))
def test_format_parse_round_trip(confidences):
    top = max(confidences, key=confidences.get)
    p = parse_response(format_response(top, confidences), SMALL)
    assert p.valid and p.prediction == top
    assert all(p.confidences[c] == v for c, v in confidences.items())


@settings(max_examples=300, deadline=None)
@given(st.text(min_size=1))
def test_parser_is_total(text):
    if not text.strip():
        return
    p = parse_response(text, SMALL)
    assert p.valid == all(f.code is FailureCode.MISSING_CONFIDENCES for f in p.failures)


def test_extract_finds_brace_fallback():
    raw = extract("Here you go: {cat: 90, dog: 10}")
    assert raw.has_block and raw.prediction is None


def test_parse_suggestions_groups():
    text = ("Near-OoD: great white shark, sailfish, tiger shark\n"
            "Far-OoD:\n- umbrella\n- wristwatch\n\nHope this helps!")
    s = parse_suggestions(text)
    assert s.near == ("great white shark", "sailfish", "tiger shark")
    assert s.far == ("umbrella", "wristwatch")
    assert not s.no_suggestion and s.source is SuggestionSource.IMAGE


def test_parse_suggestions_refusal_flags_no_suggestion():
    s = parse_suggestions("I'm sorry, I can't help with identifying or analyzing this image.")
    assert s.no_suggestion and len(s) == 0
