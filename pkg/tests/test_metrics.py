from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvlm_ood.benchmark import BenchmarkManifest, Role
from lvlm_ood.metrics import (ALL_OOD, EvalRecord, auroc, aurc, build_report, ece, fpr_at_tpr, roc_points,
                              valid_ratio)
from lvlm_ood.vocab import ClassVocabulary

import oracles


def test_auroc_hand_case():
    assert auroc([0.9, 0.1], [0.8, 0.2]) == 0.5


def test_auroc_ties_half_credit():
    assert auroc([0.5], [0.5]) == 0.5
    assert auroc([1.0, 1.0], [0.0]) == 1.0


def test_fpr_hand_case():
    assert fpr_at_tpr([0.9, 0.8, 0.7, 0.6], [0.85, 0.5, 0.4, 0.3], 0.95) == 0.25


def test_fpr_bimodal_hand_case():
    assert fpr_at_tpr([1.0] * 19 + [0.0], [1.0] * 10, 0.95) == 1.0


def test_ece_hand_case():
    assert ece([0.8, 0.6], [True, False], n_bins=10) == pytest.approx(0.4, abs=1e-12)


def test_aurc_hand_case():
    assert aurc([0.9, 0.5], [True, False]) == pytest.approx(0.25, abs=1e-12)


def test_empty_inputs_raise():
    with pytest.raises(ValueError):
        auroc([], [1.0])
    with pytest.raises(ValueError):
        fpr_at_tpr([1.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        ece([], [])


def test_valid_ratio_table_value():
    assert round(100 * valid_ratio(19_689, 23_031), 2) == 85.49


def test_oracle_agreement_sample():
    rng = random.Random(0)
    for _ in range(200):
        n, m = rng.randint(1, 50), rng.randint(1, 50)
        x = [rng.choice([0.0, 0.5, 1.0, rng.random()]) for _ in range(n)]
        y = [rng.choice([0.0, 0.5, 1.0, rng.random()]) for _ in range(m)]
        assert auroc(x, y) == oracles.auroc(x, y)
        assert fpr_at_tpr(x, y, 0.9) == oracles.fpr_at_tpr(x, y, 0.9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_auroc_properties(x, y):
    a = auroc(x, y)
    assert 0.0 <= a <= 1.0
    assert auroc(y, x) == pytest.approx(1.0 - a, abs=1e-12)
    shifted = [v + 2.0 for v in x]
    assert auroc(shifted, y) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_fpr_monotone_in_target(x, y):
    assert fpr_at_tpr(x, y, 0.5) <= fpr_at_tpr(x, y, 0.9) <= fpr_at_tpr(x, y, 1.0)


def test_roc_points_shape():
    pts = roc_points([0.9, 0.4], [0.5, 0.1])
    assert pts[0] == (float("inf"), 0.0, 0.0)
    assert pts[-1][1:] == (1.0, 1.0)
    # area under the step curve equals auroc when there are no ties
    fpr = np.array([p[1] for p in pts])
    tpr = np.array([p[2] for p in pts])
    area = float(np.sum(np.diff(fpr) * tpr[1:]))
    assert area == auroc([0.9, 0.4], [0.5, 0.1])


def _bench():
    return BenchmarkManifest("b", "ID", ("Near",), ("Far",), ClassVocabulary(("a", "b")))


def test_build_report_excludes_invalid_and_pools():
    recs = [
        EvalRecord("i1", "ID", Role.ID, True, 0.9, "a", "id", "a", True, 0.9),
        EvalRecord("i2", "ID", Role.ID, True, 0.4, "b", "id", "a", False, 0.4),
        EvalRecord("i3", "ID", Role.ID, False, failures=(3,)),
        EvalRecord("n1", "Near", Role.NEAR_OOD, True, 0.5),
        EvalRecord("f1", "Far", Role.FAR_OOD, True, 0.1),
    ]
    rep = build_report(recs, _bench())
    assert rep.valid_count == 4 and rep.total_queries == 5 and rep.valid_ratio == 0.8
    assert rep.id.n_valid == 2 and rep.id.accuracy == 0.5
    assert rep.ood["Near"].auroc == 0.5 and rep.ood["Far"].auroc == 1.0
    assert rep.ood[ALL_OOD].auroc == 0.75
    d = rep.to_dict()
    assert d["id"]["ece_x100"] == pytest.approx(100 * rep.id.ece)
    assert d["id"]["aurc_x1000"] == pytest.approx(1000 * rep.id.aurc)
    assert set(d["ood"]["Near"]["fpr_at_tpr"]) == {"0.95", "0.9"}
    assert len(rep.rows()) == 3


def test_build_report_without_id_records():
    rep = build_report([EvalRecord("n1", "Near", Role.NEAR_OOD, True, 0.5)], _bench())
    assert rep.id.accuracy is None and rep.ood["Near"].auroc is None


def test_record_round_trip():
    r = EvalRecord("i1", "ID", Role.ID, True, 0.9, "a", "id", "a", True, 0.9, (2,))
    assert EvalRecord.from_dict(r.to_dict()) == r
