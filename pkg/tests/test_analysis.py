from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gistkit.analysis import (
    LabelRecord,
    Rule,
    ablate_modality,
    classification_report,
    cluster_shares,
    crosstab,
    crosstab_association,
    match_clusters,
    membership_entropy,
    rule_classify,
)
from gistkit.sociogram import Modality, ModalSociogram
from gistkit.synth import BehaviorMode
from gistkit.sync import Window

W0 = Window(0.0, 32.0, 0)

# -- rules --------------------------------------------------------------------


@pytest.mark.parametrize(
    "means, mode, rule",
    [
        ({"entropy_speaking": 1.3, "dominance_ratio": -2.0, "material_diversity": -1.0}, 1, Rule.ENTROPY),
        ({"entropy_speaking": 1.2, "dominance_ratio": -0.71, "material_diversity": -1.0}, 3, Rule.DOMINANCE),
        ({"entropy_speaking": 0.0, "dominance_ratio": -0.7, "material_diversity": -0.31}, 2, Rule.DIVERSITY),
        ({"entropy_speaking": 0.0, "dominance_ratio": 0.0, "material_diversity": -0.3}, 0, Rule.DEFAULT),
        ({}, 0, Rule.DEFAULT),
        ({"entropy_speaking": math.nan, "dominance_ratio": -1.0}, 3, Rule.DOMINANCE),
    ],
)
def test_rule_examples(means, mode, rule):
    out = rule_classify(means)
    assert out.cluster is BehaviorMode(mode) and out.fired_rule is rule


finite = st.floats(-5, 5, allow_nan=False)


@given(finite, finite, finite)
def test_rules_total_and_ordered(e, d, v):
    out = rule_classify({"entropy_speaking": e, "dominance_ratio": d, "material_diversity": v})
    if e > 1.2:
        expected = Rule.ENTROPY
    elif d < -0.7:
        expected = Rule.DOMINANCE
    elif v < -0.3:
        expected = Rule.DIVERSITY
    else:
        expected = Rule.DEFAULT
    assert out.fired_rule is expected


# -- membership entropy -------------------------------------------------------------


def test_entropy_single_source_is_zero():
    recs = [LabelRecord("g", 0, 1, w, 0) for w in range(5)]
    me = membership_entropy(recs)
    assert me.group[0] == me.pair[0] == 0.0
    assert me.actor[0] == pytest.approx(1.0)  # two actors, equal counts


def test_entropy_twelve_groups():
    recs = [LabelRecord(f"g{s}", 0, 1, w, 2) for s in range(12) for w in range(3)]
    me = membership_entropy(recs, range(3))
    assert me.group[2] == pytest.approx(math.log2(12))
    assert me.group[2] == pytest.approx(3.585, abs=1e-3)
    assert me.empty == frozenset({0, 1}) and me.counts[0] == 0 and me.group[0] == 0.0


def test_entropy_two_pairs():
    recs = [LabelRecord("g", 0, 1, 0, 1), LabelRecord("g", 2, 3, 0, 1)]
    me = membership_entropy(recs)
    assert me.pair[1] == pytest.approx(1.0)
    assert me.actor[1] == pytest.approx(2.0)
    assert me.rows()[0]["n_windows"] == 2


def test_entropy_errors():
    with pytest.raises(ValueError):
        membership_entropy([])
    with pytest.raises(ValueError):
        membership_entropy([LabelRecord("g", 0, 1, 0, 5)], range(3))


# -- contingency ---------------------------------------------------------------------------


def test_two_by_two_diagonal():
    labels = [0] * 10 + [1] * 10
    tiers = ["low"] * 10 + ["high"] * 10
    res = crosstab_association(labels, tiers)
    assert res.chi2 == pytest.approx(20.0)
    assert res.cramers_v == pytest.approx(1.0)
    assert res.dof == 1 and res.p_value < 1e-4


def test_identical_rows_zero():
    labels = [0, 0, 0, 1, 1, 1]
    tiers = ["low", "medium", "high"] * 2
    res = crosstab_association(labels, tiers)
    assert res.chi2 == pytest.approx(0.0) and res.cramers_v == pytest.approx(0.0)
    assert res.p_value == pytest.approx(1.0)


def test_independent_labels_small_v():
    rng = np.random.default_rng(0)
    res = crosstab_association(rng.integers(0, 4, 5000).tolist(), rng.integers(0, 3, 5000).tolist())
    assert res.cramers_v < 0.1


def test_zero_marginals_dropped():
    labels = [0] * 5 + [1] * 5 + [2] * 5
    tiers = ["low"] * 5 + ["medium"] * 5 + ["high"] * 5
    res = crosstab_association(labels, tiers, rows=range(5), cols=["low", "medium", "high"])
    assert res.dropped_rows == (3, 4)
    assert res.dof == 4
    assert res.cramers_v == pytest.approx(1.0)


def test_single_column_no_association():
    res = crosstab_association([0, 1, 2], ["low"] * 3)
    assert res.dof == 0 and res.p_value == 1.0 and res.cramers_v == 0.0


def test_crosstab_counts_and_errors():
    t = crosstab([0, 0, 1], ["a", "b", "b"])
    assert t.counts.tolist() == [[1, 1], [0, 1]] and t.n == 3
    with pytest.raises(ValueError):
        crosstab([0], ["a", "b"])


# -- ablation ------------------------------------------------------------------------------


def _triple(conv, att, prox, n=4):
    iu = np.triu_indices(n, 1)

    def sym(vals):
        W = np.zeros((n, n))
        W[iu] = vals
        return W + W.T

    C = np.zeros((n, n))
    C[iu] = conv
    return (
        ModalSociogram(Modality.CONVERSATION, C, True, W0),
        ModalSociogram(Modality.ATTENTION, sym(att), False, W0),
        ModalSociogram(Modality.PROXIMITY, sym(prox), False, W0),
    )


def test_ablating_zero_weight_modality():
    windows = [_triple([10, 8, 6, 4, 2, 0], [0] * 6, [0, 2, 1, 3, 5, 4])]
    res = ablate_modality(windows, "attention")
    assert res.full.att == 0.0
    assert res.rho == 1.0
    assert np.allclose(res.strengths_full, res.strengths_ablated)


def test_two_dyads_rho_is_unit():
    windows = [_triple([10, 8, 6, 4, 2, 0], [0, 1, 2, 3, 4, 6], [0, 2, 1, 3, 5, 4])]
    res = ablate_modality(windows, Modality.CONVERSATION, dyads=[(0, 1), (3, 2)])
    assert abs(res.rho) == pytest.approx(1.0)
    assert res.dyads == ((0, 1), (2, 3))


def test_conversation_driven_reorders():
    # talk on dyad (0, 3) lifts it above (0, 2) only while conversation is fused in
    windows = [_triple([0, 0, 10, 0, 0, 0], [0, 1, 2, 3, 4, 6], [0, 2, 1, 3, 5, 4])]
    res = ablate_modality(windows, "conversation")
    assert res.ablated.conv == 0.0
    assert res.rho < 1.0


def test_ablation_skipped_when_too_little_varies():
    windows = [_triple([10, 8, 6, 4, 2, 0], [0] * 6, [1] * 6)]
    assert ablate_modality(windows, "proximity") is None
    with pytest.raises(ValueError):
        ablate_modality([], "proximity")


# -- classification report --------------------------------------------------------------------


def test_report_perfect():
    r = classification_report([0, 1, 2, 3], [0, 1, 2, 3])
    assert r["macro"] == {"precision": 1.0, "recall": 1.0, "f1": 1.0}
    assert r["accuracy"] == 1.0


def test_report_constant_prediction():
    r = classification_report([0, 0, 0, 0], [0, 1, 2, 3], classes=range(4))
    c0 = r["classes"]["0"]
    assert c0["recall"] == 1.0 and c0["precision"] == 0.25
    assert r["macro"]["f1"] == pytest.approx(0.1)
    assert "precision_undefined" in r["classes"]["1"]["flags"]


def test_report_errors():
    with pytest.raises(ValueError):
        classification_report([], [])
    with pytest.raises(ValueError):
        classification_report([0], [0, 1])


def test_match_clusters_and_shares():
    assert match_clusters([5, 5, 7, 7, 9], [1, 1, 0, 0, 0]) == {5: 1, 7: 0, 9: 0}
    assert cluster_shares([0, 0, 1, 3], k=4) == {0: 0.5, 1: 0.25, 2: 0.0, 3: 0.25}
