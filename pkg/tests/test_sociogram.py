from __future__ import annotations

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gistkit.session import GazeFixation, PoseSample, SessionRecording, SpeechSegment, canonicalize
from gistkit.sociogram import (
    FusionWeights,
    Modality,
    ModalSociogram,
    Thresholds,
    build_attention,
    build_conversation,
    build_proximity,
    build_window,
    compute_fusion_weights,
    fuse,
    fusion_weights_from_totals,
    minmax_normalize,
    principal_component,
)
from gistkit.sync import Window, align

from oracles import random_session

ID = (1.0, 0.0, 0.0, 0.0)
W32 = Window(0.0, 32.0, 0)


def _aligned(n=4, speech=(), gaze=(), poses=None, span=32.0):
    if poses is None:
        poses = {p: (PoseSample(p, 0.0, (3.0 * p, 0, 0), ID), PoseSample(p, span, (3.0 * p, 0, 0), ID)) for p in range(n)}
    return align(canonicalize(SessionRecording(tuple(range(n)), tuple(speech), tuple(gaze), poses, (0.0,) * n)))


def _static(dist: float, t_end: float = 1.0):
    return {
        0: (PoseSample(0, 0.0, (0, 0, 0), ID), PoseSample(0, t_end, (0, 0, 0), ID)),
        1: (PoseSample(1, 0.0, (dist, 0, 0), ID), PoseSample(1, t_end, (dist, 0, 0), ID)),
    }


def test_conversation_broadcast():
    g = build_conversation(_aligned(speech=[SpeechSegment(0, 10, 15)]), W32)
    expected = np.zeros((4, 4))
    expected[0, 1:] = 5.0
    assert g.directed
    assert np.array_equal(g.weights, expected)


def test_conversation_short_segment_ignored():
    g = build_conversation(_aligned(speech=[SpeechSegment(2, 3.0, 3.4)]), W32)
    assert not g.weights.any()


def test_conversation_clipped_at_window_end():
    g = build_conversation(_aligned(speech=[SpeechSegment(1, 30, 40)], span=40), W32)
    assert np.array_equal(g.weights[1], [2.0, 0.0, 2.0, 2.0])
    assert g.weights.sum() == 6.0


def test_attention_overlap():
    a = _aligned(n=2, gaze=[GazeFixation(0, "A", 0, 1.0), GazeFixation(1, "A", 0.5, 2.0)])
    g = build_attention(a, W32)
    assert not g.directed
    assert g.weights[0, 1] == g.weights[1, 0] == 0.5


def test_attention_different_objects():
    a = _aligned(n=2, gaze=[GazeFixation(0, "A", 0, 1.0), GazeFixation(1, "B", 0.0, 2.0)])
    assert not build_attention(a, W32).weights.any()


def test_attention_below_13ms():
    a = _aligned(n=2, gaze=[GazeFixation(0, "A", 0, 1.0), GazeFixation(1, "A", 0.99, 2.0)])
    assert not build_attention(a, W32).weights.any()


def test_proximity_static_close():
    a = align(canonicalize(SessionRecording((0, 1), (), (), _static(1.2), (0.0, 0.0))), 0.1)
    g = build_proximity(a, Window(0.0, 1.0, 0))
    assert g.weights[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert g.weights[0, 1] == g.weights[1, 0]


def test_proximity_far_is_zero():
    a = align(canonicalize(SessionRecording((0, 1), (), (), _static(1.6), (0.0, 0.0))), 0.1)
    assert not build_proximity(a, Window(0.0, 1.0, 0)).weights.any()


def test_proximity_boundary_inclusive():
    a = align(canonicalize(SessionRecording((0, 1), (), (), _static(1.5), (0.0, 0.0))), 0.1)
    assert build_proximity(a, Window(0.0, 1.0, 0)).weights[0, 1] == pytest.approx(1.0)


def test_thresholds_validation():
    Thresholds(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        Thresholds(min_speech=-0.1)


# -- fusion --------------------------------------------------------------------


def test_fusion_identical_columns_uniform():
    col = np.array([1.0, 4.0, 2.0, 8.0, 5.0, 3.0])
    fw = fusion_weights_from_totals(np.column_stack([col, col, col]))
    assert fw.as_tuple() == pytest.approx((1 / 3, 1 / 3, 1 / 3), abs=1e-12)


def test_fusion_constant_column_zero():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.full(6, 3.0), rng.random(6), rng.random(6)])
    fw = fusion_weights_from_totals(X)
    assert fw.conv == 0.0
    assert sum(fw.as_tuple()) == pytest.approx(1.0, abs=1e-12)


def test_fusion_all_constant_uniform_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        fw = fusion_weights_from_totals(np.ones((6, 3)))
    assert fw.as_tuple() == pytest.approx((1 / 3,) * 3)
    assert "uniform" in caplog.text


@pytest.mark.parametrize("seed", range(20))
def test_fusion_matches_correlation_eigenvector(seed):
    X = np.random.default_rng(seed).random((6, 3))
    C = np.corrcoef(X, rowvar=False)
    vals, vecs = np.linalg.eigh(C)
    v = np.abs(vecs[:, np.argmax(vals)])
    fw = fusion_weights_from_totals(X)
    assert np.allclose(fw.as_tuple(), v / v.sum(), atol=1e-9)
    load, share = principal_component(X)
    assert np.allclose(np.abs(load), np.abs(vecs[:, np.argmax(vals)]), atol=1e-9)
    assert share == pytest.approx(vals.max() / vals.sum(), abs=1e-9)


def test_compute_fusion_weights_from_graphs():
    rng = np.random.default_rng(0)
    graphs = []
    for k in range(3):
        w = Window(16.0 * k, 16.0 * k + 32, k)
        for m, directed in ((Modality.CONVERSATION, True), (Modality.ATTENTION, False), (Modality.PROXIMITY, False)):
            W = rng.random((4, 4))
            if not directed:
                W = W + W.T
            np.fill_diagonal(W, 0)
            graphs.append(ModalSociogram(m, W, directed, w))
    fw = compute_fusion_weights(graphs)
    totals = {m: sum(g.weights for g in graphs if g.modality == m) for m in Modality}
    conv = totals[Modality.CONVERSATION] + totals[Modality.CONVERSATION].T
    iu = np.triu_indices(4, 1)
    X = np.column_stack([conv[iu], totals[Modality.ATTENTION][iu], totals[Modality.PROXIMITY][iu]])
    assert fw.as_tuple() == pytest.approx(fusion_weights_from_totals(X).as_tuple())


def _modal(m, W, directed):
    return ModalSociogram(m, np.asarray(W, dtype=float), directed, W32)


def _three(conv, att, prox):
    return [_modal(Modality.CONVERSATION, conv, True), _modal(Modality.ATTENTION, att, False),
            _modal(Modality.PROXIMITY, prox, False)]


def test_fuse_basis_vector():
    rng = np.random.default_rng(1)
    C = rng.random((3, 3))
    np.fill_diagonal(C, 0)
    S = np.zeros((3, 3))
    f = fuse(_three(C, S, S), FusionWeights(1.0, 0.0, 0.0))
    assert np.array_equal(f.weights, minmax_normalize(C))
    assert f.directed


def test_fuse_identical_inputs():
    M = np.array([[0, 2, 4], [2, 0, 6], [4, 6, 0]], dtype=float)
    f = fuse(_three(M, M, M), FusionWeights(0.2, 0.3, 0.5))
    assert np.allclose(f.weights, minmax_normalize(M), atol=1e-15)


def test_fuse_hand_arithmetic():
    conv = [[0, 4, 2], [0, 0, 0], [2, 0, 0]]      # off-diag min 0, max 4
    att = [[0, 1, 3], [1, 0, 2], [3, 2, 0]]       # min 1, max 3
    prox = [[0, 0, 0], [0, 0, 0], [0, 0, 0]]      # stays zero
    f = fuse(_three(conv, att, prox), FusionWeights(0.5, 0.25, 0.25))
    expected = np.array([
        [0, 0.5 * 1.0 + 0.25 * 0.0, 0.5 * 0.5 + 0.25 * 1.0],
        [0.5 * 0 + 0.25 * 0.0, 0, 0.5 * 0 + 0.25 * 0.5],
        [0.5 * 0.5 + 0.25 * 1.0, 0.25 * 0.5, 0],
    ])
    assert np.allclose(f.weights, expected, atol=1e-15)


def test_fuse_mismatch_rejected():
    M = np.zeros((3, 3))
    graphs = _three(M, M, np.zeros((4, 4)))
    with pytest.raises(ValueError):
        fuse(graphs, FusionWeights.uniform())
    with pytest.raises(ValueError):
        fuse(graphs[:2] + [graphs[1]], FusionWeights.uniform())


# -- invariants on random sessions ------------------------------------------------------


def _graphs(s, w, th=Thresholds()):
    a = align(s, 0.1)
    return build_window(a, [w], th)[0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4), st.floats(min_value=1.0, max_value=31.0))
def test_sum_decomposition_threshold_free(seed, n, cut):
    s = random_session(np.random.default_rng(seed), n, 40.0, pose_dt=0.1)
    th = Thresholds(0.0, 0.0, 1.5)
    b = round(cut * 10) / 10  # proximity splits cleanly on grid points
    whole = _graphs(s, Window(0.0, 32.0, 0), th)
    left = _graphs(s, Window(0.0, b, 0), th)
    right = _graphs(s, Window(b, 32.0, 1), th)
    for gw, gl, gr in zip(whole, left, right):
        assert np.allclose(gw.weights, gl.weights + gr.weights, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_symmetry_and_bounds(seed, n):
    s = random_session(np.random.default_rng(seed), n, 40.0)
    conv, att, prox = _graphs(s, W32)
    for g in (att, prox):
        assert np.array_equal(g.weights, g.weights.T)
    for g in (conv, att, prox):
        assert (g.weights >= 0).all() and not np.diag(g.weights).any()
        assert g.weights.max() <= 32.0 * n
    fw = compute_fusion_weights([conv, att, prox])
    f = fuse([conv, att, prox], fw)
    assert (f.weights >= 0).all() and (f.weights <= 1 + 1e-12).all()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 2), st.floats(0, 2), st.floats(0, 0.05), st.floats(0, 0.05),
       st.floats(0.1, 3), st.floats(0.1, 3))
def test_monotone_in_thresholds(seed, s1, s2, g1, g2, p1, p2):
    s = random_session(np.random.default_rng(seed), 3, 40.0)
    lo = Thresholds(min(s1, s2), min(g1, g2), max(p1, p2))  # looser
    hi = Thresholds(max(s1, s2), max(g1, g2), min(p1, p2))  # stricter
    for a, b in zip(_graphs(s, W32, lo), _graphs(s, W32, hi)):
        assert (b.weights <= a.weights + 1e-12).all()
