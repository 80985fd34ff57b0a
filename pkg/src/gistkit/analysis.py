"""Rule surrogate, membership entropy, contingency statistics, ablation and reports."""

from __future__ import annotations

import enum
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment

from .sociogram import (
    MODALITIES,
    FusionWeights,
    Modality,
    ModalSociogram,
    compute_fusion_weights,
    fuse,
    session_totals,
)
from .synth import BehaviorMode

logger = logging.getLogger(__name__)

__all__ = [
    "Rule",
    "RuleLabel",
    "rule_classify",
    "LabelRecord",
    "MembershipEntropy",
    "membership_entropy",
    "ContingencyTable",
    "Association",
    "crosstab",
    "crosstab_association",
    "Ablation",
    "ablate_modality",
    "classification_report",
    "match_clusters",
    "cluster_profiles",
    "cluster_shares",
]

ENTROPY_CUT = 1.2
DOMINANCE_CUT = -0.7
DIVERSITY_CUT = -0.3


class Rule(str, enum.Enum):
    ENTROPY = "EntropyRule"
    DOMINANCE = "DominanceRule"
    DIVERSITY = "DiversityRule"
    DEFAULT = "Default"


@dataclass(frozen=True)
class RuleLabel:
    cluster: BehaviorMode
    fired_rule: Rule


def rule_classify(means: Mapping[str, float]) -> RuleLabel:
    """Decision hierarchy on segment-mean z-features.

    Checked in order: speaking entropy above 1.2, dominance below -0.7,
    material diversity below -0.3, otherwise the default cluster. A missing
    or NaN feature never fires its rule.
    """
    e = float(means.get("entropy_speaking", math.nan))
    d = float(means.get("dominance_ratio", math.nan))
    v = float(means.get("material_diversity", math.nan))
    if e > ENTROPY_CUT:
        return RuleLabel(BehaviorMode(1), Rule.ENTROPY)
    if d < DOMINANCE_CUT:
        return RuleLabel(BehaviorMode(3), Rule.DOMINANCE)
    if v < DIVERSITY_CUT:
        return RuleLabel(BehaviorMode(2), Rule.DIVERSITY)
    return RuleLabel(BehaviorMode(0), Rule.DEFAULT)


# -- membership entropy ---------------------------------------------------------


@dataclass(frozen=True)
class LabelRecord:
    session: str
    dyad_i: int
    dyad_j: int
    window_index: int
    cluster: int


@dataclass(frozen=True)
class MembershipEntropy:
    """Per-cluster entropy (bits) of membership over groups, pairs and actors."""

    group: dict[int, float]
    pair: dict[int, float]
    actor: dict[int, float]
    counts: dict[int, int]
    empty: frozenset[int] = frozenset()

    def rows(self) -> list[dict]:
        return [
            {
                "cluster": c,
                "n_windows": self.counts[c],
                "group_entropy": self.group[c],
                "pair_entropy": self.pair[c],
                "actor_entropy": self.actor[c],
                "empty": c in self.empty,
            }
            for c in sorted(self.counts)
        ]


def _entropy_bits(counts: Iterable[int]) -> float:
    c = np.array([x for x in counts if x > 0], dtype=float)
    if c.size <= 1:
        return 0.0
    p = c / c.sum()
    return float(-(p * np.log2(p)).sum())


def membership_entropy(labels: Sequence[LabelRecord], clusters: Iterable[int] | None = None) -> MembershipEntropy:
    """Entropy of each cluster's windows across groups, pairs and actors.

    A dyadic window counts once for each of its two actors at the actor
    level. Clusters without windows report 0 and are listed in ``empty``.
    """
    if not labels:
        raise ValueError("membership_entropy needs at least one label")
    ks = sorted(set(clusters) if clusters is not None else {r.cluster for r in labels})
    by: dict[str, dict[int, Counter]] = {lvl: {c: Counter() for c in ks} for lvl in ("group", "pair", "actor")}
    n: Counter = Counter()
    for r in labels:
        if r.cluster not in by["group"]:
            raise ValueError(f"label {r.cluster} outside the declared clusters")
        n[r.cluster] += 1
        by["group"][r.cluster][r.session] += 1
        by["pair"][r.cluster][(r.session, r.dyad_i, r.dyad_j)] += 1
        by["actor"][r.cluster][(r.session, r.dyad_i)] += 1
        by["actor"][r.cluster][(r.session, r.dyad_j)] += 1
    empty = frozenset(c for c in ks if n[c] == 0)
    if empty:
        logger.warning("clusters without windows: %s", sorted(empty))
    return MembershipEntropy(
        group={c: _entropy_bits(by["group"][c].values()) for c in ks},
        pair={c: _entropy_bits(by["pair"][c].values()) for c in ks},
        actor={c: _entropy_bits(by["actor"][c].values()) for c in ks},
        counts={c: n[c] for c in ks},
        empty=empty,
    )


# -- contingency tables ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    rows: tuple[Hashable, ...]
    cols: tuple[Hashable, ...]
    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class Association:
    chi2: float
    p_value: float
    cramers_v: float
    dof: int
    n: int
    dropped_rows: tuple = ()
    dropped_cols: tuple = ()


def crosstab(
    labels: Sequence[Hashable],
    tiers: Sequence[Hashable],
    rows: Sequence[Hashable] | None = None,
    cols: Sequence[Hashable] | None = None,
) -> ContingencyTable:
    if len(labels) != len(tiers):
        raise ValueError("labels and tiers must have equal length")
    rows = tuple(rows) if rows is not None else tuple(sorted(set(labels)))
    cols = tuple(cols) if cols is not None else tuple(sorted(set(tiers)))
    ri = {r: k for k, r in enumerate(rows)}
    ci = {c: k for k, c in enumerate(cols)}
    M = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for a, b in zip(labels, tiers):
        M[ri[a], ci[b]] += 1
    return ContingencyTable(rows, cols, M)


def crosstab_association(
    labels: Sequence[Hashable] | ContingencyTable,
    tiers: Sequence[Hashable] | None = None,
    *,
    rows: Sequence[Hashable] | None = None,
    cols: Sequence[Hashable] | None = None,
) -> Association:
    """Pearson chi-square, its p-value and Cramer's V.

    Rows or columns with a zero marginal are dropped (with a warning) before
    the degrees of freedom ``(r - 1)(c - 1)`` are counted.
    """
    table = labels if isinstance(labels, ContingencyTable) else crosstab(labels, tiers, rows, cols)
    M = np.asarray(table.counts, dtype=float)
    if M.sum() <= 0:
        raise ValueError("contingency table is empty")
    rkeep = M.sum(axis=1) > 0
    ckeep = M.sum(axis=0) > 0
    dropped_r = tuple(r for r, k in zip(table.rows, rkeep) if not k)
    dropped_c = tuple(c for c, k in zip(table.cols, ckeep) if not k)
    if dropped_r or dropped_c:
        logger.warning("dropping empty rows %s and columns %s from the contingency table", dropped_r, dropped_c)
    M = M[rkeep][:, ckeep]
    n = M.sum()
    r, c = M.shape
    dof = (r - 1) * (c - 1)
    if dof == 0:
        logger.warning("contingency table collapses to a single row or column; no association measurable")
        return Association(0.0, 1.0, 0.0, 0, int(n), dropped_r, dropped_c)
    expected = np.outer(M.sum(axis=1), M.sum(axis=0)) / n
    chi2 = float(((M - expected) ** 2 / expected).sum())
    p = float(stats.chi2.sf(chi2, dof))
    v = math.sqrt(chi2 / (n * (min(r, c) - 1)))
    return Association(chi2, p, min(v, 1.0), dof, int(n), dropped_r, dropped_c)


# -- modality ablation ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Ablation:
    dropped: Modality
    full: FusionWeights
    ablated: FusionWeights
    rho: float
    strengths_full: np.ndarray
    strengths_ablated: np.ndarray
    dyads: tuple[tuple[int, int], ...]

    def to_json(self) -> dict:
        return {
            "dropped": self.dropped.value,
            "rho": self.rho,
            "full": self.full.to_json(),
            "ablated": self.ablated.to_json(),
        }


def _dyad_strengths(windows, fw: FusionWeights, dyads) -> np.ndarray:
    total = None
    for triple in windows:
        W = fuse(list(triple), fw).weights
        total = W if total is None else total + W
    S = total + total.T
    return np.array([S[a, b] for a, b in dyads], dtype=float)


def ablate_modality(
    windows: Sequence[tuple[ModalSociogram, ModalSociogram, ModalSociogram]],
    dropped: Modality | str,
    dyads: Sequence[tuple[int, int]] | None = None,
) -> Ablation | None:
    """Leave one modality out of the fusion and rank-correlate dyad strengths.

    ``windows`` holds the (conversation, attention, proximity) graphs of a
    session; ``dyads`` are matrix-index pairs (default: all). Returns None,
    with a warning, when fewer than two remaining modalities vary across
    dyads.
    """
    dropped = Modality(dropped)
    if not windows:
        raise ValueError("no windows to ablate")
    flat = [g for triple in windows for g in triple]
    totals = session_totals(flat)
    rest = [k for k, m in enumerate(MODALITIES) if m != dropped]
    varying = [k for k in rest if totals.shape[0] > 1 and totals[:, k].std() > 1e-12]
    if len(varying) < 2:
        logger.warning("ablation of %s skipped: fewer than two remaining modalities vary", dropped.value)
        return None
    n = windows[0][0].n
    if dyads is None:
        dyads = [(a, b) for a in range(n) for b in range(a + 1, n)]
    dyads = tuple((min(a, b), max(a, b)) for a, b in dyads)
    full = compute_fusion_weights(flat)
    abl = compute_fusion_weights(flat, drop=dropped)
    s_full = _dyad_strengths(windows, full, dyads)
    s_abl = _dyad_strengths(windows, abl, dyads)
    if np.allclose(s_full, s_abl, rtol=0, atol=1e-12):
        rho = 1.0
    else:
        rho = float(stats.spearmanr(s_full, s_abl).statistic)
        if not math.isfinite(rho):
            logger.warning("rank correlation undefined (constant strengths); reporting 0")
            rho = 0.0
    return Ablation(dropped, full, abl, rho, s_full, s_abl, dyads)


# -- classification report ---------------------------------------------------------


def classification_report(
    predicted: Sequence[int], truth: Sequence[int], classes: Sequence[int] | None = None
) -> dict:
    """One-vs-rest precision, recall and F1 per class plus macro averages.

    Undefined ratios (no predictions, or a class absent from the truth) are
    reported as 0 and flagged.
    """
    if len(predicted) != len(truth):
        raise ValueError("predicted and truth must have equal length")
    if len(truth) == 0:
        raise ValueError("classification_report needs at least one item")
    pred = np.asarray(predicted)
    true = np.asarray(truth)
    ks = list(classes) if classes is not None else sorted(set(true.tolist()) | set(pred.tolist()))
    per: dict[str, dict] = {}
    for c in ks:
        tp = int(np.sum((pred == c) & (true == c)))
        fp = int(np.sum((pred == c) & (true != c)))
        fn = int(np.sum((pred != c) & (true == c)))
        flags = []
        if tp + fp == 0:
            prec = 0.0
            flags.append("precision_undefined")
        else:
            prec = tp / (tp + fp)
        if tp + fn == 0:
            rec = 0.0
            flags.append("recall_undefined")
        else:
            rec = tp / (tp + fn)
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        per[str(c)] = {"precision": prec, "recall": rec, "f1": f1, "support": tp + fn, "flags": flags}
    macro = {m: float(np.mean([per[str(c)][m] for c in ks])) for m in ("precision", "recall", "f1")}
    return {
        "classes": per,
        "macro": macro,
        "accuracy": float(np.mean(pred == true)),
        "n": int(len(true)),
    }


def match_clusters(clusters: Sequence[int], modes: Sequence[int]) -> dict[int, int]:
    """Cluster-to-mode mapping maximizing agreement (Hungarian assignment).

    Clusters left over when k exceeds the number of modes map to their
    majority mode.
    """
    cl = np.asarray(clusters)
    md = np.asarray(modes)
    ks = sorted(set(cl.tolist()))
    ms = sorted(set(md.tolist()))
    M = np.array([[np.sum((cl == k) & (md == m)) for m in ms] for k in ks])
    r, c = linear_sum_assignment(-M)
    out = {ks[a]: ms[b] for a, b in zip(r, c)}
    for a, k in enumerate(ks):
        if k not in out:
            out[k] = ms[int(np.argmax(M[a]))]
    return out


def cluster_profiles(labels: Sequence[int], means: Sequence[Mapping[str, float]], names: Sequence[str]) -> dict[int, dict[str, float]]:
    """Mean z-profile of each cluster over its segments."""
    out: dict[int, dict[str, float]] = {}
    labels = list(labels)
    for c in sorted(set(labels)):
        rows = [m for m, l in zip(means, labels) if l == c]
        out[c] = {n: float(np.mean([r[n] for r in rows])) for n in names}
    return out


def cluster_shares(labels: Sequence[int], k: int | None = None) -> dict[int, float]:
    labels = list(labels)
    if not labels:
        return {}
    ks = range(k) if k is not None else sorted(set(labels))
    cnt = Counter(labels)
    return {c: cnt[c] / len(labels) for c in ks}
