"""Per-window modality sociograms and their PCA-weighted fusion."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .sync import AlignedSession, Window, clip_interval

logger = logging.getLogger(__name__)

__all__ = [
    "Modality",
    "Thresholds",
    "ModalSociogram",
    "FusionWeights",
    "FusedSociogram",
    "build_conversation",
    "build_attention",
    "build_proximity",
    "build_window",
    "joint_fixations",
    "joint_fixation_records",
    "compute_fusion_weights",
    "fusion_weights_from_totals",
    "principal_component",
    "session_totals",
    "minmax_normalize",
    "fuse",
]


class Modality(str, enum.Enum):
    CONVERSATION = "conversation"
    ATTENTION = "attention"
    PROXIMITY = "proximity"


MODALITIES = (Modality.CONVERSATION, Modality.ATTENTION, Modality.PROXIMITY)


@dataclass(frozen=True)
class Thresholds:
    min_speech: float = 0.5
    min_gaze_overlap: float = 0.013
    max_proximity_dist: float = 1.5

    def __post_init__(self):
        # zero is accepted so threshold-free decompositions can be tested
        if min(self.min_speech, self.min_gaze_overlap, self.max_proximity_dist) < 0:
            raise ValueError("thresholds must be non-negative")


@dataclass(frozen=True, eq=False)
class ModalSociogram:
    modality: Modality
    weights: np.ndarray
    directed: bool
    window: Window

    @property
    def n(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class FusionWeights:
    conv: float
    att: float
    prox: float

    def __post_init__(self):
        if min(self.conv, self.att, self.prox) < 0 or abs(self.conv + self.att + self.prox - 1) > 1e-9:
            raise ValueError(f"fusion weights must be non-negative and sum to 1: {self}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.conv, self.att, self.prox)

    def to_json(self) -> dict[str, float]:
        return {"alpha_conv": self.conv, "alpha_att": self.att, "alpha_prox": self.prox}

    @classmethod
    def uniform(cls) -> "FusionWeights":
        return cls(1 / 3, 1 / 3, 1 - 2 / 3)


@dataclass(frozen=True, eq=False)
class FusedSociogram:
    weights: np.ndarray
    window: Window
    fusion: FusionWeights
    directed: bool = True

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def build_conversation(s: AlignedSession, w: Window, th: Thresholds = Thresholds()) -> ModalSociogram:
    n = s.n
    W = np.zeros((n, n))
    for seg in s.base.speech:
        delta = clip_interval(seg.start, seg.end, w)
        if delta > 0 and delta >= th.min_speech:
            p = s.index(seg.speaker)
            W[p, :] += delta
            W[p, p] -= delta
    return ModalSociogram(Modality.CONVERSATION, W, True, w)


def joint_fixation_records(s: AlignedSession) -> dict[tuple[int, int], list[tuple[float, float, str]]]:
    """Same-object overlap intervals for every participant pair.

    Keys are matrix-index pairs ``(a, b)`` with ``a < b``; values are
    ``(start, end, object_id)`` rows sorted by start, one per overlapping
    fixation pair.
    """
    by_part: dict[int, dict[str, list[tuple[float, float]]]] = {}
    for fx in s.base.gaze:
        by_part.setdefault(s.index(fx.participant), {}).setdefault(fx.object_id, []).append(
            (fx.start, fx.end)
        )
    out: dict[tuple[int, int], list[tuple[float, float, str]]] = {}
    for a, b in combinations(range(s.n), 2):
        rows: list[tuple[float, float, str]] = []
        fa, fb = by_part.get(a, {}), by_part.get(b, {})
        for obj in sorted(set(fa) & set(fb)):
            ia = sorted(fa[obj])
            ib = np.array(sorted(fb[obj]), dtype=float)
            b_start = ib[:, 0]
            # running max of ends is monotone, so it can be bisected even when
            # one participant's fixations overlap each other
            b_reach = np.maximum.accumulate(ib[:, 1])
            for a0, a1 in ia:
                lo_k = int(np.searchsorted(b_reach, a0, side="right"))
                hi_k = int(np.searchsorted(b_start, a1, side="left"))
                for b0, b1 in ib[lo_k:hi_k]:
                    lo, hi = max(a0, float(b0)), min(a1, float(b1))
                    if hi > lo:
                        rows.append((lo, hi, obj))
        rows.sort()
        out[(a, b)] = rows
    return out


def joint_fixations(s: AlignedSession) -> dict[tuple[int, int], np.ndarray]:
    """Like :func:`joint_fixation_records` but as ``(m, 2)`` interval arrays."""
    return {
        k: np.array([(lo, hi) for lo, hi, _ in rows], dtype=float).reshape(-1, 2)
        for k, rows in joint_fixation_records(s).items()
    }


def build_attention(
    s: AlignedSession,
    w: Window,
    th: Thresholds = Thresholds(),
    joint: dict[tuple[int, int], np.ndarray] | None = None,
) -> ModalSociogram:
    if joint is None:
        joint = joint_fixations(s)
    W = np.zeros((s.n, s.n))
    for (a, b), iv in joint.items():
        if len(iv) == 0:
            continue
        delta = np.minimum(iv[:, 1], w.t1) - np.maximum(iv[:, 0], w.t0)
        keep = (delta > 0) & (delta >= th.min_gaze_overlap)
        total = float(np.sum(delta[keep]))
        W[a, b] = W[b, a] = total
    return ModalSociogram(Modality.ATTENTION, W, False, w)


def _close_masks(s: AlignedSession, max_dist: float) -> dict[tuple[int, int], np.ndarray]:
    parts = s.participants
    out = {}
    for a, b in combinations(range(s.n), 2):
        pa, pb = parts[a], parts[b]
        both = s.present[pa] & s.present[pb]
        d = np.linalg.norm(s.positions[pa] - s.positions[pb], axis=1)
        with np.errstate(invalid="ignore"):
            out[(a, b)] = both & (d <= max_dist)
    return out


def _grid_range(s: AlignedSession, w: Window) -> tuple[int, int]:
    """Start-sample indices ``k`` whose interval ``[g_k, g_k+1]`` lies inside ``w``."""
    dt = s.grid_dt
    eps = 1e-9
    k_lo = int(np.ceil(w.t0 / dt - eps))
    k_hi = int(np.floor(w.t1 / dt + eps)) - 1  # last start index: g_{k+1} <= t1
    k_hi = min(k_hi, len(s.grid) - 2)
    return max(k_lo, 0), k_hi


def build_proximity(
    s: AlignedSession,
    w: Window,
    th: Thresholds = Thresholds(),
    close: dict[tuple[int, int], np.ndarray] | None = None,
) -> ModalSociogram:
    if close is None:
        close = _close_masks(s, th.max_proximity_dist)
    W = np.zeros((s.n, s.n))
    k_lo, k_hi = _grid_range(s, w)
    if k_hi >= k_lo:
        for (a, b), mask in close.items():
            W[a, b] = W[b, a] = int(np.count_nonzero(mask[k_lo : k_hi + 1])) * s.grid_dt
    return ModalSociogram(Modality.PROXIMITY, W, False, w)


def build_window(
    s: AlignedSession,
    windows: Sequence[Window],
    th: Thresholds = Thresholds(),
) -> list[tuple[ModalSociogram, ModalSociogram, ModalSociogram]]:
    """Conversation, attention and proximity graphs for every window."""
    joint = joint_fixations(s)
    close = _close_masks(s, th.max_proximity_dist)
    return [
        (
            build_conversation(s, w, th),
            build_attention(s, w, th, joint),
            build_proximity(s, w, th, close),
        )
        for w in windows
    ]


# -- fusion --------------------------------------------------------------------


def session_totals(graphs: Iterable[ModalSociogram]) -> np.ndarray:
    """``(dyads, 3)`` matrix of summed edge weights, conversation symmetrized."""
    acc: dict[Modality, np.ndarray] = {}
    for g in graphs:
        W = g.weights + g.weights.T if g.directed else g.weights
        acc[g.modality] = acc.get(g.modality, 0) + W
    if not acc:
        raise ValueError("no sociograms given")
    n = next(iter(acc.values())).shape[0]
    iu = np.triu_indices(n, 1)
    cols = [acc.get(m, np.zeros((n, n)))[iu] for m in MODALITIES]
    return np.column_stack(cols)


def fusion_weights_from_totals(totals: np.ndarray, active: Sequence[bool] = (True, True, True)) -> FusionWeights:
    """PCA loadings of the z-scored columns, as shares summing to 1.

    Zero-variance or inactive columns get weight 0. When no column varies the
    weights fall back to uniform over the active columns.
    """
    X = np.asarray(totals, dtype=float)
    sd = X.std(axis=0)
    use = np.array([bool(a) for a in active]) & (sd > 1e-12)
    alpha = np.zeros(3)
    if X.shape[0] < 2 or not use.any():
        logger.warning("no modality varies across dyads; using uniform fusion weights")
        act = np.array([bool(a) for a in active], dtype=float)
        alpha = act / act.sum()
    elif use.sum() == 1:
        alpha[use] = 1.0
    else:
        Z = (X[:, use] - X[:, use].mean(axis=0)) / sd[use]
        _, _, vt = np.linalg.svd(Z, full_matrices=False)
        load = np.abs(vt[0])
        alpha[use] = load / load.sum()
    return FusionWeights(*(float(a) for a in _renormalize(alpha)))


def principal_component(totals: np.ndarray) -> tuple[np.ndarray, float]:
    """Signed PC1 loadings of the z-scored totals and its explained-variance share.

    Non-varying columns get loading 0; with no varying column the loadings
    are all 0 and the share is NaN.
    """
    X = np.asarray(totals, dtype=float)
    sd = X.std(axis=0)
    use = sd > 1e-12
    load = np.zeros(X.shape[1])
    if X.shape[0] < 2 or not use.any():
        return load, float("nan")
    Z = (X[:, use] - X[:, use].mean(axis=0)) / sd[use]
    _, sv, vt = np.linalg.svd(Z, full_matrices=False)
    v = vt[0] if vt[0][np.argmax(np.abs(vt[0]))] >= 0 else -vt[0]
    load[use] = v
    return load, float(sv[0] ** 2 / np.sum(sv**2))


def _renormalize(alpha: np.ndarray) -> np.ndarray:
    alpha = alpha / alpha.sum()
    alpha[-1] = 1.0 - alpha[:-1].sum()
    return np.clip(alpha, 0.0, 1.0)


def compute_fusion_weights(
    graphs: Iterable[ModalSociogram], drop: Modality | None = None
) -> FusionWeights:
    active = [m != drop for m in MODALITIES]
    return fusion_weights_from_totals(session_totals(graphs), active)


def minmax_normalize(W: np.ndarray) -> np.ndarray:
    """Scale off-diagonal entries to [0, 1]; the diagonal is kept at zero."""
    n = W.shape[0]
    off = ~np.eye(n, dtype=bool)
    vals = W[off]
    out = np.zeros_like(W, dtype=float)
    if vals.size == 0:
        return out
    lo, hi = vals.min(), vals.max()
    if hi > lo:
        out[off] = (vals - lo) / (hi - lo)
    elif hi > 0:
        out[off] = 1.0
    return out


def fuse(graphs: Sequence[ModalSociogram], fw: FusionWeights) -> FusedSociogram:
    by_mod = {g.modality: g for g in graphs}
    if set(by_mod) != set(MODALITIES) or len(graphs) != 3:
        raise ValueError("fuse needs exactly one graph per modality")
    ref = graphs[0]
    for g in graphs:
        if g.weights.shape != ref.weights.shape or g.window != ref.window:
            raise ValueError("graphs to fuse must share window and participant count")
    out = np.zeros_like(ref.weights, dtype=float)
    for m, a in zip(MODALITIES, fw.as_tuple()):
        if a:
            out += a * minmax_normalize(by_mod[m].weights)
    return FusedSociogram(out, ref.window, fw)
