"""Per-second dyadic features, per-dyad z-normalization, pruning and T x F segments.

Speech state definitions used throughout:

* ``entropy_speaking`` is the base-2 Shannon entropy of the four exclusive
  dyad states {only-i, only-j, both, neither} sampled every 0.1 s within a bin.
* ``dominance_ratio`` is ``|t_i - t_j| / (t_i + t_j)`` over speaking time in
  the bin, 0 when neither speaks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .sociogram import joint_fixation_records
from .sync import AlignedSession, Window, make_windows

logger = logging.getLogger(__name__)

__all__ = [
    "CANDIDATES",
    "RETAINED_DEFAULT",
    "DyadSeries",
    "FeatureSegment",
    "dyads",
    "extract_candidates",
    "extract_dyad_series",
    "extract_session",
    "znormalize",
    "prune_features",
    "build_segments",
    "segment_means",
]

RETAINED_DEFAULT = (
    "entropy_speaking",
    "dominance_ratio",
    "material_diversity",
    "dist_mean",
    "prox_binary",
    "approach_rate",
    "shared_att_cnt",
)

# Canonical order. Correlation pruning keeps the earlier member of a pair.
CANDIDATES = RETAINED_DEFAULT + (
    "speak_time_i",
    "speak_time_j",
    "speak_time_total",
    "turn_count",
    "overlap_rate",
    "silence_frac",
    "mean_turn_len",
    "shared_att_dur",
    "mean_inter_fixation",
    "longest_joint_fix",
    "dist_min",
    "dist_std",
    "approach_sign_changes",
    "rel_speed_mean",
)

PROXIMITY_FEATURES = (
    "dist_mean",
    "prox_binary",
    "approach_rate",
    "dist_min",
    "dist_std",
    "approach_sign_changes",
    "rel_speed_mean",
)

BIN = 1.0
STATE_DT = 0.1
_COL = {name: k for k, name in enumerate(CANDIDATES)}


def dyads(participants: Sequence[int]) -> list[tuple[int, int]]:
    return [(i, j) for i, j in combinations(sorted(participants), 2)]


@dataclass(frozen=True, eq=False)
class DyadSeries:
    """Raw candidate features of one dyad, one row per 1 s bin (NaN = absent)."""

    session: str
    dyad: tuple[int, int]
    raw: np.ndarray
    names: tuple[str, ...] = CANDIDATES

    @property
    def n_bins(self) -> int:
        return self.raw.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.raw[:, self.names.index(name)]


@dataclass(frozen=True, eq=False)
class FeatureSegment:
    session: str
    dyad: tuple[int, int]
    window: Window
    matrix: np.ndarray  # (T, F)
    names: tuple[str, ...]


def _speaking_at(starts: np.ndarray, ends: np.ndarray, t: np.ndarray) -> np.ndarray:
    if len(starts) == 0:
        return np.zeros(t.shape, dtype=bool)
    idx = np.searchsorted(starts, t, side="right") - 1
    ok = idx >= 0
    out = np.zeros(t.shape, dtype=bool)
    out[ok] = t[ok] < ends[idx[ok]]
    return out


def _entropy_rows(counts: np.ndarray) -> np.ndarray:
    total = counts.sum(axis=1, keepdims=True)
    p = counts / np.where(total == 0, 1, total)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log2(p), 0.0).sum(axis=1)
    return h + 0.0  # normalizes -0.0


def _speech_block(s: AlignedSession, dyad: tuple[int, int], bins: np.ndarray) -> dict[str, np.ndarray]:
    nb = len(bins)
    segs = {p: sorted((x.start, x.end) for x in s.base.speech if x.speaker == p) for p in dyad}
    speak = {}
    for p in dyad:
        tot = np.zeros(nb)
        for a, b in segs[p]:
            k0 = max(int(math.floor(a)), 0)
            k1 = int(math.ceil(b))
            for k in range(k0, k1):
                pos = k - int(bins[0]) if nb else 0
                if 0 <= pos < nb:
                    tot[pos] += max(0.0, min(b, bins[pos] + BIN) - max(a, bins[pos]))
        speak[p] = tot
    per_bin = int(round(BIN / STATE_DT))
    t = (bins[:, None] + (np.arange(per_bin)[None, :] + 0.5) * STATE_DT).ravel()
    on = {}
    for p in dyad:
        arr = np.array(segs[p], dtype=float).reshape(-1, 2)
        on[p] = _speaking_at(arr[:, 0], arr[:, 1], t).reshape(nb, per_bin)
    i, j = dyad
    only_i = (on[i] & ~on[j]).sum(axis=1)
    only_j = (~on[i] & on[j]).sum(axis=1)
    both = (on[i] & on[j]).sum(axis=1)
    neither = (~on[i] & ~on[j]).sum(axis=1)
    counts = np.stack([only_i, only_j, both, neither], axis=1).astype(float)

    ti, tj = speak[i], speak[j]
    tsum = ti + tj
    with np.errstate(invalid="ignore", divide="ignore"):
        dom = np.where(tsum > 0, np.abs(ti - tj) / np.where(tsum > 0, tsum, 1), 0.0)

    turns = np.zeros(nb)
    turn_len_sum = np.zeros(nb)
    turn_len_n = np.zeros(nb)
    for p in dyad:
        for a, b in segs[p]:
            k = int(math.floor(a)) - int(bins[0]) if nb else 0
            if 0 <= k < nb and a >= bins[k]:
                turns[k] += 1
            for kk in range(max(int(math.floor(a)), 0), int(math.ceil(b))):
                pos = kk - int(bins[0]) if nb else 0
                if 0 <= pos < nb:
                    c = min(b, bins[pos] + BIN) - max(a, bins[pos])
                    if c > 0:
                        turn_len_sum[pos] += c
                        turn_len_n[pos] += 1
    mean_turn = np.where(turn_len_n > 0, turn_len_sum / np.maximum(turn_len_n, 1), 0.0)
    return {
        "entropy_speaking": _entropy_rows(counts),
        "dominance_ratio": dom,
        "speak_time_i": ti,
        "speak_time_j": tj,
        "speak_time_total": tsum,
        "turn_count": turns,
        "overlap_rate": both / per_bin,
        "silence_frac": neither / per_bin,
        "mean_turn_len": mean_turn,
    }


def _attention_block(
    joint: list[tuple[float, float, str]], bins: np.ndarray, min_overlap: float
) -> dict[str, np.ndarray]:
    nb = len(bins)
    b0 = int(bins[0]) if nb else 0
    per_bin: list[list[tuple[float, float, str]]] = [[] for _ in range(nb)]
    for lo, hi, obj in joint:
        for k in range(max(int(math.floor(lo)), b0), int(math.ceil(hi))):
            pos = k - b0
            if pos >= nb:
                break
            a, b = max(lo, bins[pos]), min(hi, bins[pos] + BIN)
            d = b - a
            if d > 0 and d >= min_overlap:
                per_bin[pos].append((a, b, obj))
    cnt = np.zeros(nb)
    dur = np.zeros(nb)
    div = np.zeros(nb)
    longest = np.zeros(nb)
    gap = np.full(nb, BIN)
    for pos, rows in enumerate(per_bin):
        if not rows:
            continue
        cnt[pos] = len(rows)
        lens = [b - a for a, b, _ in rows]
        dur[pos] = sum(lens)
        longest[pos] = max(lens)
        div[pos] = len({obj for _, _, obj in rows})
        if len(rows) > 1:
            rows = sorted(rows)
            gaps = [max(0.0, rows[k + 1][0] - rows[k][1]) for k in range(len(rows) - 1)]
            gap[pos] = sum(gaps) / len(gaps)
    return {
        "shared_att_cnt": cnt,
        "shared_att_dur": dur,
        "material_diversity": div,
        "longest_joint_fix": longest,
        "mean_inter_fixation": gap,
    }


def _proximity_block(
    s: AlignedSession, dyad: tuple[int, int], bins: np.ndarray, max_dist: float
) -> dict[str, np.ndarray]:
    nb = len(bins)
    dt = s.grid_dt
    spb = BIN / dt
    if abs(spb - round(spb)) > 1e-9:
        raise ValueError(f"grid_dt {dt} must divide the 1 s feature bin")
    spb = int(round(spb))
    i, j = dyad
    rel = s.positions[i] - s.positions[j]
    ok = s.present[i] & s.present[j]
    n = len(s.grid)
    out = {name: np.full(nb, np.nan) for name in PROXIMITY_FEATURES}
    for pos in range(nb):
        k0 = int(round(bins[pos] / dt))
        k1 = min(k0 + spb + 1, n)  # samples of the bin plus the next bin's first
        if k0 + spb > n or not ok[k0:k1].all():
            continue
        r = rel[k0:k1]
        d = np.linalg.norm(r, axis=1)
        inbin = d[:spb]
        out["dist_mean"][pos] = inbin.mean()
        out["dist_min"][pos] = inbin.min()
        out["dist_std"][pos] = inbin.std()
        out["prox_binary"][pos] = np.count_nonzero(inbin <= max_dist) / spb
        dd = np.diff(d)
        if len(dd):
            out["approach_rate"][pos] = dd.mean() / dt
            sg = np.sign(dd[dd != 0])
            out["approach_sign_changes"][pos] = np.count_nonzero(sg[1:] != sg[:-1])
            out["rel_speed_mean"][pos] = np.linalg.norm(np.diff(r, axis=0), axis=1).mean() / dt
        else:
            out["approach_rate"][pos] = 0.0
            out["approach_sign_changes"][pos] = 0.0
            out["rel_speed_mean"][pos] = 0.0
    return out


def _n_bins(s: AlignedSession) -> int:
    return int(math.floor(s.span() / BIN + 1e-9))


def extract_dyad_series(
    s: AlignedSession,
    dyad: tuple[int, int],
    bins: np.ndarray | None = None,
    *,
    min_gaze_overlap: float = 0.013,
    max_proximity_dist: float = 1.5,
    joint: dict | None = None,
) -> DyadSeries:
    """All candidate features for one dyad over the given bin starts (default: every bin)."""
    i, j = sorted(dyad)
    if bins is None:
        bins = np.arange(_n_bins(s), dtype=float)
    bins = np.asarray(bins, dtype=float)
    if joint is None:
        joint = joint_fixation_records(s)
    a, b = s.index(i), s.index(j)
    cols: dict[str, np.ndarray] = {}
    cols.update(_speech_block(s, (i, j), bins))
    cols.update(_attention_block(joint[(min(a, b), max(a, b))], bins, min_gaze_overlap))
    cols.update(_proximity_block(s, (i, j), bins, max_proximity_dist))
    raw = np.column_stack([cols[name] for name in CANDIDATES]) if len(bins) else np.zeros((0, len(CANDIDATES)))
    return DyadSeries(s.base.session_id, (i, j), raw)


def extract_candidates(s: AlignedSession, dyad: tuple[int, int], t: float, **kw) -> dict[str, float]:
    """Candidate feature values of the 1 s bin starting at integer second ``t``."""
    if t < 0 or t + BIN > s.span() + 1e-9:
        raise ValueError(f"bin starting at {t} lies outside the session span")
    series = extract_dyad_series(s, dyad, np.array([float(math.floor(t))]), **kw)
    return {name: float(v) for name, v in zip(series.names, series.raw[0])}


def extract_session(
    s: AlignedSession, *, min_gaze_overlap: float = 0.013, max_proximity_dist: float = 1.5
) -> list[DyadSeries]:
    joint = joint_fixation_records(s)
    return [
        extract_dyad_series(
            s, d, min_gaze_overlap=min_gaze_overlap, max_proximity_dist=max_proximity_dist, joint=joint
        )
        for d in dyads(s.participants)
    ]


def znormalize(raw: np.ndarray) -> np.ndarray:
    """Column-wise z-scores with population SD; constant columns become 0 and
    absent (NaN) entries are imputed with 0 afterwards."""
    X = np.asarray(raw, dtype=float)
    if X.ndim == 1:
        return znormalize(X[:, None])[:, 0]
    if X.shape[0] < 2:
        raise ValueError("z-normalization needs at least 2 rows")
    out = np.zeros_like(X)
    for c in range(X.shape[1]):
        col = X[:, c]
        good = ~np.isnan(col)
        if good.sum() < 2:
            continue
        mu = col[good].mean()
        sd = col[good].std()
        if sd < 1e-12:
            continue
        out[good, c] = (col[good] - mu) / sd
    return out


def prune_features(
    raw: Sequence[np.ndarray],
    normalized: Sequence[np.ndarray],
    k_clusters_hint: int = 4,
    *,
    names: Sequence[str] = CANDIDATES,
    min_keep: int = 7,
    seed: int = 0,
    sample_cap: int = 5000,
    var_tol: float = 1e-8,
    corr_tol: float = 0.95,
    sil_tol: float = 1e-3,
) -> list[str]:
    """Three-stage pruning: low variance, |r| >= 0.95 redundancy, silhouette ablation.

    ``raw`` and ``normalized`` hold one ``(bins, features)`` array per dyad.
    Stage 3 clusters the pooled per-bin vectors (subsampled to ``sample_cap``
    rows) and drops, least important first, the features whose removal costs
    no more than ``sil_tol`` of silhouette, keeping at least ``min_keep``.
    """
    from .deepcluster.cluster import kmeans, silhouette

    names = list(names)
    R = np.vstack(raw)
    Z = np.vstack(normalized)
    if len(names) < 2:
        raise ValueError("pruning needs at least two candidate features")
    with np.errstate(invalid="ignore"):
        var = np.nanvar(R, axis=0)
    keep = [k for k in range(len(names)) if np.isfinite(var[k]) and var[k] >= var_tol]
    dropped_var = [names[k] for k in range(len(names)) if k not in keep]
    if dropped_var:
        logger.info("dropped low-variance features: %s", dropped_var)

    corr = np.corrcoef(Z[:, keep], rowvar=False) if len(keep) > 1 else np.ones((1, 1))
    corr = np.nan_to_num(corr)
    survivors: list[int] = []
    for pos, k in enumerate(keep):
        if any(abs(corr[pos, keep.index(q)]) >= corr_tol for q in survivors):
            logger.info("dropped correlated feature: %s", names[k])
            continue
        survivors.append(k)
    if len(survivors) < min_keep:
        logger.warning("only %d features survive variance/correlation pruning", len(survivors))
        return [names[k] for k in survivors]
    if len(survivors) == min_keep:
        return [names[k] for k in survivors]

    rng = np.random.default_rng(seed)
    rows = np.arange(Z.shape[0])
    if len(rows) > sample_cap:
        rows = np.sort(rng.choice(rows, size=sample_cap, replace=False))
    X = Z[rows]

    def score(cols: list[int]) -> float:
        res = kmeans(X[:, cols], k_clusters_hint, restarts=5, seed=seed)
        if len(np.unique(res.labels)) < 2:
            return -1.0
        return silhouette(X[:, cols], res.labels)

    base = score(survivors)
    drops = []
    for k in survivors:
        rest = [q for q in survivors if q != k]
        drops.append((base - score(rest), survivors.index(k), k))
    drops.sort()
    removable = [k for d, _, k in drops if d <= sil_tol]
    n_remove = min(len(removable), len(survivors) - min_keep)
    gone = set(removable[:n_remove])
    if gone:
        logger.info("dropped low-importance features: %s", [names[k] for k in sorted(gone)])
    return [names[k] for k in survivors if k not in gone]


def build_segments(
    series: Sequence[DyadSeries],
    normalized: Sequence[np.ndarray],
    retained: Sequence[str],
    windows: Sequence[Window] | None = None,
    *,
    window_len: float = 32.0,
    stride: float = 16.0,
) -> list[FeatureSegment]:
    """One ``T x F`` segment per (dyad, window); bins ``[t0, t1)``."""
    out = []
    for ds, Z in zip(series, normalized):
        wins = windows if windows is not None else make_windows(ds.n_bins * BIN, window_len, stride)
        cols = [ds.names.index(n) for n in retained]
        for w in wins:
            a = int(round(w.t0 / BIN))
            b = int(round(w.t1 / BIN))
            if b > Z.shape[0]:
                continue
            out.append(FeatureSegment(ds.session, ds.dyad, w, Z[a:b][:, cols].copy(), tuple(retained)))
    return out


def segment_means(
    normalized: np.ndarray, window: Window, names: Sequence[str], all_names: Sequence[str] = CANDIDATES
) -> dict[str, float]:
    """Mean z-value of each named feature over the window's bins."""
    a = int(round(window.t0 / BIN))
    b = int(round(window.t1 / BIN))
    block = normalized[a:b]
    return {n: float(block[:, list(all_names).index(n)].mean()) for n in names}
