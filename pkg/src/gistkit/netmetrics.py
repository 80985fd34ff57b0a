"""Network metrics on sociograms and the three-tier value scale."""

from __future__ import annotations

import enum
import logging
import math
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "Tier",
    "TierMode",
    "eigenvector_centrality",
    "density",
    "avg_clustering",
    "reciprocity",
    "classify_tier",
    "graph_metrics",
]


class Tier(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2

    def __str__(self) -> str:
        return self.name.lower()


class TierMode(str, enum.Enum):
    PERCENTILE = "percentile"
    FIXED = "fixed"
    ZSCORE = "zscore"


def _matrix(g) -> tuple[np.ndarray, bool]:
    if isinstance(g, np.ndarray):
        W = g
        directed = not np.array_equal(W, W.T)
    else:
        W, directed = g.weights, g.directed
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("adjacency must be square")
    return W, directed


def eigenvector_centrality(g, tol: float = 1e-10, max_iter: int = 1000) -> np.ndarray:
    """Principal eigenvector of the symmetrized weight matrix.

    Directed graphs are symmetrized as ``W + W.T``. Iteration runs on the
    shifted matrix ``A + I`` so bipartite graphs (stars, paths) converge
    instead of oscillating; the shift leaves eigenvectors unchanged. If the
    iteration has not converged after ``max_iter`` steps the leading
    eigenvector comes from a dense symmetric eigensolver instead.
    """
    W, directed = _matrix(g)
    A = W + W.T if directed else W.copy()
    n = A.shape[0]
    scale = A.max() if A.size else 0.0
    if scale <= 0:
        logger.info("eigenvector centrality on an edgeless graph; returning uniform scores")
        return np.full(n, 1.0 / math.sqrt(n))
    A = A / scale
    x = np.full(n, 1.0 / math.sqrt(n))
    for _ in range(max_iter):
        y = A @ x + x
        y /= np.linalg.norm(y)
        done = np.max(np.abs(y - x)) < tol
        x = y
        if done:
            break
    else:
        # near-equal leading eigenvalues stall the iteration; graphs are small
        logger.info("power iteration hit %d iterations; finishing with a dense eigensolver", max_iter)
        vals, vecs = np.linalg.eigh(A)
        x = vecs[:, np.argmax(vals)]
    x = np.abs(x)
    return x / np.linalg.norm(x)


def density(g) -> float:
    W, directed = _matrix(g)
    n = W.shape[0]
    if n < 2:
        raise ValueError("density needs at least 2 nodes")
    off = ~np.eye(n, dtype=bool)
    if directed:
        return float(np.count_nonzero(W[off] > 0)) / (n * (n - 1))
    iu = np.triu_indices(n, 1)
    return float(np.count_nonzero(W[iu] > 0)) / (n * (n - 1) / 2)


def avg_clustering(g) -> float:
    """Mean local clustering coefficient of the binarized undirected graph."""
    W, directed = _matrix(g)
    if directed:
        raise ValueError("average clustering is defined here for undirected graphs only")
    B = (W > 0).astype(float)
    np.fill_diagonal(B, 0)
    deg = B.sum(axis=1)
    tri = np.diag(B @ B @ B) / 2
    with np.errstate(invalid="ignore", divide="ignore"):
        local = np.where(deg >= 2, tri / (deg * (deg - 1) / 2), 0.0)
    return float(local.mean())


def reciprocity(g) -> float:
    """Share of directed edges whose reverse edge is also present."""
    W, directed = _matrix(g)
    if not directed and not isinstance(g, np.ndarray):
        raise ValueError("reciprocity is defined for directed graphs only")
    B = W > 0
    np.fill_diagonal(B, False)
    total = np.count_nonzero(B)
    if total == 0:
        return 0.0
    return float(np.count_nonzero(B & B.T)) / total


def graph_metrics(g, modality: str) -> dict[str, float | np.ndarray]:
    """The metric set used for a given modality (conversation, attention, proximity, fused)."""
    out: dict[str, float | np.ndarray] = {"eigenvector": eigenvector_centrality(g), "density": density(g)}
    if modality in ("conversation", "fused"):
        out["reciprocity"] = reciprocity(g)
    if modality in ("attention", "proximity"):
        out["avg_clustering"] = avg_clustering(g)
    return out


def _fixed_tier(v: float, n: int) -> Tier:
    high = 0.50 if n <= 4 else 0.60
    if v >= high:
        return Tier.HIGH
    if v >= 0.30:
        return Tier.MEDIUM
    return Tier.LOW


def classify_tier(values: Sequence[float], mode: TierMode | str, n: int | None = None) -> list[Tier]:
    """Map values to Low/Medium/High.

    ``percentile``: top 20% by rank are High, bottom 40% Low; tied values
    are ranked in input order, so earlier duplicates land in the lower tier.
    ``fixed``: bounded metrics on [0, 1] with Low below 0.30, Medium up to
    the high cut and High from 0.60 (0.50 when the group size ``n`` is at
    most 4). ``zscore``: High at z >= +1, Low at
    z <= -1 using the sample mean and SD of ``values``.
    """
    mode = TierMode(mode)
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("classify_tier needs at least one value")
    if mode is TierMode.FIXED:
        if n is None:
            raise ValueError("fixed-bound tiers need the group size n")
        bad = [v for v in vals if not 0.0 <= v <= 1.0]
        if bad:
            raise ValueError(f"fixed-bound tiers need values in [0, 1], got {bad[:3]}")
        return [_fixed_tier(v, n) for v in vals]
    if mode is TierMode.ZSCORE:
        arr = np.array(vals)
        sd = arr.std(ddof=1) if len(arr) > 1 else 0.0
        if not sd > 0:
            return [Tier.MEDIUM] * len(vals)
        z = (arr - arr.mean()) / sd
        return [Tier.HIGH if zi >= 1 else Tier.LOW if zi <= -1 else Tier.MEDIUM for zi in z]
    m = len(vals)
    # stable sort: among equal values the earlier input gets the lower rank
    order = sorted(range(m), key=lambda k: vals[k])
    rank = [0] * m
    for r, k in enumerate(order):
        rank[k] = r
    out = []
    for r in rank:
        # integer comparisons of r/m against 0.4 and 0.8
        if 5 * r < 2 * m:
            out.append(Tier.LOW)
        elif 5 * r >= 4 * m:
            out.append(Tier.HIGH)
        else:
            out.append(Tier.MEDIUM)
    return out
