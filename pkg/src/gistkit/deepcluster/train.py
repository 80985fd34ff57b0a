"""Joint autoencoder/K-means training, lambda sweep, k selection and checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations, product
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .cluster import FAST_EVAL_CAP, ari, assign, kmeans, silhouette
from .model import ConvRecAutoencoder, EncoderConfig, composite_loss

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "ClusterModel",
    "TrainingDivergedError",
    "pretrain",
    "train",
    "select_k",
    "lambda_sweep",
    "grid_search",
    "encode_array",
    "LAMBDA_GRID",
]

LAMBDA_GRID = (0.3, 0.5, 0.7)
# elbow scores within this fraction of the best eligible score count as "at the elbow"
ELBOW_TOL = 0.25
ELBOW_RESTARTS = 5
ENCODE_CHUNK = 256


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.5
    lr: float = 1e-3
    pretrain_epochs: int = 30
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    k: int | None = None  # None = choose automatically
    restarts: int = 20
    refit_restarts: int = 3
    fast_eval: bool = True
    fast_eval_cap: int = FAST_EVAL_CAP

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be positive")


@dataclass(eq=False)
class ClusterModel:
    enc_cfg: EncoderConfig
    train_cfg: TrainConfig
    k: int
    state: dict[str, torch.Tensor]
    centroids: np.ndarray
    labels: np.ndarray
    silhouette: float
    inertia: float
    rec_error: float
    history: list[dict[str, float]] = field(default_factory=list)
    feature_names: tuple[str, ...] = ()
    stability_ari: float | None = None

    def network(self) -> ConvRecAutoencoder:
        net = ConvRecAutoencoder(self.enc_cfg)
        net.load_state_dict(self.state)
        net.eval()
        return net

    def encode(self, X: np.ndarray) -> np.ndarray:
        return encode_array(self.network(), X)

    def decode(self, Z: np.ndarray) -> np.ndarray:
        net = self.network()
        with torch.no_grad():
            return net.decode(torch.as_tensor(np.asarray(Z), dtype=torch.float32)).numpy()

    def predict(self, X: np.ndarray) -> np.ndarray:
        return assign(self.encode(X), self.centroids)

    # -- checkpoint ---------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": "gistkit-model/1",
            "encoder": self.enc_cfg.to_json(),
            "train": asdict(self.train_cfg),
            "seed": self.train_cfg.seed,
            "k": self.k,
            "lambda": self.train_cfg.lam,
            "feature_names": list(self.feature_names),
            "params": {
                name: {"shape": list(t.shape), "data": [float(v) for v in t.flatten().tolist()]}
                for name, t in self.state.items()
            },
            "centroids": self.centroids.tolist(),
            "labels": self.labels.tolist(),
            "quality": {
                "silhouette": self.silhouette,
                "inertia": self.inertia,
                "rec_error": self.rec_error,
                "stability_ari": self.stability_ari,
            },
            "history": self.history,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, d: dict) -> "ClusterModel":
        if d.get("format") != "gistkit-model/1":
            raise ValueError("not a gistkit model checkpoint")
        state = {
            name: torch.tensor(p["data"], dtype=torch.float32).reshape(p["shape"])
            for name, p in d["params"].items()
        }
        q = d["quality"]
        return cls(
            enc_cfg=EncoderConfig.from_json(d["encoder"]),
            train_cfg=TrainConfig(**d["train"]),
            k=int(d["k"]),
            state=state,
            centroids=np.array(d["centroids"], dtype=float),
            labels=np.array(d["labels"], dtype=int),
            silhouette=q["silhouette"],
            inertia=q["inertia"],
            rec_error=q["rec_error"],
            history=list(d.get("history", [])),
            feature_names=tuple(d.get("feature_names", ())),
            stability_ari=q.get("stability_ari"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ClusterModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def encode_array(net: ConvRecAutoencoder, X: np.ndarray) -> np.ndarray:
    net.eval()
    dtype = next(net.parameters()).dtype
    out = []
    with torch.no_grad():
        for a in range(0, len(X), ENCODE_CHUNK):
            out.append(net.encode(torch.as_tensor(np.asarray(X[a : a + ENCODE_CHUNK]), dtype=dtype)))
    if not out:
        return np.zeros((0, net.cfg.latent_dim))
    return torch.cat(out).double().numpy()


def _reconstruction_error(net: ConvRecAutoencoder, X: np.ndarray) -> float:
    net.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for a in range(0, len(X), ENCODE_CHUNK):
            xb = torch.as_tensor(X[a : a + ENCODE_CHUNK], dtype=torch.float32)
            _, r = net(xb)
            total += float(((xb - r) ** 2).sum())
            count += xb.numel()
    return total / max(count, 1)


def _epoch(
    net: ConvRecAutoencoder,
    opt: torch.optim.Optimizer,
    X: torch.Tensor,
    cfg: TrainConfig,
    gen: torch.Generator,
    lam: float,
    centroids: torch.Tensor | None,
    epoch: int,
) -> dict[str, float]:
    net.train()
    order = torch.randperm(len(X), generator=gen)
    sums = {"loss": 0.0, "rec": 0.0, "clu": 0.0}
    for a in range(0, len(X), cfg.batch_size):
        xb = X[order[a : a + cfg.batch_size]]
        z, r = net(xb)
        loss, rec, clu = composite_loss(xb, r, z, centroids, lam)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(epoch, loss.item())
        opt.zero_grad()
        loss.backward()
        opt.step()
        w = len(xb) / len(X)
        sums["loss"] += loss.item() * w
        sums["rec"] += rec.item() * w
        sums["clu"] += clu.item() * w
    return sums


def _as_array(segments) -> np.ndarray:
    if isinstance(segments, np.ndarray):
        return segments.astype(np.float32)
    return np.stack([s.matrix for s in segments]).astype(np.float32)


def pretrain(X: np.ndarray, enc_cfg: EncoderConfig, cfg: TrainConfig) -> tuple[dict, list[dict]]:
    """Plain autoencoder training (lambda = 0); returns the state dict and loss curve."""
    torch.manual_seed(cfg.seed)
    net = ConvRecAutoencoder(enc_cfg)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    Xt = torch.as_tensor(X, dtype=torch.float32)
    history = []
    for ep in range(cfg.pretrain_epochs):
        stats = _epoch(net, opt, Xt, cfg, gen, 0.0, None, ep)
        history.append({"phase": "pretrain", "epoch": ep, **stats})
    return {k: v.clone() for k, v in net.state_dict().items()}, history


def train(
    segments,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    *,
    pretrained: tuple[dict, list[dict]] | None = None,
    feature_names: Sequence[str] = (),
) -> ClusterModel:
    """Train the autoencoder jointly with K-means.

    After ``pretrain_epochs`` of reconstruction-only training, every epoch
    re-fits K-means on the current latents and then takes gradient steps on
    the composite loss with those centroids held fixed.
    """
    X = _as_array(segments)
    k = cfg.k
    if k is None:
        raise ValueError("train needs an explicit k; use select_k for automatic choice")
    if k > len(X):
        raise ValueError(f"k={k} exceeds the number of segments ({len(X)})")
    if pretrained is None:
        pretrained = pretrain(X, enc_cfg, cfg)
    state, history = pretrained
    history = list(history)
    torch.manual_seed(cfg.seed + 1)
    net = ConvRecAutoencoder(enc_cfg)
    net.load_state_dict(state)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    Xt = torch.as_tensor(X, dtype=torch.float32)
    centroids = None
    for ep in range(cfg.epochs):
        cent_t = None
        if cfg.lam > 0:
            Z = encode_array(net, X)
            km = kmeans(Z, k, restarts=cfg.refit_restarts, seed=cfg.seed + ep, init=centroids)
            centroids = km.centroids
            cent_t = torch.as_tensor(centroids, dtype=torch.float32)
        stats = _epoch(net, opt, Xt, cfg, gen, cfg.lam, cent_t, ep)
        history.append({"phase": "joint", "epoch": ep, **stats})

    net.eval()
    Z = encode_array(net, X)
    km = kmeans(Z, k, restarts=cfg.restarts, seed=cfg.seed, init=centroids)
    labels = km.labels
    sil = float("nan")
    if len(np.unique(labels)) > 1:
        sil = silhouette(Z, labels, fast=cfg.fast_eval, cap=cfg.fast_eval_cap, seed=cfg.seed)
    return ClusterModel(
        enc_cfg=enc_cfg,
        train_cfg=cfg,
        k=k,
        state={n: t.detach().clone() for n, t in net.state_dict().items()},
        centroids=km.centroids,
        labels=labels,
        silhouette=sil,
        inertia=float(((Z - km.centroids[labels]) ** 2).sum()),
        rec_error=_reconstruction_error(net, X),
        history=history,
        feature_names=tuple(feature_names),
    )


def _mean_pairwise_ari(labelings: Sequence[np.ndarray], fast: bool, cap: int, seed: int) -> float:
    if len(labelings) < 2:
        return 1.0
    rows = np.arange(len(labelings[0]))
    if fast and len(rows) > cap:
        rows = np.sort(np.random.default_rng(seed).choice(rows, size=cap, replace=False))
    return float(np.mean([ari(a[rows], b[rows]) for a, b in combinations(labelings, 2)]))


@dataclass
class KSelection:
    k: int
    low_confidence: bool
    k_values: list[int]
    inertia_ratio: list[float]
    elbow_score: list[float]
    stability: list[float]
    models: dict[int, list[ClusterModel]] = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "low_confidence": self.low_confidence,
            "k_values": self.k_values,
            "inertia_ratio": self.inertia_ratio,
            "elbow_score": self.elbow_score,
            "stability_ari": self.stability,
        }


def _elbow_scores(ks: list[int], ratio: list[float]) -> list[float]:
    """Second difference of the min-max normalized inertia curve at each k.

    The curve is extended with ratio 1.0 at k - 1 when the range starts at 2
    (one cluster explains nothing); the last k has no right neighbour and
    scores -inf.
    """
    curve = dict(zip(ks, ratio))
    if ks[0] - 1 >= 1 and ks[0] - 1 not in curve:
        curve[ks[0] - 1] = 1.0 if ks[0] - 1 == 1 else float("nan")
    keys = sorted(curve)
    vals = np.array([curve[k] for k in keys])
    finite = vals[np.isfinite(vals)]
    lo, hi = finite.min(), finite.max()
    norm = (vals - lo) / (hi - lo) if hi > lo else np.zeros_like(vals)
    normd = dict(zip(keys, norm))
    out = []
    for k in ks:
        if k - 1 in normd and k + 1 in normd and np.isfinite(normd[k - 1]):
            out.append(float(normd[k - 1] - 2 * normd[k] + normd[k + 1]))
        else:
            out.append(float("-inf"))
    return out


def _embedding_ratios(Z: np.ndarray, ks: Sequence[int], seed: int) -> list[float]:
    """K-means inertia over total sum of squares for each k on one fixed embedding."""
    total = float(((Z - Z.mean(axis=0)) ** 2).sum())
    if total <= 0:
        return [0.0 for _ in ks]
    return [kmeans(Z, k, restarts=ELBOW_RESTARTS, seed=seed).inertia / total for k in ks]


def select_k(
    segments,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    k_range: Sequence[int] = range(2, 11),
    n_seeds: int = 3,
    ari_gate: float = 0.8,
    feature_names: Sequence[str] = (),
) -> KSelection:
    """Stability-informed elbow.

    The inertia curve is measured on each seed's pretrained (reconstruction
    only) embedding, which is shared by every k and therefore comparable
    across k; the curves are averaged over seeds. Stability is the mean
    pairwise cross-seed ARI of the jointly trained models at each k. Among k
    that pass the ARI gate, those whose elbow score is within ``ELBOW_TOL``
    of the best are at the elbow and the largest of them is chosen. If no k
    passes, the most stable k is returned and flagged.
    """
    X = _as_array(segments)
    ks = sorted(int(k) for k in k_range)
    if not ks:
        raise ValueError("k_range must not be empty")
    ks = [k for k in ks if k <= len(X)]
    seeds = [cfg.seed + s for s in range(n_seeds)]
    pre = {s: pretrain(X, enc_cfg, replace(cfg, seed=s)) for s in seeds}
    curves = []
    for s in seeds:
        net = ConvRecAutoencoder(enc_cfg)
        net.load_state_dict(pre[s][0])
        curves.append(_embedding_ratios(encode_array(net, X), ks, s))
    ratio = [float(v) for v in np.mean(curves, axis=0)]
    models: dict[int, list[ClusterModel]] = {}
    stability = []
    for k, r in zip(ks, ratio):
        runs = [
            train(X, enc_cfg, replace(cfg, seed=s, k=k), pretrained=pre[s], feature_names=feature_names)
            for s in seeds
        ]
        models[k] = runs
        stability.append(_mean_pairwise_ari([m.labels for m in runs], cfg.fast_eval, cfg.fast_eval_cap, cfg.seed))
        logger.info("k=%d inertia ratio %.4f stability ARI %.3f", k, r, stability[-1])
    elbow = _elbow_scores(ks, ratio)
    eligible = [i for i, a in enumerate(stability) if a >= ari_gate and math.isfinite(elbow[i])]
    if eligible:
        top = max(elbow[i] for i in eligible)
        at_elbow = [i for i in eligible if elbow[i] >= top - ELBOW_TOL * abs(top)]
        best = max(at_elbow, key=lambda i: ks[i])
        low = False
    else:
        best = max(range(len(ks)), key=lambda i: (stability[i], -ks[i]))
        low = True
        logger.warning("no k reached cross-seed ARI >= %.2f; choosing most stable k=%d", ari_gate, ks[best])
    return KSelection(ks[best], low, ks, ratio, elbow, stability, models)


@dataclass
class LambdaSweep:
    lam: float
    model: ClusterModel
    baseline_rec: float
    table: list[dict[str, float]]

    def to_json(self) -> dict:
        return {"lambda": self.lam, "baseline_rec_error": self.baseline_rec, "candidates": self.table}


def lambda_sweep(
    segments,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    lams: Sequence[float] = LAMBDA_GRID,
    rec_slack: float = 1.5,
    feature_names: Sequence[str] = (),
    pretrained: tuple[dict, list[dict]] | None = None,
) -> LambdaSweep:
    """Pick the lambda with the best silhouette whose reconstruction error stays
    within ``rec_slack`` times the lambda = 0 baseline."""
    X = _as_array(segments)
    if pretrained is None:
        pretrained = pretrain(X, enc_cfg, cfg)
    base = train(X, enc_cfg, replace(cfg, lam=0.0), pretrained=pretrained, feature_names=feature_names)
    table, models = [], {}
    for lam in lams:
        m = train(X, enc_cfg, replace(cfg, lam=float(lam)), pretrained=pretrained, feature_names=feature_names)
        models[lam] = m
        table.append(
            {"lambda": float(lam), "silhouette": m.silhouette, "rec_error": m.rec_error,
             "admissible": bool(m.rec_error <= rec_slack * base.rec_error)}
        )
    ok = [row for row in table if row["admissible"] and np.isfinite(row["silhouette"])]
    if ok:
        pick = max(ok, key=lambda row: (row["silhouette"], -row["lambda"]))["lambda"]
    else:
        pick = min(table, key=lambda row: row["rec_error"])["lambda"]
        logger.warning("no lambda kept reconstruction within %.1fx baseline; using lambda=%g", rec_slack, pick)
    return LambdaSweep(pick, models[pick], base.rec_error, table)


GRID = {"kernel": (3, 5), "filters": (16, 32), "hidden": (32, 64)}


def grid_search(
    segments,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    rec_slack: float = 1.5,
    feature_names: Sequence[str] = (),
) -> tuple[EncoderConfig, list[dict]]:
    """Exhaustive search over the pinned kernel/filter/hidden grid."""
    X = _as_array(segments)
    rows, cands = [], []
    for kern, filt, hid in product(GRID["kernel"], GRID["filters"], GRID["hidden"]):
        ec = replace(enc_cfg, kernel_sizes=(kern, kern), filters=(filt, filt), hidden=hid)
        m = train(X, ec, cfg, feature_names=feature_names)
        rows.append({"kernel": kern, "filters": filt, "hidden": hid, "silhouette": m.silhouette, "rec_error": m.rec_error})
        cands.append(ec)
    best_rec = min(r["rec_error"] for r in rows)
    ok = [i for i, r in enumerate(rows) if r["rec_error"] <= rec_slack * best_rec and np.isfinite(r["silhouette"])]
    pick = max(ok, key=lambda i: rows[i]["silhouette"]) if ok else int(np.argmin([r["rec_error"] for r in rows]))
    return cands[pick], rows
