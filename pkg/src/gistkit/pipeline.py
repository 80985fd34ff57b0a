"""End-to-end runs: sessions in, run directory of CSV/JSON exports out."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from . import analysis as an
from .deepcluster import ClusterModel, EncoderConfig, TrainConfig, lambda_sweep, select_k, train
from .features import (
    CANDIDATES,
    RETAINED_DEFAULT,
    DyadSeries,
    build_segments,
    extract_session,
    prune_features,
    segment_means,
    znormalize,
)
from .netmetrics import TierMode, classify_tier, graph_metrics
from .session import load_session
from .sociogram import (
    MODALITIES,
    FusedSociogram,
    FusionWeights,
    ModalSociogram,
    Thresholds,
    build_window,
    compute_fusion_weights,
    fuse,
    principal_component,
    session_totals,
)
from .sync import AlignedSession, Window, align, make_windows
from .synth import load_truth

logger = logging.getLogger(__name__)

__all__ = ["RunConfig", "StageError", "SessionData", "AnalysisReport", "prepare_session", "run_pipeline", "STAGES"]

STAGES = ("sociogram", "metrics", "features", "train", "cluster", "rules", "analyze")
GRAPH_KINDS = ("conversation", "attention", "proximity", "fused")


@dataclass(frozen=True)
class RunConfig:
    window: float = 32.0
    stride: float = 16.0
    min_speech: float = 0.5
    min_gaze: float = 0.013
    max_prox: float = 1.5
    grid_dt: float = 0.1
    k: int | None = None  # None = stability-informed selection
    lam: float | None = None  # None = sweep
    seed: int = 0
    fast_eval: bool = True
    fast_eval_cap: int = 5000
    tier_mode: str = "percentile"
    features: str = "prune"  # "prune" or "default"
    pretrain_epochs: int = 30
    epochs: int = 10
    k_min: int = 2
    k_max: int = 10
    per_window_alpha: bool = False

    def __post_init__(self):
        TierMode(self.tier_mode)
        if self.features not in ("prune", "default"):
            raise ValueError("features must be 'prune' or 'default'")
        Thresholds(self.min_speech, self.min_gaze, self.max_prox)
        if self.grid_dt <= 0:
            raise ValueError("grid_dt must be positive")

    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(self.min_speech, self.min_gaze, self.max_prox)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


class StageError(RuntimeError):
    def __init__(self, stage: str, digest: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed (input {digest[:12]}): {cause}")
        self.stage = stage
        self.digest = digest
        self.cause = cause


@contextmanager
def _stage(name: str, digest: str) -> Iterator[None]:
    logger.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, digest, exc) from exc


# -- helpers -------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _clean(obj: Any) -> Any:
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def session_name(path: Path) -> str:
    name = path.name
    for suffix in (".jsonl", ".json"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


def expand_inputs(inputs: Sequence[str | Path]) -> list[Path]:
    out: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            out += sorted(q for q in p.glob("*.jsonl"))
        else:
            out.append(p)
    if not out:
        raise ValueError("no session files given")
    names = [session_name(p) for p in out]
    if len(set(names)) != len(names):
        raise ValueError("session file names must be unique")
    return out


# -- per-session processing --------------------------------------------------------------


@dataclass(eq=False)
class SessionData:
    name: str
    path: Path
    digest: str
    aligned: AlignedSession
    windows: list[Window]
    graphs: list[tuple[ModalSociogram, ModalSociogram, ModalSociogram]]
    fusion: FusionWeights
    loadings: np.ndarray
    explained: float
    fused: list[FusedSociogram]
    series: list[DyadSeries]
    normalized: list[np.ndarray]
    window_fusion: list[FusionWeights] = field(default_factory=list)

    @property
    def participants(self) -> tuple[int, ...]:
        return self.aligned.participants


def prepare_session(path: str | Path, cfg: RunConfig) -> SessionData:
    """Load, align, window, build sociograms and extract dyadic features."""
    path = Path(path)
    digest = _sha256(path)
    with _stage("load", digest):
        s = load_session(path)
    with _stage("align", digest):
        a = align(s, cfg.grid_dt)
        windows = make_windows(a.span(), cfg.window, cfg.stride)
        if not windows:
            raise ValueError(f"session span {a.span():.1f} s is shorter than one window")
    with _stage("sociogram", digest):
        graphs = build_window(a, windows, cfg.thresholds)
        flat = [g for t in graphs for g in t]
        fw = compute_fusion_weights(flat)
        loadings, explained = principal_component(session_totals(flat))
        per_window = [compute_fusion_weights(list(t)) for t in graphs] if cfg.per_window_alpha else []
        fused = [fuse(list(t), per_window[k] if per_window else fw) for k, t in enumerate(graphs)]
    with _stage("features", digest):
        series = extract_session(a, min_gaze_overlap=cfg.min_gaze, max_proximity_dist=cfg.max_prox)
        normalized = [znormalize(ds.raw) for ds in series]
    return SessionData(
        session_name(path), path, digest, a, windows, graphs, fw, loadings, explained, fused,
        series, normalized, per_window,
    )


def _graph(sd: SessionData, k: int, kind: str):
    return sd.fused[k] if kind == "fused" else sd.graphs[k][GRAPH_KINDS.index(kind)]


def metric_rows(sd: SessionData, tier_mode: str) -> list[tuple]:
    """``(window_index, modality, metric, node_or_graph, value, tier)`` rows.

    Tiers are assigned per (modality, metric) across all of the session's
    windows (and nodes, for node-level metrics).
    """
    raw: list[list] = []
    for k, w in enumerate(sd.windows):
        for kind in GRAPH_KINDS:
            for metric, val in graph_metrics(_graph(sd, k, kind), kind).items():
                if isinstance(val, np.ndarray):
                    for p, v in zip(sd.participants, val):
                        raw.append([w.index, kind, metric, str(p), float(v)])
                else:
                    raw.append([w.index, kind, metric, "graph", float(val)])
    groups: dict[tuple[str, str], list[int]] = {}
    for pos, r in enumerate(raw):
        groups.setdefault((r[1], r[2]), []).append(pos)
    tiers: dict[int, str] = {}
    for idx in groups.values():
        vals = [raw[i][4] for i in idx]
        for i, t in zip(idx, classify_tier(vals, tier_mode, n=len(sd.participants))):
            tiers[i] = str(t)
    return [tuple(r) + (tiers[i],) for i, r in enumerate(raw)]


def export_sociograms(sd: SessionData, d: Path) -> None:
    rows = []
    blobs = []
    parts = sd.participants
    for k, w in enumerate(sd.windows):
        blob: dict[str, Any] = {"window_index": w.index, "t0": w.t0, "t1": w.t1}
        for kind in GRAPH_KINDS:
            g = _graph(sd, k, kind)
            W = g.weights
            blob[kind] = W.tolist()
            for a in range(len(parts)):
                for b in range(len(parts)):
                    if a == b or (not g.directed and b < a):
                        continue
                    rows.append((w.index, kind, parts[a], parts[b], float(W[a, b])))
        blobs.append(blob)
    _write_csv(d / "sociograms.csv", ["window_index", "modality", "src", "dst", "weight"], rows)
    _write_json(d / "sociograms.json", {"participants": list(parts), "windows": blobs})
    fw = sd.fusion.to_json()
    fw["loadings"] = dict(zip(("conversation", "attention", "proximity"), sd.loadings.tolist()))
    fw["explained_variance"] = sd.explained
    if sd.window_fusion:
        fw["per_window"] = [f.to_json() for f in sd.window_fusion]
    _write_json(d / "fusion_weights.json", fw)


def export_metrics(sd: SessionData, d: Path, tier_mode: str) -> list[tuple]:
    rows = metric_rows(sd, tier_mode)
    _write_csv(d / "metrics.csv", ["window_index", "modality", "metric", "node_or_graph", "value", "tier"], rows)
    return rows


def export_features(sd: SessionData, d: Path) -> None:
    def rows():
        for ds, Z in zip(sd.series, sd.normalized):
            for b in range(ds.n_bins):
                for c, name in enumerate(ds.names):
                    yield (ds.dyad[0], ds.dyad[1], float(b), name, float(ds.raw[b, c]), float(Z[b, c]))

    _write_csv(d / "features.csv", ["dyad_i", "dyad_j", "bin_start", "feature_name", "raw_value", "z_value"], rows())


def windowed_vs_session(sd: SessionData) -> list[tuple]:
    """Session-level graph metrics against the mean and SD over windows."""
    total = [
        ModalSociogram(m, sum(t[i].weights for t in sd.graphs), sd.graphs[0][i].directed, Window(0.0, sd.windows[-1].t1, -1))
        for i, m in enumerate(MODALITIES)
    ]
    whole = {m.value: g for m, g in zip(MODALITIES, total)}
    whole["fused"] = FusedSociogram(sum(f.weights for f in sd.fused), total[0].window, sd.fusion)
    out = []
    for kind in GRAPH_KINDS:
        sess = graph_metrics(whole[kind], kind)
        per = [graph_metrics(_graph(sd, k, kind), kind) for k in range(len(sd.windows))]
        for metric, val in sess.items():
            if isinstance(val, np.ndarray):
                for pos, p in enumerate(sd.participants):
                    vals = np.array([m[metric][pos] for m in per])
                    out.append((sd.name, kind, metric, str(p), float(val[pos]), float(vals.mean()), float(vals.std())))
            else:
                vals = np.array([m[metric] for m in per])
                out.append((sd.name, kind, metric, "graph", float(val), float(vals.mean()), float(vals.std())))
    return out


# -- corpus level -----------------------------------------------------------------------------


@dataclass(eq=False)
class Corpus:
    names: tuple[str, ...]
    X: np.ndarray
    keys: list[tuple[str, int, int, int]]  # (session, dyad_i, dyad_j, window_index)
    means: list[dict[str, float]]


def choose_features(sessions: Sequence[SessionData], cfg: RunConfig) -> list[str]:
    if cfg.features == "default":
        return list(RETAINED_DEFAULT)
    raw = [ds.raw for sd in sessions for ds in sd.series]
    z = [Z for sd in sessions for Z in sd.normalized]
    return prune_features(raw, z, seed=cfg.seed)


def build_corpus(sessions: Sequence[SessionData], retained: Sequence[str]) -> Corpus:
    mats, keys, means = [], [], []
    for sd in sessions:
        segs = build_segments(sd.series, sd.normalized, retained, sd.windows)
        zby = {ds.dyad: Z for ds, Z in zip(sd.series, sd.normalized)}
        for g in segs:
            mats.append(g.matrix)
            keys.append((sd.name, g.dyad[0], g.dyad[1], g.window.index))
            means.append(segment_means(zby[g.dyad], g.window, CANDIDATES))
    if not mats:
        raise ValueError("no complete feature segments in the given sessions")
    return Corpus(tuple(retained), np.stack(mats).astype(np.float32), keys, means)


def fit_model(corpus: Corpus, cfg: RunConfig) -> tuple[ClusterModel, dict]:
    enc = EncoderConfig(seq_len=int(round(cfg.window)), n_features=len(corpus.names))
    tc = TrainConfig(
        lam=0.5 if cfg.lam is None else cfg.lam,
        pretrain_epochs=cfg.pretrain_epochs,
        epochs=cfg.epochs,
        seed=cfg.seed,
        k=cfg.k,
        fast_eval=cfg.fast_eval,
        fast_eval_cap=cfg.fast_eval_cap,
    )
    diag: dict = {}
    stability = None
    k = cfg.k
    selected = None
    if k is None:
        sel = select_k(corpus.X, enc, tc, range(cfg.k_min, cfg.k_max + 1), feature_names=corpus.names)
        k = sel.k
        diag["k_selection"] = sel.to_json()
        stability = sel.stability[sel.k_values.index(k)]
        selected = sel.models[k][0]  # trained with the run seed
    tc = replace(tc, k=k)
    if cfg.lam is None:
        sweep = lambda_sweep(corpus.X, enc, tc, feature_names=corpus.names)
        model = sweep.model
        diag["lambda_sweep"] = sweep.to_json()
    elif selected is not None:
        model = selected
    else:
        model = train(corpus.X, enc, tc, feature_names=corpus.names)
    model.stability_ari = stability
    return model, diag


@dataclass(eq=False)
class AnalysisReport:
    out: Path
    sessions: list[str]
    fusion: dict[str, FusionWeights]
    k: int | None = None
    labels: np.ndarray | None = None
    rules: list[an.RuleLabel] = field(default_factory=list)
    entropy: an.MembershipEntropy | None = None
    associations: list[dict] = field(default_factory=list)
    ablations: dict[str, dict] = field(default_factory=dict)
    report: dict | None = None
    manifest: dict = field(default_factory=dict)


def _truth_path(p: Path) -> Path:
    return p.with_name(session_name(p) + ".truth.csv")


def run_pipeline(
    inputs: Sequence[str | Path],
    out: str | Path,
    cfg: RunConfig = RunConfig(),
    *,
    stages: Iterable[str] = STAGES,
    model_path: str | Path | None = None,
) -> AnalysisReport:
    """Run the selected stages over all sessions and write the run directory.

    With ``model_path`` the training stage is skipped and the checkpoint is
    used for clustering and analysis.
    """
    stages = set(stages)
    bad = stages - set(STAGES)
    if bad:
        raise ValueError(f"unknown stages: {sorted(bad)}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = expand_inputs(inputs)
    digest = hashlib.sha256("".join(_sha256(p) for p in paths).encode()).hexdigest()

    sessions = [prepare_session(p, cfg) for p in paths]
    report = AnalysisReport(out, [s.name for s in sessions], {s.name: s.fusion for s in sessions})
    metrics_by: dict[str, list[tuple]] = {}
    for sd in sessions:
        d = out / "sessions" / sd.name
        d.mkdir(parents=True, exist_ok=True)
        if "sociogram" in stages:
            with _stage("sociogram-export", sd.digest):
                export_sociograms(sd, d)
        if {"metrics", "analyze"} & stages:
            with _stage("metrics", sd.digest):
                metrics_by[sd.name] = export_metrics(sd, d, cfg.tier_mode) if "metrics" in stages else metric_rows(sd, cfg.tier_mode)
        if "features" in stages:
            with _stage("features-export", sd.digest):
                export_features(sd, d)
    if "sociogram" in stages:
        _write_json(
            out / "fusion_weights.json",
            {sd.name: {**sd.fusion.to_json(), "explained_variance": sd.explained,
                       "loadings": dict(zip(("conversation", "attention", "proximity"), sd.loadings.tolist()))}
             for sd in sessions},
        )

    need_model = {"train", "cluster", "analyze"} & stages
    need_corpus = need_model or "rules" in stages
    model = None
    corpus = None
    if need_corpus:
        with _stage("segments", digest):
            if model_path is not None:
                model = ClusterModel.load(model_path)
                retained = list(model.feature_names)
            else:
                retained = choose_features(sessions, cfg)
            _write_json(out / "retained_features.json", retained)
            corpus = build_corpus(sessions, retained)
    if need_model:
        if model is None:
            if "train" not in stages:
                raise StageError("train", digest, ValueError("clustering needs a trained model or --model"))
            with _stage("train", digest):
                model, diag = fit_model(corpus, cfg)
                model.save(out / "model.json")
                _write_json(out / "selection.json", diag)
        with _stage("cluster", digest):
            if corpus.X.shape[1:] != (model.enc_cfg.seq_len, model.enc_cfg.n_features):
                raise ValueError("model input shape does not match the feature segments")
            Z = model.encode(corpus.X)
            labels = model.predict(corpus.X)
            report.k = model.k
            report.labels = labels
            _export_labels(out, sessions, corpus, labels, Z)
    if "rules" in stages or ("analyze" in stages and corpus is not None):
        with _stage("rules", digest):
            report.rules = [an.rule_classify(m) for m in corpus.means]
            by_sess: dict[str, list] = {}
            for key, r in zip(corpus.keys, report.rules):
                by_sess.setdefault(key[0], []).append((key[1], key[2], key[3], int(r.cluster), r.fired_rule.value))
            for name, rows in by_sess.items():
                _write_csv(out / "sessions" / name / "rules.csv", ["dyad_i", "dyad_j", "window_index", "cluster", "fired_rule"], rows)
    if "analyze" in stages and report.labels is not None:
        with _stage("analyze", digest):
            _analyze(report, out, sessions, corpus, model, metrics_by, cfg)
    with _stage("manifest", digest):
        report.manifest = write_manifest(out, cfg, paths, sorted(stages))
    return report


def _export_labels(out: Path, sessions, corpus: Corpus, labels: np.ndarray, Z: np.ndarray) -> None:
    by_sess: dict[str, list] = {sd.name: [] for sd in sessions}
    for key, lab in zip(corpus.keys, labels):
        by_sess[key[0]].append((key[1], key[2], key[3], int(lab)))
    for name, rows in by_sess.items():
        _write_csv(out / "sessions" / name / "labels.csv", ["dyad_i", "dyad_j", "window_index", "cluster"], rows)
    header = ["session", "dyad_i", "dyad_j", "window_index", "cluster"] + [f"z{d}" for d in range(Z.shape[1])]
    _write_csv(out / "latents.csv", header, (list(k) + [int(l)] + [float(v) for v in z] for k, l, z in zip(corpus.keys, labels, Z)))


def _analyze(report: AnalysisReport, out: Path, sessions, corpus: Corpus, model: ClusterModel, metrics_by, cfg: RunConfig) -> None:
    labels = report.labels
    k = model.k
    shares = an.cluster_shares(labels.tolist(), k)
    _write_json(out / "cluster_shares.json", shares)

    names = [n for n in CANDIDATES if n in set(corpus.names) | set(RETAINED_DEFAULT)]
    prof = an.cluster_profiles(labels.tolist(), corpus.means, names)
    counts = np.bincount(labels, minlength=k)
    _write_csv(out / "cluster_profiles.csv", ["cluster", "n_segments"] + names,
               ([c, int(counts[c])] + [prof[c][n] for n in names] for c in sorted(prof)))

    recs = [an.LabelRecord(key[0], key[1], key[2], key[3], int(l)) for key, l in zip(corpus.keys, labels)]
    report.entropy = an.membership_entropy(recs, range(k))
    rows = report.entropy.rows()
    _write_csv(out / "membership_entropy.csv", list(rows[0].keys()), ([r[c] for c in rows[0]] for r in rows))

    # cluster label vs tier of the window's graph-level metric
    tier_of: dict[tuple, str] = {}
    graph_metrics_seen: list[tuple[str, str]] = []
    for name, mrows in metrics_by.items():
        for w, kind, metric, node, _, tier in mrows:
            if node == "graph":
                tier_of[(name, w, kind, metric)] = tier
                if (kind, metric) not in graph_metrics_seen:
                    graph_metrics_seen.append((kind, metric))
    assoc_rows = []
    for kind, metric in graph_metrics_seen:
        tiers = [tier_of[(key[0], key[3], kind, metric)] for key in corpus.keys]
        res = an.crosstab_association(labels.tolist(), tiers, rows=list(range(k)), cols=["low", "medium", "high"])
        row = {"modality": kind, "metric": metric, "chi2": res.chi2, "p_value": res.p_value,
               "cramers_v": res.cramers_v, "dof": res.dof, "n": res.n}
        assoc_rows.append(row)
    report.associations = assoc_rows
    if assoc_rows:
        _write_csv(out / "associations.csv", list(assoc_rows[0]), ([r[c] for c in assoc_rows[0]] for r in assoc_rows))

    abl: dict[str, dict] = {}
    for sd in sessions:
        abl[sd.name] = {}
        for m in MODALITIES:
            res = an.ablate_modality(sd.graphs, m)
            abl[sd.name][m.value] = None if res is None else res.to_json()
    report.ablations = abl
    _write_json(out / "ablation.json", abl)

    wvs = [r for sd in sessions for r in windowed_vs_session(sd)]
    _write_csv(out / "windowed_vs_session.csv",
               ["session", "modality", "metric", "node_or_graph", "session_value", "windowed_mean", "windowed_std"], wvs)

    truth: dict[tuple, int] = {}
    for sd in sessions:
        tp = _truth_path(sd.path)
        if tp.exists():
            for r in load_truth(tp):
                truth[(sd.name, r.dyad_i, r.dyad_j, r.window_index)] = int(r.mode)
    idx = [n for n, key in enumerate(corpus.keys) if key in truth]
    if idx:
        y = [truth[corpus.keys[n]] for n in idx]
        rules = [int(report.rules[n].cluster) for n in idx]
        cl = [int(labels[n]) for n in idx]
        mapping = an.match_clusters(cl, y)
        report.report = {
            "n_segments": len(idx),
            "rules_vs_truth": an.classification_report(rules, y, classes=range(4)),
            "clusters_vs_truth": an.classification_report([mapping[c] for c in cl], y, classes=range(4)),
            "cluster_to_mode": {str(c): m for c, m in sorted(mapping.items())},
        }
        _write_json(out / "classification_report.json", report.report)


def write_manifest(out: Path, cfg: RunConfig, inputs: Sequence[Path], stages: Sequence[str]) -> dict:
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out).as_posix()] = _sha256(p)
    manifest = {
        "config": cfg.to_json(),
        "config_hash": cfg.digest(),
        "seeds": {"train": cfg.seed, "fast_eval": cfg.seed},
        "inputs": {session_name(p): _sha256(p) for p in inputs},
        "stages": list(stages),
        "files": files,
    }
    _write_json(out / "manifest.json", manifest)
    return manifest
