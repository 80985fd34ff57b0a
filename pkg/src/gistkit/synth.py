"""Deterministic synthetic sessions with planted behavior phases.

Every generated session carries ground truth: one behavior mode per
(dyad, window), assigned by majority coverage of the window by the scripted
phases. Randomness comes from numpy's PCG64 generator seeded from the
script seed, which is also written into the session metadata.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .session import GazeFixation, PoseSample, SessionRecording, SpeechSegment, canonicalize
from .sync import make_windows

logger = logging.getLogger(__name__)

__all__ = [
    "BehaviorMode",
    "ConfigurationError",
    "ModePreset",
    "PhaseScript",
    "TruthRow",
    "default_presets",
    "generate",
    "random_script",
    "save_truth",
    "load_truth",
]

RNG_ALGORITHM = "numpy-PCG64"
POSE_HZ = 10


class BehaviorMode(enum.IntEnum):
    RHYTHMIC_LEADER_FOLLOWER = 0
    ANIMATED_COLLABORATION = 1
    MONOTONE_FOCUS = 2
    INSTRUCTOR_DEMONSTRATION = 3


class ConfigurationError(ValueError):
    """Infeasible generator script or preset."""


@dataclass(frozen=True)
class ModePreset:
    """Generative parameters of one behavior mode.

    Speech is either turn-based (``speaker_share`` of the group talks at a
    time for turns of about ``turn_period`` seconds, active for ``duty`` of
    each turn) or, with ``independent``, every participant toggles on and off
    on their own with that period and duty. Gaze is a stream of group joint
    fixations of about ``fixation_len`` seconds separated by exponential gaps
    of mean ``fixation_gap``, each on one of ``n_objects`` objects. Poses sit
    on a circle of radius ``radius`` with radial oscillation of amplitude
    ``osc_amp`` and period ``osc_period``.
    """

    turn_period: float
    speaker_share: float
    duty: float
    jitter: float
    fixation_len: float
    fixation_gap: float
    n_objects: int
    radius: float
    osc_amp: float
    osc_period: float
    independent: bool = False
    walk_sd: float = 0.02

    def validate(self) -> None:
        problems = []
        if self.turn_period <= 0:
            problems.append("turn_period must be > 0")
        if not 0 <= self.speaker_share <= 1:
            problems.append("speaker_share must lie in [0, 1]")
        if not 0 < self.duty <= 1:
            problems.append("duty must lie in (0, 1]")
        if not 0 <= self.jitter < 1:
            problems.append("jitter must lie in [0, 1)")
        if self.fixation_len <= 0 or self.fixation_gap < 0:
            problems.append("fixation_len must be > 0 and fixation_gap >= 0")
        if self.n_objects < 1:
            problems.append("n_objects must be >= 1")
        if self.radius <= 0:
            problems.append("radius (mean separation) must be positive")
        if self.osc_amp < 0 or self.osc_amp >= self.radius:
            problems.append("osc_amp must lie in [0, radius) so distances stay positive")
        if self.osc_period <= 0 or self.walk_sd < 0:
            problems.append("osc_period must be > 0 and walk_sd >= 0")
        if problems:
            raise ConfigurationError("infeasible preset: " + "; ".join(problems))


def default_presets() -> dict[BehaviorMode, ModePreset]:
    """Presets whose feature profiles follow the four cluster sign patterns.

    Mode 0 holds long turns by half the group (high dominance, low entropy)
    and stands far apart. Mode 1 overlaps speech freely (high entropy) with
    rapid shared attention over two objects at close range. Mode 2 focuses
    on a single object while short turns pass around the group. Mode 3 is near silent with
    joint attention sweeping many objects.
    """
    M = BehaviorMode
    return {
        M.RHYTHMIC_LEADER_FOLLOWER: ModePreset(
            turn_period=6.0, speaker_share=0.5, duty=0.95, jitter=0.3,
            fixation_len=0.45, fixation_gap=0.1, n_objects=8,
            radius=3.0, osc_amp=0.05, osc_period=6.0,
        ),
        M.ANIMATED_COLLABORATION: ModePreset(
            turn_period=1.0, speaker_share=1.0, duty=0.5, jitter=0.4,
            fixation_len=0.3, fixation_gap=0.03, n_objects=2,
            radius=0.6, osc_amp=0.25, osc_period=1.5, independent=True,
        ),
        M.MONOTONE_FOCUS: ModePreset(
            turn_period=1.5, speaker_share=0.25, duty=0.9, jitter=0.3,
            fixation_len=6.0, fixation_gap=0.3, n_objects=1,
            radius=1.6, osc_amp=0.05, osc_period=8.0,
        ),
        M.INSTRUCTOR_DEMONSTRATION: ModePreset(
            turn_period=4.0, speaker_share=0.0, duty=0.5, jitter=0.3,
            fixation_len=0.22, fixation_gap=0.03, n_objects=24,
            radius=1.0, osc_amp=0.1, osc_period=3.0,
        ),
    }


Phase = tuple[float, BehaviorMode]


@dataclass(frozen=True)
class PhaseScript:
    """Per-dyad ordered phases for one group session.

    ``phases`` maps each dyad ``(i, j)`` (participants are ``1..n``) to its
    ``(duration, mode)`` list.
    """

    n: int
    phases: Mapping[tuple[int, int], tuple[Phase, ...]]
    seed: int = 0
    n_objects: int = 32
    session_id: str = "synthetic"

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError("group size must be at least 2")
        expected = set(combinations(range(1, self.n + 1), 2))
        if set(self.phases) != expected:
            raise ConfigurationError("phases must list every dyad of the group exactly once")
        totals = set()
        for dyad, plist in self.phases.items():
            if not plist:
                raise ConfigurationError(f"dyad {dyad} has no phases")
            for dur, mode in plist:
                if not dur > 0 or not math.isfinite(dur):
                    raise ConfigurationError(f"phase durations must be positive, got {dur}")
                BehaviorMode(mode)
            totals.add(round(sum(d for d, _ in plist), 9))
        if len(totals) != 1:
            raise ConfigurationError("total duration must be equal across dyads")
        if self.n_objects < 1:
            raise ConfigurationError("object vocabulary must not be empty")

    @classmethod
    def uniform(
        cls, n: int, phases: Sequence[tuple[float, int]], seed: int = 0, n_objects: int = 32,
        session_id: str = "synthetic",
    ) -> "PhaseScript":
        """Same phase list for every dyad."""
        plist = tuple((float(d), BehaviorMode(m)) for d, m in phases)
        return cls(n, {d: plist for d in combinations(range(1, n + 1), 2)}, seed, n_objects, session_id)

    @property
    def participants(self) -> tuple[int, ...]:
        return tuple(range(1, self.n + 1))

    @property
    def duration(self) -> float:
        return sum(d for d, _ in next(iter(self.phases.values())))

    def group_phases(self) -> tuple[Phase, ...]:
        lists = {tuple(v) for v in self.phases.values()}
        if len(lists) != 1:
            raise ConfigurationError(
                "dyads of one group follow different phase lists; shared per-participant "
                "streams can only realize group-synchronous phases"
            )
        return next(iter(lists))

    def to_json(self) -> dict:
        d: dict = {"n": self.n, "seed": self.seed, "n_objects": self.n_objects, "session_id": self.session_id}
        try:
            d["phases"] = [[dur, int(m)] for dur, m in self.group_phases()]
        except ConfigurationError:
            d["dyad_phases"] = {
                f"{i}-{j}": [[dur, int(m)] for dur, m in plist] for (i, j), plist in sorted(self.phases.items())
            }
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PhaseScript":
        try:
            n = int(d["n"])
            kw = dict(seed=int(d.get("seed", 0)), n_objects=int(d.get("n_objects", 32)),
                      session_id=str(d.get("session_id", "synthetic")))
            if "phases" in d:
                return cls.uniform(n, [(float(a), int(b)) for a, b in d["phases"]], **kw)
            phases = {}
            for key, plist in d["dyad_phases"].items():
                i, j = (int(x) for x in key.split("-"))
                phases[(i, j)] = tuple((float(a), BehaviorMode(int(b))) for a, b in plist)
            return cls(n, phases, **kw)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"malformed phase script: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "PhaseScript":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class TruthRow:
    dyad_i: int
    dyad_j: int
    window_index: int
    mode: BehaviorMode


def random_script(
    n: int,
    seed: int,
    *,
    n_phases: int = 8,
    min_len: float = 240.0,
    max_len: float = 320.0,
    shares: Sequence[float] = (0.3, 0.25, 0.25, 0.2),
    session_id: str | None = None,
) -> PhaseScript:
    """Group-synchronous script with whole-second phase lengths.

    Modes are allotted in proportion to ``shares`` (every mode at least once
    when ``n_phases >= 4``) and shuffled so that no mode follows itself.
    """
    rng = np.random.default_rng(seed)
    counts = np.floor(np.asarray(shares) / np.sum(shares) * n_phases).astype(int)
    if n_phases >= 4:
        counts = np.maximum(counts, 1)
    while counts.sum() < n_phases:
        counts[int(np.argmax(np.asarray(shares) * n_phases - counts))] += 1
    while counts.sum() > n_phases:
        counts[int(np.argmax(counts))] -= 1
    bag = [m for m, c in enumerate(counts) for _ in range(c)]
    order: list[int] = []
    for _ in range(1000):
        order = list(rng.permutation(bag))
        if all(a != b for a, b in zip(order, order[1:])):
            break
    lens = rng.integers(int(min_len), int(max_len) + 1, size=n_phases)
    return PhaseScript.uniform(
        n, [(float(L), int(m)) for L, m in zip(lens, order)], seed=seed,
        session_id=session_id or f"synth-{seed}",
    )


# -- stream realization ---------------------------------------------------------


def _r(x: float, nd: int = 4) -> float:
    return float(round(x, nd))


def _speech(rng: np.random.Generator, parts: Sequence[int], t0: float, t1: float, pr: ModePreset):
    out: list[SpeechSegment] = []
    if pr.speaker_share == 0:
        return out
    n = len(parts)
    if pr.independent:
        for p in parts:
            t = t0 + rng.uniform(0, pr.turn_period)
            speaking = bool(rng.integers(2))
            while t < t1:
                frac = pr.duty if speaking else 1 - pr.duty
                d = pr.turn_period * frac * rng.uniform(1 - pr.jitter, 1 + pr.jitter)
                a, b = _r(t), _r(min(t + d, t1))
                if speaking and b - a > 0.05:
                    out.append(SpeechSegment(p, a, b))
                t += d
                speaking = not speaking
        return out
    k = max(1, int(round(pr.speaker_share * n)))
    t = t0
    prev: set[int] = set()
    while t < t1:
        d = pr.turn_period * rng.uniform(1 - pr.jitter, 1 + pr.jitter)
        fresh = [p for p in parts if p not in prev]
        pool = fresh if len(fresh) >= k else list(parts)
        chosen = {int(x) for x in rng.choice(pool, size=k, replace=False)}
        for p in sorted(chosen):
            lead = rng.uniform(0, 0.05) * d
            a, b = _r(t + lead), _r(min(t + lead + pr.duty * d, t1, t + d))
            if b - a > 0.05:
                out.append(SpeechSegment(p, a, b))
        prev = chosen
        t += d
    return out


def _gaze(rng, parts, t0, t1, pr: ModePreset, objects: Sequence[str]):
    out: list[GazeFixation] = []
    t = t0 + rng.exponential(pr.fixation_gap) if pr.fixation_gap > 0 else t0
    while t < t1:
        d = pr.fixation_len * rng.uniform(0.7, 1.3)
        obj = objects[int(rng.integers(len(objects)))]
        for p in parts:
            a = t + rng.uniform(0, 0.05) * d
            b = min(t + d - rng.uniform(0, 0.05) * d, t1)
            a, b = _r(a), _r(b)
            if b > a:
                out.append(GazeFixation(p, obj, a, b))
        t += d + (rng.exponential(pr.fixation_gap) if pr.fixation_gap > 0 else 0.0) + 0.01
    return out


def _quat_facing(dx: float, dz: float) -> tuple[float, float, float, float]:
    yaw = math.atan2(dx, dz)
    return (_r(math.cos(yaw / 2), 8), 0.0, _r(math.sin(yaw / 2), 8), 0.0)


def _poses(rng, parts, plist: Sequence[Phase], presets, total: float) -> dict[int, tuple[PoseSample, ...]]:
    n_t = int(round(total * POSE_HZ)) + 1
    t = np.arange(n_t) / POSE_HZ
    radius = np.empty(n_t)
    amp = np.empty(n_t)
    period = np.empty(n_t)
    walk = np.empty(n_t)
    edges = np.cumsum([0.0] + [d for d, _ in plist])
    for (d, mode), a, b in zip(plist, edges[:-1], edges[1:]):
        pr = presets[mode]
        sel = (t >= a) & (t <= b + 1e-9)
        radius[sel], amp[sel], period[sel], walk[sel] = pr.radius, pr.osc_amp, pr.osc_period, pr.walk_sd
    # 1 s ramp between phase radii keeps motion continuous
    kernel = np.ones(POSE_HZ) / POSE_HZ
    pad = POSE_HZ // 2
    radius = np.convolve(np.pad(radius, (pad, POSE_HZ - 1 - pad), mode="edge"), kernel, mode="valid")
    out = {}
    n = len(parts)
    for idx, p in enumerate(parts):
        theta = 2 * math.pi * idx / n
        phase = rng.uniform(0, 2 * math.pi)
        # oscillation phase advances with the local period
        arg = np.cumsum(2 * math.pi / (period * POSE_HZ)) + phase
        r = radius + amp * np.sin(arg)
        noise = np.zeros((n_t, 2))
        steps = rng.normal(0, 1, size=(n_t, 2)) * walk[:, None]
        for k in range(1, n_t):
            noise[k] = 0.9 * noise[k - 1] + steps[k]
        x = r * math.sin(theta) + noise[:, 0]
        z = r * math.cos(theta) + noise[:, 1]
        y = 1.6 + 0.01 * np.sin(arg / 3)
        samples = []
        for k in range(n_t):
            samples.append(
                PoseSample(p, _r(t[k], 6), (_r(x[k]), _r(y[k]), _r(z[k])), _quat_facing(-x[k], -z[k]))
            )
        out[p] = tuple(samples)
    return out


def _ground_truth(plist: Sequence[Phase], parts, total: float, window_len: float, stride: float) -> list[TruthRow]:
    edges = np.cumsum([0.0] + [d for d, _ in plist])
    rows = []
    for w in make_windows(total, window_len, stride):
        cover: dict[int, float] = {}
        for (d, mode), a, b in zip(plist, edges[:-1], edges[1:]):
            c = min(b, w.t1) - max(a, w.t0)
            if c > 0:
                cover[int(mode)] = cover.get(int(mode), 0.0) + c
        # max coverage, earliest-starting phase on ties (dict keeps phase order)
        best = max(cover.items(), key=lambda kv: kv[1])
        ties = [m for m, c in cover.items() if abs(c - best[1]) <= 1e-9]
        label = BehaviorMode(ties[0])
        for i, j in combinations(parts, 2):
            rows.append(TruthRow(i, j, w.index, label))
    return rows


def generate(
    script: PhaseScript,
    presets: Mapping[BehaviorMode, ModePreset] | None = None,
    *,
    window_len: float = 32.0,
    stride: float = 16.0,
) -> tuple[SessionRecording, list[TruthRow]]:
    """Realize ``script`` into a session plus per-(dyad, window) truth labels."""
    presets = dict(default_presets() if presets is None else presets)
    plist = script.group_phases()
    for mode in {m for _, m in plist}:
        if mode not in presets:
            raise ConfigurationError(f"no preset for mode {mode.name}")
        presets[mode].validate()
        if presets[mode].n_objects > script.n_objects:
            raise ConfigurationError(
                f"mode {mode.name} needs {presets[mode].n_objects} objects, vocabulary has {script.n_objects}"
            )
    streams = np.random.SeedSequence(script.seed).spawn(3)
    r_speech, r_gaze, r_pose = (np.random.Generator(np.random.PCG64(s)) for s in streams)
    parts = script.participants
    vocab = [f"obj{k:02d}" for k in range(script.n_objects)]
    speech: list[SpeechSegment] = []
    gaze: list[GazeFixation] = []
    t = 0.0
    for dur, mode in plist:
        pr = presets[mode]
        objects = [vocab[int(k)] for k in sorted(r_gaze.choice(len(vocab), size=pr.n_objects, replace=False))]
        speech += _speech(r_speech, parts, t, t + dur, pr)
        gaze += _gaze(r_gaze, parts, t, t + dur, pr, objects)
        t += dur
    total = script.duration
    poses = _poses(r_pose, parts, plist, presets, total)
    session = canonicalize(
        SessionRecording(
            participants=parts,
            speech=tuple(speech),
            gaze=tuple(gaze),
            poses=poses,
            clock_offsets=tuple(0.0 for _ in parts),
            metadata={
                "session_id": script.session_id,
                "generator": "gistkit.synth",
                "rng": RNG_ALGORITHM,
                "seed": str(script.seed),
            },
        )
    )
    truth = _ground_truth(plist, parts, total, window_len, stride)
    logger.debug("generated %s: %.0f s, %d speech, %d gaze", script.session_id, total, len(speech), len(gaze))
    return session, truth


def save_truth(rows: Iterable[TruthRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dyad_i", "dyad_j", "window_index", "mode"])
        for r in rows:
            w.writerow([r.dyad_i, r.dyad_j, r.window_index, int(r.mode)])


def load_truth(path: str | Path) -> list[TruthRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            TruthRow(int(r["dyad_i"]), int(r["dyad_j"]), int(r["window_index"]), BehaviorMode(int(r["mode"])))
            for r in csv.DictReader(fh)
        ]
