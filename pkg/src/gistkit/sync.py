"""Clock alignment, pose resampling and interval primitives."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .session import GazeFixation, PoseSample, SessionRecording, SpeechSegment, canonicalize

logger = logging.getLogger(__name__)

__all__ = [
    "Window",
    "AlignedSession",
    "align",
    "clip_interval",
    "interval_overlap",
    "make_windows",
    "slerp",
]

DEFAULT_GRID_DT = 0.1


@dataclass(frozen=True)
class Window:
    t0: float
    t1: float
    index: int

    @property
    def length(self) -> float:
        return self.t1 - self.t0


@dataclass(frozen=True, eq=False)
class AlignedSession:
    """Session with clock offsets applied and poses on a uniform grid.

    ``positions[p]`` is a ``(len(grid), 3)`` array with NaN rows where
    participant ``p`` has no pose coverage; ``present[p]`` is the matching mask.
    """

    base: SessionRecording
    grid_dt: float
    grid: np.ndarray
    positions: dict[int, np.ndarray]
    orientations: dict[int, np.ndarray]
    present: dict[int, np.ndarray]
    pose_absent: frozenset[int] = field(default_factory=frozenset)

    @property
    def participants(self) -> tuple[int, ...]:
        return self.base.participants

    @property
    def n(self) -> int:
        return self.base.n

    def span(self) -> float:
        return self.base.span()

    def index(self, p: int) -> int:
        """Row/column of participant ``p`` in N x N matrices."""
        return self.base.participants.index(p)


def clip_interval(start: float, end: float, w: Window) -> float:
    """Duration of ``[start, end]`` inside ``w``; negative when disjoint."""
    return min(end, w.t1) - max(start, w.t0)


def interval_overlap(a_start: float, a_end: float, b_start: float, b_end: float) -> float:
    return max(0.0, min(a_end, b_end) - max(a_start, b_start))


def make_windows(session_span: float, window_len: float, stride: float) -> list[Window]:
    if window_len <= 0 or stride <= 0 or stride > window_len:
        raise ValueError("need window_len > 0 and 0 < stride <= window_len")
    out = []
    k = 0
    eps = 1e-9
    while k * stride + window_len <= session_span + eps:
        t0 = k * stride
        out.append(Window(t0, t0 + window_len, k))
        k += 1
    return out


def slerp(q0: np.ndarray, q1: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise spherical linear interpolation between unit quaternions."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float).copy()
    u = np.asarray(u, dtype=float)[:, None]
    dot = np.sum(q0 * q1, axis=1)
    flip = dot < 0
    q1[flip] *= -1
    dot = np.abs(dot)[:, None]
    near = dot > 0.9995
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_t = np.sin(theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(near, 1 - u, np.sin((1 - u) * theta) / sin_t)
        b = np.where(near, u, np.sin(u * theta) / sin_t)
    out = a * q0 + b * q1
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _shift(s: SessionRecording) -> SessionRecording:
    off = {p: s.clock_offsets[k] for k, p in enumerate(s.participants)}
    speech = tuple(
        SpeechSegment(x.speaker, x.start + off[x.speaker], x.end + off[x.speaker]) for x in s.speech
    )
    gaze = tuple(
        GazeFixation(x.participant, x.object_id, x.start + off[x.participant], x.end + off[x.participant])
        for x in s.gaze
    )
    poses = {
        p: tuple(replace(ps, t=ps.t + off[p]) for ps in track) for p, track in s.poses.items()
    }
    shifted = canonicalize(
        SessionRecording(
            participants=s.participants,
            speech=speech,
            gaze=gaze,
            poses=poses,
            clock_offsets=tuple(0.0 for _ in s.participants),
            metadata=s.metadata,
        )
    )
    earliest = min(
        [x.start for x in shifted.speech]
        + [x.start for x in shifted.gaze]
        + [track[0].t for track in shifted.poses.values() if track],
        default=0.0,
    )
    if earliest < 0:
        raise ValueError(f"clock offsets move timestamps below zero (earliest {earliest:g} s)")
    return shifted


def align(s: SessionRecording, grid_dt: float = DEFAULT_GRID_DT) -> AlignedSession:
    """Apply clock offsets and resample every pose stream onto ``k * grid_dt``.

    Positions are linearly interpolated and orientations slerped; grid points
    outside a participant's pose coverage are absent (NaN), never extrapolated.
    """
    if not grid_dt > 0:
        raise ValueError("grid_dt must be positive")
    base = _shift(s)
    last = max((track[-1].t for track in base.poses.values() if track), default=0.0)
    n_grid = int(math.floor(last / grid_dt + 1e-9)) + 1
    grid = np.arange(n_grid) * grid_dt

    positions: dict[int, np.ndarray] = {}
    orientations: dict[int, np.ndarray] = {}
    present: dict[int, np.ndarray] = {}
    absent = set()
    for p in base.participants:
        track = base.poses.get(p, ())
        pos = np.full((n_grid, 3), np.nan)
        ori = np.full((n_grid, 4), np.nan)
        mask = np.zeros(n_grid, dtype=bool)
        if not track:
            logger.warning("participant %s has no pose samples; marked pose-absent", p)
            absent.add(p)
        else:
            ts = np.array([ps.t for ps in track])
            xyz = np.array([ps.position for ps in track], dtype=float)
            quat = np.array([ps.orientation for ps in track], dtype=float)
            tol = 1e-9
            mask = (grid >= ts[0] - tol) & (grid <= ts[-1] + tol)
            g = np.clip(grid[mask], ts[0], ts[-1])
            for d in range(3):
                pos[mask, d] = np.interp(g, ts, xyz[:, d])
            if len(ts) == 1:
                ori[mask] = quat[0]
            else:
                hi = np.clip(np.searchsorted(ts, g, side="right"), 1, len(ts) - 1)
                lo = hi - 1
                u = (g - ts[lo]) / (ts[hi] - ts[lo])
                ori[mask] = slerp(quat[lo], quat[hi], u)
        positions[p] = pos
        orientations[p] = ori
        present[p] = mask
    return AlignedSession(
        base=base,
        grid_dt=float(grid_dt),
        grid=grid,
        positions=positions,
        orientations=orientations,
        present=present,
        pose_absent=frozenset(absent),
    )
