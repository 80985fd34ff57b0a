"""Session data model and the JSON-lines session file format.

A session file is UTF-8 JSON lines. The first line is a header record::

    {"type":"header","participants":[0,1,2,3],"clock_offsets":[0,0,0,0],"metadata":{...}}

followed by any number of ``speech``, ``gaze`` and ``pose`` records. Times are
session-relative seconds, positions are feet.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

__all__ = [
    "SpeechSegment",
    "GazeFixation",
    "PoseSample",
    "SessionRecording",
    "Violation",
    "SessionError",
    "SessionParseError",
    "SessionInvariantError",
    "MissingParticipantError",
    "load_session",
    "save_session",
    "dumps_session",
    "loads_session",
    "validate_session",
    "canonicalize",
]

QUAT_TOL = 1e-6


@dataclass(frozen=True)
class SpeechSegment:
    speaker: int
    start: float
    end: float


@dataclass(frozen=True)
class GazeFixation:
    participant: int
    object_id: str
    start: float
    end: float


@dataclass(frozen=True)
class PoseSample:
    participant: int
    t: float
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # (w, x, y, z)


@dataclass(frozen=True)
class SessionRecording:
    """One group session. Immutable; construct through :func:`canonicalize`
    (or the loaders) to get canonical stream ordering."""

    participants: tuple[int, ...]
    speech: tuple[SpeechSegment, ...] = ()
    gaze: tuple[GazeFixation, ...] = ()
    poses: dict[int, tuple[PoseSample, ...]] = field(default_factory=dict)
    clock_offsets: tuple[float, ...] = ()
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.participants)

    @property
    def session_id(self) -> str:
        return self.metadata.get("session_id", "session")

    def span(self) -> float:
        """Latest timestamp found in any stream."""
        ends = [s.end for s in self.speech] + [g.end for g in self.gaze]
        ends += [track[-1].t for track in self.poses.values() if track]
        return max(ends, default=0.0)


@dataclass(frozen=True)
class Violation:
    record: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.record}: {self.rule}: {self.message}"


class SessionError(ValueError):
    """Base class for session loading failures."""


class SessionParseError(SessionError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class SessionInvariantError(SessionError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        head = "; ".join(str(v) for v in violations[:5])
        more = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""
        super().__init__(f"session violates invariants: {head}{more}")


class MissingParticipantError(SessionInvariantError):
    pass


def canonicalize(session: SessionRecording) -> SessionRecording:
    """Return a copy with every stream in canonical (stable, idempotent) order."""
    speech = tuple(sorted(session.speech, key=lambda s: (s.speaker, s.start, s.end)))
    gaze = tuple(
        sorted(session.gaze, key=lambda g: (g.participant, g.start, g.end, g.object_id))
    )
    poses = {
        p: tuple(sorted(session.poses[p], key=lambda s: s.t)) for p in sorted(session.poses)
    }
    return SessionRecording(
        participants=tuple(session.participants),
        speech=speech,
        gaze=gaze,
        poses=poses,
        clock_offsets=tuple(float(c) for c in session.clock_offsets),
        metadata=dict(session.metadata),
    )


def _finite(*values: float) -> bool:
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in values)


def validate_session(s: SessionRecording) -> list[Violation]:
    """Check every type invariant. Never raises; returns the violations found."""
    out: list[Violation] = []
    try:
        parts = list(s.participants)
    except TypeError:
        return [Violation("header", "participants", "participants is not a list")]
    known = set(parts)
    if len(known) != len(parts):
        out.append(Violation("header", "unique-participants", "duplicate participant ids"))
    if len(parts) < 2:
        out.append(Violation("header", "min-participants", "a session needs N >= 2"))
    if any(not isinstance(p, int) or isinstance(p, bool) or p < 0 for p in parts):
        out.append(Violation("header", "participant-id", "ids must be non-negative ints"))
    if len(s.clock_offsets) != len(parts):
        out.append(
            Violation(
                "header",
                "clock-offsets",
                f"{len(s.clock_offsets)} offsets for {len(parts)} participants",
            )
        )
    elif not _finite(*s.clock_offsets):
        out.append(Violation("header", "clock-offsets", "offsets must be finite"))

    last_by_speaker: dict[int, tuple[int, SpeechSegment]] = {}
    order = sorted(range(len(s.speech)), key=lambda k: (s.speech[k].speaker, s.speech[k].start))
    for k in order:
        seg = s.speech[k]
        rec = f"speech[{k}]"
        if seg.speaker not in known:
            out.append(Violation(rec, "unknown-participant", f"speaker {seg.speaker}"))
        if not _finite(seg.start, seg.end):
            out.append(Violation(rec, "finite", "non-finite timestamp"))
            continue
        if seg.end <= seg.start:
            out.append(Violation(rec, "end-after-start", f"end {seg.end} <= start {seg.start}"))
            continue
        prev = last_by_speaker.get(seg.speaker)
        if prev is not None and seg.start < prev[1].end:
            out.append(
                Violation(
                    f"speech[{prev[0]}],speech[{k}]",
                    "speaker-overlap",
                    f"speaker {seg.speaker} segments overlap",
                )
            )
        if prev is None or seg.end > prev[1].end:
            last_by_speaker[seg.speaker] = (k, seg)

    for k, fx in enumerate(s.gaze):
        rec = f"gaze[{k}]"
        if fx.participant not in known:
            out.append(Violation(rec, "unknown-participant", f"participant {fx.participant}"))
        if not isinstance(fx.object_id, str) or not fx.object_id:
            out.append(Violation(rec, "object-id", "object_id must be a non-empty string"))
        if not _finite(fx.start, fx.end):
            out.append(Violation(rec, "finite", "non-finite timestamp"))
        elif fx.end <= fx.start:
            out.append(Violation(rec, "end-after-start", f"end {fx.end} <= start {fx.start}"))

    for p, track in s.poses.items():
        if p not in known:
            out.append(Violation(f"pose[p={p}]", "unknown-participant", f"participant {p}"))
        prev_t = -math.inf
        for k, ps in enumerate(track):
            rec = f"pose[p={p}][{k}]"
            if ps.participant != p:
                out.append(Violation(rec, "track-owner", "sample filed under wrong participant"))
            if not _finite(ps.t, *ps.position, *ps.orientation):
                out.append(Violation(rec, "finite", "non-finite value"))
                continue
            if len(ps.position) != 3 or len(ps.orientation) != 4:
                out.append(Violation(rec, "shape", "position needs 3, quaternion 4 components"))
                continue
            norm = math.sqrt(sum(c * c for c in ps.orientation))
            if abs(norm - 1.0) > QUAT_TOL:
                out.append(Violation(rec, "unit-quaternion", f"norm {norm:.9g}"))
            if ps.t <= prev_t:
                out.append(Violation(rec, "increasing-time", f"t {ps.t} <= previous {prev_t}"))
            prev_t = ps.t

    if not (s.speech or s.gaze or any(s.poses.values())):
        out.append(Violation("session", "non-empty", "all streams are empty"))
    return out


# -- serialization -----------------------------------------------------------


def _dump(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def _records(s: SessionRecording) -> Iterable[str]:
    yield _dump(
        {
            "type": "header",
            "participants": list(s.participants),
            "clock_offsets": [float(c) for c in s.clock_offsets],
            "metadata": {str(k): str(v) for k, v in sorted(s.metadata.items())},
        }
    )
    for seg in s.speech:
        yield _dump({"type": "speech", "p": seg.speaker, "start": seg.start, "end": seg.end})
    for fx in s.gaze:
        yield _dump(
            {"type": "gaze", "p": fx.participant, "obj": fx.object_id, "start": fx.start, "end": fx.end}
        )
    for p in sorted(s.poses):
        for ps in s.poses[p]:
            yield _dump(
                {"type": "pose", "p": p, "t": ps.t, "pos": list(ps.position), "quat": list(ps.orientation)}
            )


def dumps_session(s: SessionRecording) -> str:
    """Serialize to the canonical session text (stream order is canonicalized)."""
    return "\n".join(_records(canonicalize(s))) + "\n"


def save_session(s: SessionRecording, path: str | Path) -> None:
    Path(path).write_text(dumps_session(s), encoding="utf-8")


def _num(rec: dict, key: str, lineno: int) -> float:
    v = rec.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SessionParseError(lineno, f"field {key!r} must be a number")
    return float(v)


def _int(rec: dict, key: str, lineno: int) -> int:
    v = rec.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise SessionParseError(lineno, f"field {key!r} must be an integer")
    return v


def _vec(rec: dict, key: str, size: int, lineno: int) -> tuple[float, ...]:
    v = rec.get(key)
    if (
        not isinstance(v, list)
        or len(v) != size
        or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in v)
    ):
        raise SessionParseError(lineno, f"field {key!r} must be a list of {size} numbers")
    return tuple(float(c) for c in v)


def loads_session(text: str, *, validate: bool = True) -> SessionRecording:
    """Parse session text. Raises :class:`SessionParseError` on malformed input
    and :class:`SessionInvariantError` when the parsed session is invalid."""
    # split on "\n" only: splitlines() would also break on U+0085/U+2028 inside strings
    lines = [ln[:-1] if ln.endswith("\r") else ln for ln in text.split("\n")]
    header = None
    speech: list[SpeechSegment] = []
    gaze: list[GazeFixation] = []
    poses: dict[int, list[PoseSample]] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SessionParseError(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise SessionParseError(lineno, "record must be a JSON object")
        kind = rec.get("type")
        if header is None:
            if kind != "header":
                raise SessionParseError(lineno, "first record must be the header")
            parts = rec.get("participants")
            offsets = rec.get("clock_offsets")
            meta = rec.get("metadata", {})
            if not isinstance(parts, list) or any(
                isinstance(p, bool) or not isinstance(p, int) for p in parts
            ):
                raise SessionParseError(lineno, "participants must be a list of integers")
            if not isinstance(offsets, list) or any(
                isinstance(c, bool) or not isinstance(c, (int, float)) for c in offsets
            ):
                raise SessionParseError(lineno, "clock_offsets must be a list of numbers")
            if not isinstance(meta, dict) or any(not isinstance(v, str) for v in meta.values()):
                raise SessionParseError(lineno, "metadata must map strings to strings")
            header = (tuple(parts), tuple(float(c) for c in offsets), dict(meta))
            continue
        if kind == "speech":
            speech.append(SpeechSegment(_int(rec, "p", lineno), _num(rec, "start", lineno), _num(rec, "end", lineno)))
        elif kind == "gaze":
            obj = rec.get("obj")
            if not isinstance(obj, str):
                raise SessionParseError(lineno, "field 'obj' must be a string")
            gaze.append(
                GazeFixation(_int(rec, "p", lineno), obj, _num(rec, "start", lineno), _num(rec, "end", lineno))
            )
        elif kind == "pose":
            p = _int(rec, "p", lineno)
            poses.setdefault(p, []).append(
                PoseSample(
                    p,
                    _num(rec, "t", lineno),
                    _vec(rec, "pos", 3, lineno),  # type: ignore[arg-type]
                    _vec(rec, "quat", 4, lineno),  # type: ignore[arg-type]
                )
            )
        elif kind == "header":
            raise SessionParseError(lineno, "duplicate header record")
        else:
            raise SessionParseError(lineno, f"unknown record type {kind!r}")
    if header is None:
        raise SessionParseError(1, "missing header record")
    participants, offsets, meta = header
    session = canonicalize(
        SessionRecording(
            participants=participants,
            speech=tuple(speech),
            gaze=tuple(gaze),
            poses={p: tuple(v) for p, v in poses.items()},
            clock_offsets=offsets,
            metadata=meta,
        )
    )
    if validate:
        violations = validate_session(session)
        if violations:
            if any(v.rule == "unknown-participant" for v in violations):
                raise MissingParticipantError(violations)
            raise SessionInvariantError(violations)
    return session


def load_session(path: str | Path) -> SessionRecording:
    return loads_session(Path(path).read_text(encoding="utf-8"))
