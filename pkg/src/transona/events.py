"""Core event types and the merged, time-ordered multimodal stream."""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence
from urllib.parse import parse_qsl, urlencode

from .errors import DataError


class Code(str, Enum):
    CORRECT_ATTEMPT = "CORRECT_ATTEMPT"
    CORRECT_FIRST_ATTEMPT = "CORRECT_FIRST_ATTEMPT"
    INCORRECT_ATTEMPT = "INCORRECT_ATTEMPT"
    HINT_REQUEST = "HINT_REQUEST"
    STRUGGLING = "STRUGGLING"
    IDLING = "IDLING"
    TUTOR_MISUSE = "TUTOR_MISUSE"
    RAISING_HAND = "RAISING_HAND"
    TALKING = "TALKING"
    SCREEN_ALIGNMENT = "SCREEN_ALIGNMENT"

    def __str__(self):
        return self.value


BUILTIN_CODES = tuple(c.value for c in Code)
TUTOR_CODES = ("CORRECT_ATTEMPT", "CORRECT_FIRST_ATTEMPT", "INCORRECT_ATTEMPT", "HINT_REQUEST")
DETECTOR_CODES = ("STRUGGLING", "IDLING", "TUTOR_MISUSE")
OUT_OF_TUTOR_CODES = ("RAISING_HAND", "TALKING", "SCREEN_ALIGNMENT")

# User-defined codes live under this prefix so they never collide with built-ins.
USER_CODE_PREFIX = "X:"
_USER_CODE_RE = re.compile(r"^X:[A-Za-z][A-Za-z0-9_]*$")


def user_code(name):
    code = USER_CODE_PREFIX + name
    if not _USER_CODE_RE.match(code):
        raise DataError(f"invalid user code name {name!r}")
    return code


def normalize_code(code):
    if isinstance(code, Code):
        return code.value
    code = str(code)
    if code in BUILTIN_CODES or _USER_CODE_RE.match(code):
        return code
    raise DataError(f"unknown code {code!r} (user codes must look like 'X:name')")


class EventSource(str, Enum):
    SPATIAL = "SPATIAL"
    TUTOR_LOG = "TUTOR_LOG"
    DETECTOR = "DETECTOR"
    OBSERVATION = "OBSERVATION"

    def __str__(self):
        return self.value

    @property
    def tie_rank(self):
        return _TIE_RANK[self]


_TIE_RANK = {EventSource.SPATIAL: 0, EventSource.TUTOR_LOG: 1,
             EventSource.DETECTOR: 2, EventSource.OBSERVATION: 3}
TIE_ORDER = tuple(s.value for s in sorted(EventSource, key=lambda s: _TIE_RANK[s]))


class Phase(str, Enum):
    PRE_VISIT = "PRE_VISIT"
    POST_VISIT = "POST_VISIT"

    def __str__(self):
        return self.value


@dataclass(frozen=True, eq=True)
class Event:
    """One timestamped, source-tagged, coded occurrence.

    ``day`` and ``period`` may be ``None`` for observation and spatial events
    until :func:`transona.ingest.assign_sessions` stamps them.
    """

    timestamp: int
    source: EventSource
    codes: frozenset
    student: str | None = None
    day: str | None = None
    period: int | None = None
    payload: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.timestamp) != self.timestamp:
            raise DataError(f"timestamp must be integer milliseconds, got {self.timestamp!r}")
        object.__setattr__(self, "timestamp", int(self.timestamp))
        if self.timestamp < 0:
            raise DataError(f"negative timestamp {self.timestamp}")
        object.__setattr__(self, "source", EventSource(self.source))
        codes = frozenset(normalize_code(c) for c in self.codes)
        if not codes:
            raise DataError("event must carry at least one code")
        object.__setattr__(self, "codes", codes)
        if self.source is EventSource.TUTOR_LOG and not self.student:
            raise DataError("tutor log events require a student id")
        object.__setattr__(self, "payload", dict(self.payload))

    def __hash__(self):
        return hash(self.key())

    def key(self):
        return (self.timestamp, self.source.value, self.student, self.day, self.period,
                tuple(sorted(self.codes)), tuple(sorted(self.payload.items())))

    def shifted(self, offset_ms):
        return replace(self, timestamp=self.timestamp + int(offset_ms))


@dataclass(frozen=True, order=True)
class UnitKey:
    student: str
    day: str
    period: int
    phase: Phase | None = None

    @property
    def label(self):
        return f"{self.student}|{self.day}|{self.period}"

    @classmethod
    def from_label(cls, label, phase=None):
        student, day, period = label.rsplit("|", 2)
        return cls(student, day, int(period), Phase(phase) if phase else None)


def sort_key(event):
    return (event.timestamp, event.source.tie_rank)


def merge_streams(streams: Sequence[Sequence[Event]], offsets: Mapping | None = None) -> list[Event]:
    """Merge internally ordered event lists into one time-ordered stream.

    ``offsets`` maps an :class:`EventSource` (or its name) to a millisecond
    shift applied before ordering.  Ties at equal shifted timestamps follow
    ``TIE_ORDER`` and then input order.
    """
    shifts = {EventSource(k): int(v) for k, v in (offsets or {}).items()}
    tagged = []
    for s, stream in enumerate(streams):
        prev = None
        for i, ev in enumerate(stream):
            if prev is not None and ev.timestamp < prev:
                raise DataError(f"stream {s} is not time-ordered at index {i}")
            prev = ev.timestamp
            shift = shifts.get(ev.source, 0)
            if shift:
                ev = ev.shifted(shift)
            tagged.append((ev.timestamp, ev.source.tie_rank, s, i, ev))
    tagged.sort(key=lambda item: item[:4])
    return [item[-1] for item in tagged]


def base_rates(stream: Sequence[Event], codes: Iterable[str] = BUILTIN_CODES) -> dict[str, float]:
    """Fraction of events whose code set contains each code."""
    if not stream:
        raise DataError("base rates need a non-empty stream")
    counts = {normalize_code(c): 0 for c in codes}
    for ev in stream:
        for c in ev.codes:
            counts[c] = counts.get(c, 0) + 1
    n = len(stream)
    return {c: k / n for c, k in counts.items()}


STREAM_COLUMNS = ["timestamp_ms", "source", "student_id", "day", "period", "codes", "payload"]


def stream_to_csv(stream: Iterable[Event]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STREAM_COLUMNS)
    for ev in stream:
        writer.writerow([
            ev.timestamp,
            ev.source.value,
            ev.student or "",
            ev.day or "",
            "" if ev.period is None else ev.period,
            ";".join(sorted(ev.codes)),
            urlencode(sorted(ev.payload.items())),
        ])
    return buf.getvalue()


def stream_from_csv(text: str) -> list[Event]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != STREAM_COLUMNS:
        raise DataError(f"stream CSV header must be {','.join(STREAM_COLUMNS)}, got {header}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(STREAM_COLUMNS):
            raise DataError(f"line {lineno}: expected {len(STREAM_COLUMNS)} fields, got {len(row)}")
        ts, source, student, day, period, codes, payload = row
        try:
            out.append(Event(
                timestamp=int(ts),
                source=EventSource(source),
                codes=frozenset(c for c in codes.split(";") if c),
                student=student or None,
                day=day or None,
                period=int(period) if period else None,
                payload=dict(parse_qsl(payload, keep_blank_values=True)),
            ))
        except (ValueError, DataError) as exc:
            raise DataError(f"line {lineno}: {exc}") from exc
    return out


def student_sort_key(student_id):
    """Order ids numerically when they are integers, lexically otherwise."""
    s = str(student_id)
    return (0, int(s), s) if s.isdigit() else (1, 0, s)
