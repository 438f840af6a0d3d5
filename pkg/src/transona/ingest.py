"""Parsers for the tutor log, position trace, observation log and class layout.

All parsers take file *text* and raise :class:`DataError` with the 1-based
line number (header = line 1) of the first offending row.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .errors import DataError
from .events import Code, Event, EventSource, sort_key

TUTOR_COLUMNS = ["timestamp_ms", "student_id", "day", "period", "action", "outcome",
                 "is_first_attempt", "problem", "step", "kc"]
POSITION_COLUMNS = ["timestamp_ms", "x_mm", "y_mm", "tag_id"]
OBSERVATION_COLUMNS = ["timestamp_ms", "label", "student_id", "note"]

ACTIONS = ("ATTEMPT", "HINT_REQUEST")
OUTCOMES = ("CORRECT", "INCORRECT", "HINT")

# Observation labels (case/whitespace-insensitive) that become coded events.
OBSERVATION_LABELS = {
    "talking": Code.TALKING,
    "raising hand": Code.RAISING_HAND,
}

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", "", "-"}


@dataclass(frozen=True)
class TutorTransactionRow:
    timestamp: int
    student: str
    day: str
    period: int
    action: str
    outcome: str
    is_first_attempt: bool
    problem: str
    step: str
    kc: str

    def codes(self):
        if self.action == "HINT_REQUEST":
            return {Code.HINT_REQUEST}
        if self.outcome == "CORRECT":
            if self.is_first_attempt:
                return {Code.CORRECT_ATTEMPT, Code.CORRECT_FIRST_ATTEMPT}
            return {Code.CORRECT_ATTEMPT}
        return {Code.INCORRECT_ATTEMPT}

    def to_event(self):
        payload = {"problem": self.problem, "step": self.step, "kc": self.kc,
                   "action": self.action, "outcome": self.outcome,
                   "first": "1" if self.is_first_attempt else "0"}
        return Event(self.timestamp, EventSource.TUTOR_LOG, frozenset(self.codes()),
                     student=self.student, day=self.day, period=self.period, payload=payload)


@dataclass(frozen=True)
class PositionSample:
    timestamp: int
    x: float
    y: float
    tag: str


@dataclass(frozen=True)
class ObservationRow:
    timestamp: int
    label: str
    student: str | None = None
    note: str | None = None


@dataclass(frozen=True)
class StudentPlace:
    seat: tuple
    screen: tuple


@dataclass
class ClassLayout:
    students: dict
    room: tuple
    anchors: list = field(default_factory=list)

    def __post_init__(self):
        (x0, y0), (x1, y1) = self.room
        lo = (min(x0, x1), min(y0, y1))
        hi = (max(x0, x1), max(y0, y1))
        for sid, place in self.students.items():
            for name, pt in (("seat", place.seat), ("screen", place.screen)):
                if not (lo[0] <= pt[0] <= hi[0] and lo[1] <= pt[1] <= hi[1]):
                    raise DataError(f"student {sid}: {name} point {pt} outside room bounds")

    def to_json(self):
        doc = {"students": [{"id": sid, "seat": list(p.seat), "screen": list(p.screen)}
                            for sid, p in self.students.items()],
               "room": [list(self.room[0]), list(self.room[1])]}
        if self.anchors:
            doc["anchors"] = [list(a) for a in self.anchors]
        return json.dumps(doc, indent=2)


@dataclass(frozen=True)
class Session:
    day: str
    period: int
    start: int
    end: int


def _header(reader, expected, what):
    header = next(reader, None)
    if header is None:
        raise DataError(f"{what}: empty file (expected header {','.join(expected)})")
    header = [h.strip() for h in header]
    if header != expected:
        raise DataError(f"{what}: line 1: header must be {','.join(expected)}, got {','.join(header)}")


def _timestamp(raw, lineno):
    raw = raw.strip()
    if not raw:
        raise DataError(f"line {lineno}: missing timestamp")
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"line {lineno}: malformed timestamp {raw!r}") from None
    if not math.isfinite(value) or value != int(value):
        raise DataError(f"line {lineno}: malformed timestamp {raw!r}")
    return int(value)


def _rows(text, expected, what):
    reader = csv.reader(io.StringIO(text))
    _header(reader, expected, what)
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(expected):
            raise DataError(f"{what}: line {lineno}: expected {len(expected)} fields, got {len(row)}")
        yield lineno, [c.strip() for c in row]


def parse_tutor_rows(text: str) -> list[TutorTransactionRow]:
    rows = []
    for lineno, (ts, student, day, period, action, outcome, first, problem, step, kc) in _rows(
            text, TUTOR_COLUMNS, "tutor log"):
        t = _timestamp(ts, lineno)
        action = action.upper()
        outcome = outcome.upper()
        if action not in ACTIONS:
            raise DataError(f"tutor log: line {lineno}: unknown action {action!r}")
        if action == "HINT_REQUEST":
            outcome = outcome or "HINT"
            if outcome != "HINT":
                raise DataError(f"tutor log: line {lineno}: hint request must have outcome HINT")
        elif outcome not in ("CORRECT", "INCORRECT"):
            raise DataError(f"tutor log: line {lineno}: unknown outcome {outcome!r}")
        if not student:
            raise DataError(f"tutor log: line {lineno}: missing student id")
        flag = first.lower()
        if flag in _TRUE:
            is_first = True
        elif flag in _FALSE:
            is_first = False
        else:
            raise DataError(f"tutor log: line {lineno}: bad is_first_attempt {first!r}")
        try:
            period_i = int(period)
        except ValueError:
            raise DataError(f"tutor log: line {lineno}: bad period {period!r}") from None
        rows.append(TutorTransactionRow(t, student, day, period_i, action, outcome,
                                        is_first and action == "ATTEMPT", problem, step, kc))
    return rows


def parse_tutor_log(text: str) -> list[Event]:
    """Tutor transactions as coded TUTOR_LOG events, ordered by time."""
    events = [row.to_event() for row in parse_tutor_rows(text)]
    events.sort(key=sort_key)
    return events


def tutor_events_to_csv(events: Iterable[Event]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TUTOR_COLUMNS)
    for ev in events:
        if ev.source is not EventSource.TUTOR_LOG:
            continue
        p = ev.payload
        if Code.HINT_REQUEST in ev.codes:
            action, outcome = "HINT_REQUEST", "HINT"
        else:
            action = "ATTEMPT"
            outcome = "CORRECT" if Code.CORRECT_ATTEMPT in ev.codes else "INCORRECT"
        first = "true" if p.get("first") == "1" else "false"
        writer.writerow([ev.timestamp, ev.student, ev.day, ev.period, action, outcome, first,
                         p.get("problem", ""), p.get("step", ""), p.get("kc", "")])
    return buf.getvalue()


def parse_positions(text: str) -> list[PositionSample]:
    """Position samples ordered per tag; a repeated (tag, timestamp) keeps the last row."""
    latest = {}
    for lineno, (ts, x, y, tag) in _rows(text, POSITION_COLUMNS, "positions"):
        t = _timestamp(ts, lineno)
        try:
            xf, yf = float(x), float(y)
        except ValueError:
            raise DataError(f"positions: line {lineno}: non-numeric coordinate") from None
        if not (math.isfinite(xf) and math.isfinite(yf)):
            raise DataError(f"positions: line {lineno}: non-finite coordinate")
        latest[(tag, t)] = PositionSample(t, xf, yf, tag)
    return [latest[k] for k in sorted(latest, key=lambda k: (k[1], k[0]))]


def positions_to_csv(samples: Iterable[PositionSample]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(POSITION_COLUMNS)
    for s in samples:
        writer.writerow([s.timestamp, repr(float(s.x)), repr(float(s.y)), s.tag])
    return buf.getvalue()


def _label_key(label):
    return " ".join(label.replace("_", " ").lower().split())


def parse_observations(text: str, day=None, period=None) -> tuple[list[Event], list[ObservationRow]]:
    """Split observer rows into coded events and free-text notes.

    Recognised labels become OBSERVATION events for their student; any other
    label is kept as a note (for replay windows).  ``day``/``period`` stamp
    the events when the file covers a single session.
    """
    events, notes = [], []
    for lineno, (ts, label, student, note) in _rows(text, OBSERVATION_COLUMNS, "observations"):
        t = _timestamp(ts, lineno)
        code = OBSERVATION_LABELS.get(_label_key(label))
        if code is None:
            notes.append(ObservationRow(t, label, student or None, note or None))
            continue
        payload = {"label": label}
        if student:
            payload["target"] = student
        if note:
            payload["note"] = note
        events.append(Event(t, EventSource.OBSERVATION, frozenset({code}), student=student or None,
                            day=day, period=period, payload=payload))
    events.sort(key=sort_key)
    notes.sort(key=lambda n: n.timestamp)
    return events, notes


def observations_to_csv(events: Iterable[Event] = (), notes: Iterable[ObservationRow] = ()) -> str:
    rows = []
    for ev in events:
        if ev.source is not EventSource.OBSERVATION:
            continue
        rows.append((ev.timestamp, ev.payload.get("label", next(iter(ev.codes)).lower()),
                     ev.student or "", ev.payload.get("note", "")))
    for n in notes:
        rows.append((n.timestamp, n.label, n.student or "", n.note or ""))
    rows.sort(key=lambda r: r[0])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(OBSERVATION_COLUMNS)
    writer.writerows(rows)
    return buf.getvalue()


def parse_layout(text: str) -> ClassLayout:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"layout: invalid JSON: {exc}") from exc
    try:
        students = {}
        for entry in doc["students"]:
            sid = str(entry["id"])
            if sid in students:
                raise DataError(f"layout: duplicate student id {sid}")
            seat = tuple(float(v) for v in entry["seat"])
            screen = tuple(float(v) for v in entry["screen"])
            if len(seat) != 2 or len(screen) != 2:
                raise DataError(f"layout: student {sid}: points must be [x, y]")
            students[sid] = StudentPlace(seat, screen)
        (x0, y0), (x1, y1) = doc["room"]
        room = ((float(x0), float(y0)), (float(x1), float(y1)))
        anchors = [tuple(float(v) for v in a) for a in doc.get("anchors", [])]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"layout: malformed document ({exc!r})") from exc
    return ClassLayout(students, room, anchors)


def clock_offsets(raw: Mapping | None) -> dict:
    """Per-source millisecond shifts; detector events inherit the tutor shift."""
    offsets = {}
    for key, value in (raw or {}).items():
        source = EventSource(str(key).upper())
        value = float(value)
        if not math.isfinite(value):
            raise DataError(f"clock offset for {source.value} must be finite")
        offsets[source] = int(round(value))
    if EventSource.TUTOR_LOG in offsets and EventSource.DETECTOR not in offsets:
        offsets[EventSource.DETECTOR] = offsets[EventSource.TUTOR_LOG]
    return offsets


def session_spans(tutor_events: Iterable[Event]) -> list[Session]:
    """(day, period) time spans covered by tutor activity."""
    spans = {}
    for ev in tutor_events:
        key = (ev.day, ev.period)
        lo, hi = spans.get(key, (ev.timestamp, ev.timestamp))
        spans[key] = (min(lo, ev.timestamp), max(hi, ev.timestamp))
    return sorted((Session(d, p, lo, hi) for (d, p), (lo, hi) in spans.items()),
                  key=lambda s: (s.start, s.day, s.period))


def assign_sessions(events: Sequence[Event], sessions: Sequence[Session], margin_ms=0):
    """Stamp day/period on events that lack them by locating the covering session.

    Returns ``(stamped_events, unassigned_count)``; events more than
    ``margin_ms`` away from every session span are dropped and counted.
    """
    out, dropped = [], 0
    for ev in events:
        if ev.day is not None and ev.period is not None:
            out.append(ev)
            continue
        best, best_dist = None, None
        for s in sessions:
            if s.start <= ev.timestamp <= s.end:
                dist = 0
            else:
                dist = min(abs(ev.timestamp - s.start), abs(ev.timestamp - s.end))
            if dist <= margin_ms and (best_dist is None or dist < best_dist):
                best, best_dist = s, dist
        if best is None:
            dropped += 1
        else:
            out.append(replace(ev, day=best.day, period=best.period))
    return out, dropped
