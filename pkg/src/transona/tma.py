"""Horizon-filtered unit contexts and transmodal connection accumulation."""
from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._accel import thread_cap
from ._kernels import accumulate_counts
from .errors import DataError
from .events import (BUILTIN_CODES, STREAM_COLUMNS, Code, Event, EventSource, Phase, UnitKey,
                     normalize_code, stream_from_csv, stream_to_csv, student_sort_key)

WHOLE = "WHOLE"
SPLIT_BY_FIRST_VISIT = "SPLIT_BY_FIRST_VISIT"
UNIT_MODES = (WHOLE, SPLIT_BY_FIRST_VISIT)

# Codes every student in the period can witness; everything else is private.
PUBLIC_CODES = frozenset({Code.TALKING.value})


@dataclass(frozen=True)
class TifConfig:
    """Boxcar influence windows in seconds, one per event source."""

    tutor_log: float = 5.0
    detector: float = 10.0
    observation: float = 15.0
    spatial: float = 20.0

    def __post_init__(self):
        for name in ("tutor_log", "detector", "observation", "spatial"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TIF window for {name} must be positive")

    def window_ms(self, source: EventSource) -> int:
        return int(round(getattr(self, EventSource(source).value.lower()) * 1000))

    @property
    def max_window_ms(self):
        return max(self.window_ms(s) for s in EventSource)


@dataclass
class UnitContext:
    key: UnitKey
    events: list = field(default_factory=list)


@dataclass
class AdjacencyVector:
    codes: tuple
    weights: np.ndarray  # (C, C), weights[a, b] counts a -> b
    total_events: int = 0

    @property
    def vector(self):
        return self.weights.reshape(-1).astype(float)

    def weight(self, a, b):
        return self.weights[self.codes.index(normalize_code(a)), self.codes.index(normalize_code(b))]


def edge_labels(codes: Sequence[str]) -> list[str]:
    return [f"{a}->{b}" for a in codes for b in codes]


def build_units(stream: Sequence[Event], layout=None, first_visit_times: Mapping | None = None,
                mode: str = WHOLE, public_codes=PUBLIC_CODES) -> dict[UnitKey, UnitContext]:
    """Personalized contexts per (student, day, period).

    A unit exists for every student with a private event (tutor, detector,
    hand raise) in the session.  Its context holds that student's private
    events, screen alignments targeting them, and every public event of the
    session.  In split mode a visited student's events at or after the first
    visit start go to the POST_VISIT unit.
    """
    if mode not in UNIT_MODES:
        raise ValueError(f"unit mode must be one of {UNIT_MODES}")
    first_visit_times = dict(first_visit_times or {})
    sessions = {}
    for ev in stream:
        if ev.day is None or ev.period is None or ev.student is None:
            continue
        if ev.codes & public_codes or Code.SCREEN_ALIGNMENT in ev.codes:
            continue
        sessions.setdefault((ev.day, ev.period), set()).add(ev.student)

    if layout is not None:
        known = set(layout.students)
        missing = sorted({s for members in sessions.values() for s in members} - known)
        if missing:
            warnings.warn(f"students absent from layout (no spatial codes): {', '.join(missing)}",
                          stacklevel=2)

    raw = {}
    for (day, period), members in sessions.items():
        for s in members:
            raw[(s, day, period)] = []
    for ev in stream:
        if ev.day is None or ev.period is None:
            continue
        if ev.codes & public_codes:
            for s in sessions.get((ev.day, ev.period), ()):
                raw[(s, ev.day, ev.period)].append(ev)
        elif ev.student is not None and (ev.student, ev.day, ev.period) in raw:
            raw[(ev.student, ev.day, ev.period)].append(ev)

    units = {}
    for (s, day, period), events in raw.items():
        if mode == WHOLE:
            key = UnitKey(s, day, period)
            units[key] = UnitContext(key, events)
            continue
        # keys may be per session (student, day, period) or per student
        cut = first_visit_times.get((s, day, period), first_visit_times.get(s))
        if cut is None:
            key = UnitKey(s, day, period, Phase.PRE_VISIT)
            units[key] = UnitContext(key, events)
            continue
        pre = [e for e in events if e.timestamp < cut]
        post = [e for e in events if e.timestamp >= cut]
        for phase, part in ((Phase.PRE_VISIT, pre), (Phase.POST_VISIT, post)):
            if part:
                key = UnitKey(s, day, period, phase)
                units[key] = UnitContext(key, part)
    return dict(sorted(units.items(), key=lambda kv: _unit_order(kv[0])))


def _unit_order(key: UnitKey):
    return (student_sort_key(key.student), key.day, key.period, key.phase.value if key.phase else "")


def context_arrays(events: Sequence[Event], tif: TifConfig, codes: Sequence[str]):
    """Times, per-event windows and code membership for events touching ``codes``."""
    index = {c: i for i, c in enumerate(codes)}
    times, windows, rows = [], [], []
    for ev in events:
        hit = [index[c] for c in ev.codes if c in index]
        if not hit:
            continue
        row = np.zeros(len(codes), dtype=np.uint8)
        row[hit] = 1
        times.append(ev.timestamp)
        windows.append(tif.window_ms(ev.source))
        rows.append(row)
    members = np.array(rows, dtype=np.uint8).reshape(len(rows), len(codes))
    times = np.array(times, dtype=np.int64)
    if len(times) > 1 and np.any(np.diff(times) < 0):
        raise DataError("unit context is not time-ordered")
    return times, np.array(windows, dtype=np.int64), members


def accumulate(context: UnitContext | Sequence[Event], tif: TifConfig = TifConfig(),
               codes: Sequence[str] = BUILTIN_CODES, binary: bool = False) -> AdjacencyVector:
    """Directed connection counts under per-source boxcar windows.

    A prior event connects to a later one when the lag is positive and no
    longer than the prior event's window; every (prior code, response code)
    pair then gains one.  ``binary`` counts a prior code at most once per
    responding event.
    """
    codes = tuple(normalize_code(c) for c in codes)
    events = context.events if isinstance(context, UnitContext) else context
    times, windows, members = context_arrays(events, tif, codes)
    W = accumulate_counts(times, windows, members, binary)
    return AdjacencyVector(codes, W, int(len(times)))


def accumulate_units(units: Mapping[UnitKey, UnitContext], tif: TifConfig = TifConfig(),
                     codes: Sequence[str] = BUILTIN_CODES, binary=False, threads=None):
    keys = list(units)
    threads = thread_cap() if threads is None else max(1, int(threads))
    work = lambda k: accumulate(units[k], tif, codes, binary)  # noqa: E731
    if threads > 1 and len(keys) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vectors = list(pool.map(work, keys))
    else:
        vectors = [work(k) for k in keys]
    return dict(zip(keys, vectors))


def adjacency_to_csv(vectors: Mapping[UnitKey, AdjacencyVector], groups: Mapping[str, str] | None = None) -> str:
    groups = groups or {}
    vectors = dict(vectors)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    codes = next(iter(vectors.values())).codes if vectors else tuple(BUILTIN_CODES)
    writer.writerow(["unit", "phase", "group"] + edge_labels(codes))
    for key, vec in vectors.items():
        if vec.codes != codes:
            raise DataError("all adjacency vectors must share one code universe")
        writer.writerow([key.label, key.phase.value if key.phase else "", groups.get(key.student, "")]
                        + [_num(v) for v in vec.weights.reshape(-1)])
    return buf.getvalue()


def _num(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


@dataclass
class AdjacencyTable:
    keys: list
    groups: list
    codes: tuple
    matrix: np.ndarray  # (U, C*C)


def adjacency_from_csv(text: str) -> AdjacencyTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[:3] != ["unit", "phase", "group"]:
        raise DataError("adjacency CSV must start with unit,phase,group")
    labels = header[3:]
    C = int(round(len(labels) ** 0.5))
    if C * C != len(labels):
        raise DataError("adjacency CSV must have C^2 weight columns")
    codes = tuple(lbl.split("->")[0] for lbl in labels[::C])
    if edge_labels(codes) != labels:
        raise DataError("adjacency CSV columns must be ordered a->b over one code list")
    keys, groups, rows = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            keys.append(UnitKey.from_label(row[0], row[1] or None))
            groups.append(row[2])
            rows.append([float(v) for v in row[3:]])
        except ValueError as exc:
            raise DataError(f"adjacency CSV line {lineno}: {exc}") from exc
    matrix = np.array(rows, dtype=float).reshape(len(rows), C * C)
    return AdjacencyTable(keys, groups, codes, matrix)


def units_to_csv(units: Mapping[UnitKey, UnitContext]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header_written = False
    for key, ctx in units.items():
        body = stream_to_csv(ctx.events).splitlines()
        if not header_written:
            writer.writerow(["unit", "phase"] + body[0].split(","))
            header_written = True
        for line in body[1:]:
            buf.write(f"{key.label},{key.phase.value if key.phase else ''},{line}\n")
    if not header_written:
        writer.writerow(["unit", "phase"] + STREAM_COLUMNS)
    return buf.getvalue()


def units_from_csv(text: str) -> dict[UnitKey, UnitContext]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["unit", "phase"] + STREAM_COLUMNS:
        raise DataError("units CSV must have unit,phase followed by the stream columns")
    grouped = {}
    for row in reader:
        if not row:
            continue
        key = UnitKey.from_label(row[0], row[1] or None)
        grouped.setdefault(key, []).append(row[2:])
    units = {}
    for key, rows in grouped.items():
        sub = io.StringIO()
        w = csv.writer(sub, lineterminator="\n")
        w.writerow(STREAM_COLUMNS)
        w.writerows(rows)
        units[key] = UnitContext(key, stream_from_csv(sub.getvalue()))
    return units
