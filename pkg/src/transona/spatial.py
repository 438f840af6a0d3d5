"""Teacher position traces to SCREEN_ALIGNMENT events and seat visits."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import stop_segments
from .errors import DataError
from .events import Code, Event, EventSource, student_sort_key
from .ingest import ClassLayout, PositionSample

# Slack on the inclusive cosine cut so a cone edge hit exactly in exact
# arithmetic is not lost to the last bit of float rounding.
COS_EPS = 1e-12


@dataclass(frozen=True)
class OrientationSample:
    timestamp: int
    dx: float
    dy: float
    valid: bool


@dataclass(frozen=True)
class AlignmentParams:
    cos_threshold: float = math.cos(math.pi / 4)
    min_displacement_mm: float = 50.0
    max_range_mm: float | None = None

    def __post_init__(self):
        if not -1.0 <= self.cos_threshold <= 1.0:
            raise ValueError("cos_threshold must lie in [-1, 1]")
        if self.min_displacement_mm <= 0:
            raise ValueError("min_displacement_mm must be positive")
        if self.max_range_mm is not None and self.max_range_mm <= 0:
            raise ValueError("max_range_mm must be positive when set")


@dataclass(frozen=True)
class Visit:
    student: str
    start: int
    end: int
    centroid: tuple


@dataclass(frozen=True)
class VisitParams:
    radius_mm: float = 1000.0
    min_duration_s: float = 10.0

    def __post_init__(self):
        if self.radius_mm <= 0 or self.min_duration_s <= 0:
            raise ValueError("visit radius and duration must be positive")


def teacher_trace(samples: Sequence[PositionSample], tag=None) -> list[PositionSample]:
    tags = sorted({s.tag for s in samples})
    if tag is None:
        if len(tags) > 1:
            raise DataError(f"position file has several tags {tags}; set spatial.teacher_tag")
        return sorted(samples, key=lambda s: s.timestamp)
    return sorted((s for s in samples if s.tag == str(tag)), key=lambda s: s.timestamp)


def infer_orientation(samples: Sequence[PositionSample],
                      params: AlignmentParams = AlignmentParams()) -> list[OrientationSample]:
    """Heading from the last two positions, held through sub-threshold moves."""
    out = []
    heading = None
    prev = None
    for s in samples:
        if prev is not None:
            dx, dy = s.x - prev.x, s.y - prev.y
            dist = math.hypot(dx, dy)
            if dist >= params.min_displacement_mm:
                heading = (dx / dist, dy / dist)
        prev = s
        if heading is None:
            out.append(OrientationSample(s.timestamp, 0.0, 0.0, False))
        else:
            out.append(OrientationSample(s.timestamp, heading[0], heading[1], True))
    return out


def screen_alignment(orientations: Sequence[OrientationSample], positions: Sequence[PositionSample],
                     layout: ClassLayout, params: AlignmentParams = AlignmentParams()) -> list[Event]:
    """One SPATIAL event per (sample, student) whose screen lies inside the teacher's view cone."""
    if len(orientations) != len(positions):
        raise DataError("orientation and position samples must be index-aligned")
    ids = sorted(layout.students, key=student_sort_key)
    if not ids:
        return []
    screens = np.array([layout.students[s].screen for s in ids], dtype=float)
    out = []
    for o, p in zip(orientations, positions):
        if o.timestamp != p.timestamp:
            raise DataError(f"orientation/position timestamps differ at t={p.timestamp}")
        if not o.valid:
            continue
        v = screens - np.array([p.x, p.y])
        dist = np.hypot(v[:, 0], v[:, 1])
        ok = dist > 0
        cos = np.full(len(ids), -np.inf)
        cos[ok] = (v[ok, 0] * o.dx + v[ok, 1] * o.dy) / dist[ok]
        aligned = ok & (cos >= params.cos_threshold - COS_EPS)
        if params.max_range_mm is not None:
            aligned &= dist <= params.max_range_mm
        for k in np.flatnonzero(aligned):
            out.append(Event(p.timestamp, EventSource.SPATIAL, frozenset({Code.SCREEN_ALIGNMENT}),
                             student=ids[k],
                             payload={"x": repr(p.x), "y": repr(p.y), "target": ids[k]}))
    return out


def detect_visits(positions: Sequence[PositionSample], layout: ClassLayout,
                  params: VisitParams = VisitParams()) -> list[Visit]:
    """Teacher stops near a seat, assigned to the nearest seat (ties to the lower id)."""
    if not positions:
        return []
    t = np.array([s.timestamp for s in positions], dtype=np.int64)
    x = np.array([s.x for s in positions], dtype=float)
    y = np.array([s.y for s in positions], dtype=float)
    starts, ends = stop_segments(t, x, y, params.radius_mm, int(round(params.min_duration_s * 1000)))
    ids = sorted(layout.students, key=student_sort_key)
    seats = np.array([layout.students[s].seat for s in ids], dtype=float).reshape(-1, 2)
    visits = []
    for i, j in zip(starts, ends):
        cx, cy = float(x[i:j + 1].mean()), float(y[i:j + 1].mean())
        if not ids:
            continue
        d = np.hypot(seats[:, 0] - cx, seats[:, 1] - cy)
        k = int(np.argmin(d))  # first minimum = lowest id in sorted order
        if d[k] <= params.radius_mm:
            visits.append(Visit(ids[k], int(t[i]), int(t[j]), (cx, cy)))
    return visits


def first_visit_times(visits: Sequence[Visit]) -> dict[str, int]:
    first = {}
    for v in visits:
        if v.student not in first or v.start < first[v.student]:
            first[v.student] = v.start
    return first


def visits_to_csv(visits: Sequence[Visit]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["student_id", "start_ms", "end_ms"])
    for v in visits:
        writer.writerow([v.student, v.start, v.end])
    return buf.getvalue()


def visits_from_csv(text: str) -> list[Visit]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != ["student_id", "start_ms", "end_ms"]:
        raise DataError("visits CSV header must be student_id,start_ms,end_ms")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            out.append(Visit(row["student_id"], int(row["start_ms"]), int(row["end_ms"]), (math.nan, math.nan)))
        except ValueError:
            raise DataError(f"visits: line {lineno}: bad timestamp") from None
    return out
