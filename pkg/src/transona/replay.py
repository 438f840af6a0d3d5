"""Replay windows: the teacher-related notes surrounding student actions of interest."""
from __future__ import annotations

import bisect
from typing import Iterable, Mapping, Sequence

from .events import Event, normalize_code, student_sort_key
from .ingest import ObservationRow


def _note_entry(note: ObservationRow, t):
    return {"offset_ms": note.timestamp - t, "timestamp_ms": note.timestamp, "label": note.label,
            "student_id": note.student or "", "note": note.note or ""}


def replay_windows(notes: Sequence[ObservationRow], stream: Iterable[Event], code,
                   students: Iterable[str] | None = None, k: int = 3,
                   groups: Mapping[str, str] | None = None) -> dict:
    """For each ``code`` event by a target student, the ``k`` nearest notes on each side.

    Notes strictly earlier than the event go in ``before`` (nearest first);
    notes at or after it go in ``after``.  Events are sectioned by the
    student's group label (``"ALL"`` without a mapping).
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    code = normalize_code(code)
    targets = None if students is None else {str(s) for s in students}
    groups = dict(groups or {})
    ordered = sorted(notes, key=lambda n: n.timestamp)
    times = [n.timestamp for n in ordered]
    sections = {}
    for ev in stream:
        if code not in ev.codes or ev.student is None:
            continue
        if targets is not None and ev.student not in targets:
            continue
        cut = bisect.bisect_left(times, ev.timestamp)
        before = [_note_entry(n, ev.timestamp) for n in reversed(ordered[max(0, cut - k):cut])] if k else []
        after = [_note_entry(n, ev.timestamp) for n in ordered[cut:cut + k]] if k else []
        label = groups.get(ev.student, "ALL")
        sections.setdefault(label, []).append({
            "student_id": ev.student, "timestamp_ms": ev.timestamp, "day": ev.day or "",
            "period": ev.period, "before": before, "after": after,
        })
    return {
        "code": code,
        "k": k,
        "sections": [
            {"group": g, "events": sorted(evts, key=lambda e: (e["timestamp_ms"],
                                                               student_sort_key(e["student_id"])))}
            for g, evts in sorted(sections.items())
        ],
    }


def format_replay(report: dict) -> str:
    """Plain-text rendering for side-by-side reading."""
    lines = [f"Replay windows for {report['code']} (k={report['k']})"]
    for section in report["sections"]:
        lines.append("")
        lines.append(f"== {section['group']} ({len(section['events'])} events) ==")
        for ev in section["events"]:
            lines.append(f"- student {ev['student_id']} at {ev['timestamp_ms']} ms")
            for side in ("before", "after"):
                for n in ev[side]:
                    s = n["offset_ms"] / 1000.0
                    lines.append(f"    {side:6s} {s:+8.1f}s  [{n['label']}] {n['note']}")
    return "\n".join(lines) + "\n"
