"""Decision-rule detectors for idling, tutor misuse and struggle."""
from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Iterable

from .events import Code, Event, EventSource, sort_key


@dataclass(frozen=True)
class DetectorParams:
    idle_threshold_s: float = 120.0
    misuse_gap_s: float = 3.0
    misuse_run_len: int = 3
    struggle_window: int = 8
    struggle_rate_cutoff: float = 0.3
    struggle_cooldown: int = 10

    def __post_init__(self):
        for name in ("idle_threshold_s", "misuse_gap_s", "misuse_run_len",
                     "struggle_window", "struggle_cooldown"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.struggle_rate_cutoff < 1:
            raise ValueError("struggle_rate_cutoff must lie in (0, 1)")


def _tutor_sessions(events):
    """Tutor transactions grouped per (student, day, period), time-ordered."""
    groups = defaultdict(list)
    for ev in events:
        if ev.source is EventSource.TUTOR_LOG:
            groups[(ev.student, ev.day, ev.period)].append(ev)
    for seq in groups.values():
        seq.sort(key=sort_key)
    return groups


def _detector_event(code, trigger, timestamp, **payload):
    return Event(int(timestamp), EventSource.DETECTOR, frozenset({code}), student=trigger.student,
                 day=trigger.day, period=trigger.period, payload=payload)


def detect_idle(events: Iterable[Event], params: DetectorParams = DetectorParams()) -> list[Event]:
    """IDLING at gap start + threshold for every inter-transaction gap above the threshold.

    Gaps are measured within one class session, so the break between two
    periods never counts as idling.
    """
    threshold = int(round(params.idle_threshold_s * 1000))
    out = []
    for seq in _tutor_sessions(events).values():
        for prev, cur in zip(seq, seq[1:]):
            if cur.timestamp - prev.timestamp > threshold:
                out.append(_detector_event(Code.IDLING, prev, prev.timestamp + threshold,
                                           detector="idle"))
    out.sort(key=sort_key)
    return out


def detect_misuse(events: Iterable[Event], params: DetectorParams = DetectorParams()) -> list[Event]:
    """TUTOR_MISUSE once per run of rapid assistance-exploiting actions on one problem.

    An action exploits assistance if it is a hint request, or an attempt made
    within ``misuse_gap_s`` of the latest hint on the same problem.  A run is
    broken by a non-exploiting action, a gap above ``misuse_gap_s`` or a
    problem change.
    """
    gap = int(round(params.misuse_gap_s * 1000))
    out = []
    for seq in _tutor_sessions(events).values():
        run, emitted = 0, False
        last_t = last_problem = last_hint_t = None
        for ev in seq:
            problem = ev.payload.get("problem")
            if problem != last_problem:
                run, emitted, last_hint_t = 0, False, None
            is_hint = Code.HINT_REQUEST in ev.codes
            exploit = is_hint or (last_hint_t is not None and ev.timestamp - last_hint_t <= gap)
            if exploit and run > 0 and ev.timestamp - last_t <= gap:
                run += 1
            elif exploit:
                run, emitted = 1, False
            else:
                run, emitted = 0, False
            if is_hint:
                last_hint_t = ev.timestamp
            last_t, last_problem = ev.timestamp, problem
            if run >= params.misuse_run_len and not emitted:
                out.append(_detector_event(Code.TUTOR_MISUSE, ev, ev.timestamp,
                                           detector="misuse", problem=problem or ""))
                emitted = True
    out.sort(key=sort_key)
    return out


def detect_struggle(events: Iterable[Event], params: DetectorParams = DetectorParams()) -> list[Event]:
    """STRUGGLING when the trailing first-attempt success rate on a kc drops below the cutoff."""
    from .afm import first_encounters

    out = []
    history = defaultdict(lambda: deque(maxlen=params.struggle_window))
    seen = defaultdict(int)
    cooldown = defaultdict(int)
    for ev, correct in first_encounters(events):
        kc = ev.payload.get("kc")
        if not kc:
            continue
        key = (ev.student, kc)
        history[key].append(1 if correct else 0)
        seen[key] += 1
        if cooldown[key] > 0:
            cooldown[key] -= 1
            continue
        window = history[key]
        if seen[key] >= params.struggle_window and sum(window) / len(window) < params.struggle_rate_cutoff:
            out.append(_detector_event(Code.STRUGGLING, ev, ev.timestamp, detector="struggle", kc=kc))
            cooldown[key] = params.struggle_cooldown
    out.sort(key=sort_key)
    return out


def run_detectors(events: Iterable[Event], params: DetectorParams = DetectorParams()) -> list[Event]:
    events = list(events)
    out = detect_idle(events, params) + detect_misuse(events, params) + detect_struggle(events, params)
    out.sort(key=sort_key)
    return out
