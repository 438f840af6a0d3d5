"""Seeded synthetic classroom: tutor log, teacher positions, observer codes, layout.

Two planted groups differ in how they learn (iAFM learning-rate deviation)
and in how they respond once the teacher talks to them or looks at their
screen: with probability ``*_hint`` the response is a hint request,
otherwise a (non-first) correct attempt.
"""
from __future__ import annotations

import bisect
import csv
import datetime as _dt
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .afm import HIGH, LOW
from .errors import ConfigError
from .ingest import (OBSERVATION_COLUMNS, POSITION_COLUMNS, TUTOR_COLUMNS, ClassLayout, PositionSample,
                     StudentPlace)
from .spatial import AlignmentParams, infer_orientation, screen_alignment

TEACHER_TAG = "T1"
_EPOCH = _dt.date(2023, 3, 6)


@dataclass(frozen=True)
class SynthParams:
    seed: int | None = None
    n_students: int = 20
    n_days: int = 2
    n_periods: int = 1
    session_minutes: float = 20.0
    n_kcs: int = 3
    steps_per_problem: int = 3
    step_gap_s: tuple = (4.0, 14.0)
    # learning: logit = theta + beta_k + (gamma + delta) * T
    theta: dict = field(default_factory=lambda: {LOW: 0.8, HIGH: -0.8})
    delta: dict = field(default_factory=lambda: {LOW: -0.01, HIGH: 0.04})
    delta_sd: float = 0.004
    gamma: float = 0.01
    idle_prob: float = 0.01
    misuse_prob: float = 0.01
    # behavior after teacher attention
    talk_hint: dict = field(default_factory=lambda: {LOW: 1.0, HIGH: 0.0})
    align_hint: dict = field(default_factory=lambda: {LOW: 1.0, HIGH: 0.0})
    respond_prob: float = 1.0
    # every attention window is mirrored by a same-length window at a random
    # moment with the opposite reaction, so per-group tutor action mixes match
    balance_responses: bool = True
    talk_window_s: float = 15.0
    align_window_s: float = 20.0
    response_gap_s: tuple = (3.0, 8.0)
    # alignment range used for planting; the emitted config sets the same gate
    align_range_mm: float | None = 1500.0
    hand_raise_rate: float = 0.5
    # teacher walk
    walk_speed_mm_s: float = 800.0
    visit_s: tuple = (15.0, 40.0)
    standoff_mm: float = 500.0
    jitter_mm: float = 10.0
    wander_prob: float = 0.2
    seat_spacing_mm: float = 2000.0
    screen_offset_mm: float = 400.0

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("synthetic generation requires a seed")
        if self.n_students < 0 or self.n_days < 1 or self.n_periods < 1:
            raise ConfigError("student, day and period counts must be non-negative / positive")
        probs = [self.idle_prob, self.misuse_prob, self.respond_prob, self.wander_prob]
        for d in (self.talk_hint, self.align_hint):
            probs += [d[LOW], d[HIGH]]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ConfigError("synthetic probabilities must lie in [0, 1]")
        if self.jitter_mm * math.sqrt(2) * 2 >= AlignmentParams().min_displacement_mm:
            raise ConfigError("jitter must stay below the heading displacement threshold")


@dataclass
class SynthData:
    tutor_csv: str
    positions_csv: str
    observations_csv: str
    layout_json: str
    groups_csv: str
    groups: dict

    FILES = ("tutor.csv", "positions.csv", "observations.csv", "layout.json", "groups.csv")

    def write(self, directory) -> dict:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, text in zip(self.FILES, (self.tutor_csv, self.positions_csv, self.observations_csv,
                                            self.layout_json, self.groups_csv)):
            (d / name).write_text(text)
            paths[name] = d / name
        return paths


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _layout(n, p: SynthParams):
    cols = max(1, math.ceil(math.sqrt(n))) if n else 1
    rows = max(1, math.ceil(n / cols)) if n else 1
    sp = p.seat_spacing_mm
    students = {}
    for i in range(n):
        r, c = divmod(i, cols)
        seat = ((c + 1) * sp, (r + 1) * sp)
        students[f"S{i + 1:02d}"] = StudentPlace(seat, (seat[0], seat[1] + p.screen_offset_mm))
    room = ((0.0, 0.0), ((cols + 1) * sp, (rows + 1) * sp))
    return ClassLayout(students, room)


def _walk(pos, dest, t, speed, rng, out):
    """Append 1 Hz samples moving from pos to dest; returns (pos, t)."""
    x, y = pos
    while True:
        dx, dy = dest[0] - x, dest[1] - y
        dist = math.hypot(dx, dy)
        if dist <= speed:
            x, y = dest
            t += 1000
            out.append((t, x, y))
            return (x, y), t
        x += dx / dist * speed
        y += dy / dist * speed
        t += 1000
        out.append((t, x, y))


def _dwell(pos, seconds, t, jitter, rng, out):
    for _ in range(int(seconds)):
        t += 1000
        out.append((t, pos[0] + rng.uniform(-jitter, jitter), pos[1] + rng.uniform(-jitter, jitter)))
    return t


def _teacher_session(members, layout, start, end, p, rng):
    """Teacher samples plus the talking events of one session."""
    room = layout.room
    pos = ((room[0][0] + room[1][0]) / 2.0, room[0][1] + 300.0)
    t = start
    samples = [(t, pos[0], pos[1])]
    talks = []
    while t < end - 60_000 and members:
        sid = members[int(rng.integers(len(members)))]
        seat = layout.students[sid].seat
        approach = (seat[0], seat[1] - p.standoff_mm - 1000.0)
        dest = (seat[0], seat[1] - p.standoff_mm)
        pos, t = _walk(pos, approach, t, p.walk_speed_mm_s, rng, samples)
        pos, t = _walk(pos, dest, t, p.walk_speed_mm_s, rng, samples)
        stay = float(rng.uniform(*p.visit_s))
        talks.append((t + int(rng.uniform(2.0, 5.0) * 1000), sid))
        if stay > 20:
            talks.append((t + int(rng.uniform(12.0, stay - 3.0) * 1000), sid))
        t = _dwell(pos, stay, t, p.jitter_mm, rng, samples)
        if rng.random() < p.wander_prob:
            spot = (float(rng.uniform(room[0][0] + 300, room[1][0] - 300)),
                    float(rng.uniform(room[0][1] + 300, room[1][1] - 300)))
            pos, t = _walk(pos, spot, t, p.walk_speed_mm_s, rng, samples)
            t = _dwell(pos, 3, t, p.jitter_mm, rng, samples)
    return [s for s in samples if s[0] <= end], [tk for tk in talks if tk[0] <= end]


class _Student:
    def __init__(self, sid, group, delta, p: SynthParams, rng):
        self.sid, self.group, self.delta = sid, group, delta
        self.theta = p.theta[group]
        self.p, self.rng = p, rng
        self.opportunity = [0] * p.n_kcs
        self.n_steps = 0
        self.current = None
        self.rows = []

    def session(self, day, period, start, end, windows):
        """Tutor work for one session.

        ``windows`` holds sorted ``(lo, hi, hint_prob)`` spans: inside one the
        student reacts on the current step (hint request with ``hint_prob``,
        otherwise a repeat correct attempt) instead of opening a new step.
        """
        p, rng = self.p, self.rng
        los = [w[0] for w in windows]
        t = start + int(rng.uniform(0, 5000))
        while t < end - 5000:
            k = bisect.bisect_right(los, t) - 1
            current = self.current
            if current is not None and k >= 0 and t < windows[k][1]:
                if rng.random() < p.respond_prob:
                    if rng.random() < windows[k][2]:
                        self._row(t, day, period, "HINT_REQUEST", "HINT", "-", current)
                    else:
                        self._row(t, day, period, "ATTEMPT", "CORRECT", "0", current)
                t += int(rng.uniform(*p.response_gap_s) * 1000)
                continue
            t = self._step(t, day, period)
            if rng.random() < p.idle_prob:
                t += int(rng.uniform(125, 200) * 1000)

    def _row(self, t, day, period, action, outcome, first, where):
        problem, step, kc = where
        self.rows.append((t, self.sid, day, period, action, outcome, first, problem, step, kc))

    def _step(self, t, day, period):
        p, rng = self.p, self.rng
        prob, step = divmod(self.n_steps, p.steps_per_problem)
        kc_i = int(rng.integers(p.n_kcs))
        where = (f"P{prob + 1}", f"S{step + 1}", f"KC{kc_i + 1}")
        self.current = where
        self.n_steps += 1
        T = self.opportunity[kc_i]
        self.opportunity[kc_i] += 1
        eta = self.theta + (p.gamma + self.delta) * T
        if rng.random() < 1.0 / (1.0 + math.exp(-eta)):
            self._row(t, day, period, "ATTEMPT", "CORRECT", "1", where)
        else:
            if rng.random() < 0.4:
                self._row(t, day, period, "HINT_REQUEST", "HINT", "-", where)
            else:
                self._row(t, day, period, "ATTEMPT", "INCORRECT", "1", where)
            if rng.random() < p.misuse_prob:
                for _ in range(3):
                    t += 1000
                    self._row(t, day, period, "HINT_REQUEST", "HINT", "-", where)
            t += int(rng.uniform(*p.step_gap_s) * 1000)
            self._row(t, day, period, "ATTEMPT", "CORRECT", "0", where)
        return t + int(rng.uniform(*p.step_gap_s) * 1000)


def _attention_windows(student, group, talks, aligned, start, end, p: SynthParams, rng):
    """Reaction spans after talk and screen alignment, plus mirrored decoy spans."""
    spans = [(t, t + int(p.talk_window_s * 1000), p.talk_hint[group]) for t, s in talks if s == student]
    spans += [(t, t + int(p.align_window_s * 1000), p.align_hint[group]) for t in aligned.get(student, ())]
    spans.sort()
    merged = []
    for lo, hi, h in spans:
        if merged and lo <= merged[-1][1]:
            plo, phi, ph = merged[-1]
            merged[-1] = (plo, max(phi, hi), ph)
        else:
            merged.append((lo, hi, h))
    if p.balance_responses:
        decoys = []
        for lo, hi, h in merged:
            d0 = int(rng.uniform(start, max(start + 1, end - (hi - lo))))
            decoys.append((d0, d0 + hi - lo, 1.0 - h))
        out = []
        for w in sorted(merged + decoys):
            if out and w[0] < out[-1][1]:
                continue
            out.append(w)
        merged = out
    return merged


def synth_generate(params: SynthParams) -> SynthData:
    p = params
    rng = np.random.default_rng(np.random.SeedSequence(int(p.seed)))
    layout = _layout(p.n_students, p)
    ids = list(layout.students)
    order = rng.permutation(len(ids)) if ids else np.zeros(0, dtype=int)
    groups = {}
    for rank, k in enumerate(order):
        groups[ids[int(k)]] = LOW if rank < len(ids) // 2 else HIGH
    students = {}
    for sid in ids:
        g = groups[sid]
        students[sid] = _Student(sid, g, float(p.delta[g] + rng.normal(0.0, p.delta_sd)), p, rng)

    align = AlignmentParams(max_range_mm=p.align_range_mm)
    session_ms = int(p.session_minutes * 60_000)
    positions, observations = [], []
    for d in range(p.n_days):
        day = (_EPOCH + _dt.timedelta(days=d)).isoformat()
        for per in range(p.n_periods):
            start = 60_000 + (d * p.n_periods + per) * (session_ms + 30 * 60_000)
            end = start + session_ms
            members = [sid for i, sid in enumerate(ids) if i % p.n_periods == per]
            samples, talks = _teacher_session(members, layout, start, end, p, rng)
            positions += [(t, f"{x:.1f}", f"{y:.1f}", TEACHER_TAG) for t, x, y in samples]
            aligned = {}
            if members:
                trace = [PositionSample(t, float(f"{x:.1f}"), float(f"{y:.1f}"), TEACHER_TAG)
                         for t, x, y in samples]
                for ev in screen_alignment(infer_orientation(trace, align), trace, layout, align):
                    aligned.setdefault(ev.student, []).append(ev.timestamp)
            for t, sid in talks:
                observations.append((t, "talking", sid, ""))
                if rng.random() < 0.5:
                    text = "teacher asks what the next step is?" if rng.random() < 0.5 else \
                        "teacher explains the step"
                    observations.append((t + 1000, "teacher note", sid, text))
            for sid in members:
                st = students[sid]
                st.session(day, per + 1, start, end,
                           _attention_windows(sid, st.group, talks, aligned, start, end, p, rng))
                for _ in range(int(rng.poisson(p.hand_raise_rate))):
                    observations.append((int(rng.uniform(start, end)), "raising hand", sid, ""))

    tutor = sorted((r for st in students.values() for r in st.rows), key=lambda r: (r[0], r[1]))
    positions.sort(key=lambda r: r[0])
    observations.sort(key=lambda r: (r[0], r[2], r[1]))
    return SynthData(
        tutor_csv=_csv(TUTOR_COLUMNS, tutor),
        positions_csv=_csv(POSITION_COLUMNS, positions),
        observations_csv=_csv(OBSERVATION_COLUMNS, observations),
        layout_json=layout.to_json() + "\n",
        groups_csv=_csv(["student_id", "group"], sorted(groups.items())),
        groups=groups,
    )


def params_from_dict(raw: dict) -> SynthParams:
    known = set(SynthParams.__dataclass_fields__)
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"unknown synth parameter(s): {', '.join(extra)}")
    values = {}
    for k, v in raw.items():
        values[k] = tuple(v) if isinstance(v, list) else v
    try:
        return SynthParams(**values)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"bad synth parameters: {exc}") from None


def params_to_dict(p: SynthParams) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(p).items()}


def config_text(seed, output_dir="out", replicates=1000, max_range_mm=None, extra: str = "") -> str:
    """A pipeline config pointing at the files written by :meth:`SynthData.write`."""
    return (
        "[inputs]\n"
        'tutor = "tutor.csv"\n'
        'positions = "positions.csv"\n'
        'observations = "observations.csv"\n'
        'layout = "layout.json"\n\n'
        "[output]\n"
        f"dir = {json.dumps(str(output_dir))}\n\n"
        "[bootstrap]\n"
        f"replicates = {int(replicates)}\n"
        f"seed = {int(seed)}\n"
        + (f"\n[spatial]\nmax_range_mm = {float(max_range_mm)!r}\n" if max_range_mm is not None else "")
        + (("\n" + extra) if extra else "")
    )
