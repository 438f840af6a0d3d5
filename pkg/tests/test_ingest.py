import json

import pytest
from hypothesis import given, settings, strategies as st

from transona.errors import DataError
from transona.events import Code, Event, EventSource
from transona.ingest import (ClassLayout, ObservationRow, PositionSample, Session, StudentPlace,
                             assign_sessions, clock_offsets, observations_to_csv, parse_layout,
                             parse_observations, parse_positions, parse_tutor_log, parse_tutor_rows,
                             positions_to_csv, session_spans, tutor_events_to_csv)

HEADER = "timestamp_ms,student_id,day,period,action,outcome,is_first_attempt,problem,step,kc\n"


def test_tutor_code_mapping():
    text = HEADER + ("1000,7,d1,1,ATTEMPT,CORRECT,true,p1,s1,kc1\n"
                     "2000,7,d1,1,ATTEMPT,CORRECT,false,p1,s1,kc1\n"
                     "3000,7,d1,1,ATTEMPT,INCORRECT,1,p1,s2,kc1\n"
                     "4000,7,d1,1,HINT_REQUEST,HINT,-,p1,s2,kc1\n")
    events = parse_tutor_log(text)
    assert [e.codes for e in events] == [
        {"CORRECT_ATTEMPT", "CORRECT_FIRST_ATTEMPT"}, {"CORRECT_ATTEMPT"}, {"INCORRECT_ATTEMPT"}, {"HINT_REQUEST"}]
    assert events[0].payload["kc"] == "kc1" and events[0].payload["problem"] == "p1"
    assert all(e.source is EventSource.TUTOR_LOG and e.student == "7" for e in events)


def test_tutor_errors_name_the_line():
    with pytest.raises(DataError, match="line 2"):
        parse_tutor_log(HEADER + "1000,7,d1,1,FOO,CORRECT,1,p,s,k\n")
    with pytest.raises(DataError, match="line 3"):
        parse_tutor_log(HEADER + "1000,7,d1,1,ATTEMPT,CORRECT,1,p,s,k\nabc,7,d1,1,ATTEMPT,CORRECT,1,p,s,k\n")
    with pytest.raises(DataError):
        parse_tutor_log("timestamp,student\n")


def test_tutor_round_trip():
    text = HEADER + ("1000,7,d1,1,ATTEMPT,CORRECT,1,p1,s1,kc1\n"
                     "2000,8,d1,1,HINT_REQUEST,HINT,0,p1,s1,kc1\n")
    events = parse_tutor_log(text)
    assert parse_tutor_log(tutor_events_to_csv(events)) == events
    assert len(parse_tutor_rows(text)) == 2


def test_positions_order_duplicates_and_errors():
    text = "timestamp_ms,x_mm,y_mm,tag_id\n2000,1,1,T\n1000,0,0,T\n1000,5,5,T\n"
    samples = parse_positions(text)
    assert [s.timestamp for s in samples] == [1000, 2000]
    assert (samples[0].x, samples[0].y) == (5.0, 5.0)
    with pytest.raises(DataError, match="line 2"):
        parse_positions("timestamp_ms,x_mm,y_mm,tag_id\n1000,abc,0,T\n")
    with pytest.raises(DataError):
        parse_positions("timestamp_ms,x_mm,y_mm,tag_id\n1000,nan,0,T\n")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**7), st.floats(-1e5, 1e5), st.floats(-1e5, 1e5),
                          st.sampled_from(["T1", "T2"])), max_size=10, unique_by=lambda r: (r[0], r[3])))
def test_positions_round_trip(rows):
    samples = [PositionSample(t, x, y, tag) for t, x, y, tag in rows]
    parsed = parse_positions(positions_to_csv(samples))
    assert parse_positions(positions_to_csv(parsed)) == parsed
    assert sorted(parsed, key=lambda s: (s.timestamp, s.tag)) == parsed
    assert len(parsed) == len(samples)


def test_observation_labels_and_notes():
    text = ("timestamp_ms,label,student_id,note\n"
            "1000,talking,7,\n2000,Raising_Hand,3,\n3000,teacher explains slope,,points at the graph\n")
    events, notes = parse_observations(text)
    assert [sorted(e.codes) for e in events] == [["TALKING"], ["RAISING_HAND"]]
    assert events[0].payload["target"] == "7" and events[0].student == "7"
    assert notes == [ObservationRow(3000, "teacher explains slope", None, "points at the graph")]
    with pytest.raises(DataError, match="line 2"):
        parse_observations("timestamp_ms,label,student_id,note\n,talking,7,\n")


def test_observation_round_trip():
    text = ("timestamp_ms,label,student_id,note\n"
            "1000,talking,7,\n2000,raising hand,3,\n3000,note label,,a, quoted \"note\"\n")
    text = text.replace('a, quoted "note"', '"a, quoted ""note"""')
    events, notes = parse_observations(text)
    again = parse_observations(observations_to_csv(events, notes))
    assert again == (events, notes)


def test_every_observation_row_is_accounted_for():
    rows = [f"{i * 1000},{lbl},{i},x" for i, lbl in enumerate(["talking", "nope", "raising hand", "other"])]
    events, notes = parse_observations("timestamp_ms,label,student_id,note\n" + "\n".join(rows) + "\n")
    assert len(events) + len(notes) == 4


def test_layout_parse_and_validation():
    doc = {"students": [{"id": 1, "seat": [100, 100], "screen": [100, 500]}], "room": [[0, 0], [1000, 1000]]}
    layout = parse_layout(json.dumps(doc))
    assert layout.students["1"] == StudentPlace((100.0, 100.0), (100.0, 500.0))
    assert parse_layout(layout.to_json()) == layout
    doc["students"][0]["screen"] = [5000, 0]
    with pytest.raises(DataError, match="outside room"):
        parse_layout(json.dumps(doc))
    doc["students"] = [{"id": 1, "seat": [1, 1], "screen": [1, 1]}] * 2
    with pytest.raises(DataError, match="duplicate"):
        parse_layout(json.dumps(doc))
    with pytest.raises(DataError):
        parse_layout("{")


def test_clock_offsets_detector_inherits_tutor_shift():
    off = clock_offsets({"tutor_log": 250, "spatial": -100})
    assert off[EventSource.DETECTOR] == 250 and off[EventSource.SPATIAL] == -100
    with pytest.raises(DataError):
        clock_offsets({"observation": float("inf")})


def test_session_assignment():
    tutor = [Event(t, EventSource.TUTOR_LOG, frozenset({Code.HINT_REQUEST}), student="1", day=d, period=p)
             for t, d, p in ((1000, "d1", 1), (9000, "d1", 1), (50_000, "d1", 2), (60_000, "d1", 2))]
    sessions = session_spans(tutor)
    assert sessions == [Session("d1", 1, 1000, 9000), Session("d1", 2, 50_000, 60_000)]
    obs = [Event(t, EventSource.OBSERVATION, frozenset({Code.TALKING}), student="1") for t in (500, 12_000, 30_000)]
    stamped, dropped = assign_sessions(obs, sessions, margin_ms=5000)
    assert dropped == 1
    assert [(e.day, e.period) for e in stamped] == [("d1", 1), ("d1", 1)]
