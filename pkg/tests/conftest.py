from __future__ import annotations

from datetime import datetime, timedelta

import pytest
from hypothesis import strategies as st

from pathmon.eventlog import EventLog, EventRecord, Trace, build_traces
from pathmon.timeutil import UTC

T0 = datetime(2020, 3, 1, tzinfo=UTC)

_text = st.text(
    alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd"), whitelist_characters=" ,;\"'-_."),
    min_size=1,
    max_size=12,
)
_values = {
    "string": _text,
    "int": st.integers(-10**6, 10**6),
    "float": st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
    "boolean": st.booleans(),
}
ACTIVITIES = ("Admission", "Vital Signs", "Lab Test", "Medication", "Oxygen Therapy", "ICU Admission", "ICU Discharge")


def ts(minutes: float) -> datetime:
    return T0 + timedelta(minutes=minutes)


@st.composite
def event_logs(draw, max_cases: int = 8, max_events: int = 12, min_events: int = 1, activities=ACTIVITIES):
    """Random logs with a fixed type per attribute name."""
    ev_schema = draw(st.dictionaries(st.sampled_from(["spo2", "hr", "drug", "flag", "n", "note"]), st.sampled_from(list(_values)), max_size=4))
    case_schema = draw(st.dictionaries(st.sampled_from(["age", "sex", "ward"]), st.sampled_from(list(_values)), max_size=2))
    n_cases = draw(st.integers(1, max_cases))
    events, case_attrs = [], {}
    for i in range(n_cases):
        cid = f"c{i:03d}"
        case_attrs[cid] = {k: draw(_values[t]) for k, t in case_schema.items() if draw(st.booleans())}
        for j in range(draw(st.integers(min_events, max_events))):
            attrs = {k: draw(_values[t]) for k, t in ev_schema.items() if draw(st.booleans())}
            minute = draw(st.integers(0, 60 * 24 * 20))
            events.append(EventRecord(cid, draw(st.sampled_from(activities)), ts(minute), attrs, "gen", j))
    return build_traces(events, case_attrs)


def make_log(spec: dict[str, list[tuple[str, float]]], case_attrs=None) -> EventLog:
    """Log from {case: [(activity, minutes after T0), ...]} keeping the given order."""
    traces = {}
    for cid, evs in spec.items():
        traces[cid] = Trace(cid, [EventRecord(cid, a, ts(m), {}, "t", i) for i, (a, m) in enumerate(evs)], dict((case_attrs or {}).get(cid, {})))
    return EventLog(traces)


@pytest.fixture
def small_log() -> EventLog:
    return make_log(
        {
            "p1": [("Admission", 0), ("Vital Signs", 30), ("Lab Test", 60), ("ICU Admission", 120), ("ICU Discharge", 900)],
            "p2": [("Admission", 0), ("Vital Signs", 10), ("Medication", 20)],
            "p3": [("ICU Admission", 0), ("Vital Signs", 5)],
        }
    )


# -- acceptance summary ------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n:>2}: {line}")
