from collections import Counter

import pytest
from hypothesis import HealthCheck, given, settings

from pathmon.eventlog import (
    CollectorSpec,
    EventLog,
    EventLogError,
    EventRecord,
    Trace,
    build_traces,
    cast_value,
    collect_events,
    propagate_case_attributes,
    read_csv,
    write_csv,
)
from pathmon.ingest import SourceTable, TableSchema
from pathmon.xes import XESError, read_xes, write_xes

from conftest import event_logs, ts


def _src(name, columns, rows, case="pid", types=None):
    schema = TableSchema(name, f"{name}.csv", case, columns=types or {})
    return SourceTable(name, list(columns), [dict(zip(columns, r)) for r in rows], case, schema)


VITALS = _src("vitals", ["pid", "d", "t", "hr"], [
    ("p1", "2020-03-10", "10:00", "80"),
    ("p1", "2020-03-10", "", "82"),
    ("p2", "", "11:00", "90"),
    ("p2", "2020-03-11", "09:15", "bad"),
])


def test_single_table_collector():
    spec = CollectorSpec("vitals", ["vitals"], ["d", "t"], activity="Vital Signs", attributes={"hr": "heart_rate"}, attribute_types={"hr": "float"})
    stats = Counter()
    events = collect_events(spec, {"vitals": VITALS}, stats)
    assert [e.case_id for e in events] == ["p1", "p1", "p2"]
    assert events[0].attributes == {"heart_rate": 80.0}
    # date without time: midnight and flagged
    assert events[1].time_inferred and events[1].timestamp.hour == 0
    # uncastable value becomes missing, the event stays
    assert events[2].attributes == {}
    assert stats["excluded_missing_timestamp"] == 1
    assert stats["collected"] == 4


def test_activity_from_column():
    t = _src("meds", ["pid", "ts", "kind"], [("p1", "2020-03-10 10:00:00", "Medication"), ("p1", "2020-03-10 11:00:00", "Oxygen Therapy")])
    spec = CollectorSpec("m", ["meds"], "ts", activity_column="kind")
    assert [e.activity for e in collect_events(spec, {"meds": t})] == ["Medication", "Oxygen Therapy"]


def test_join_collector():
    orders = _src("orders", ["pid", "oid", "ts"], [("p1", "o1", "2020-03-10 10:00:00"), ("p1", "o2", "2020-03-10 12:00:00")])
    results = _src("results", ["pid", "oid", "crp"], [("p1", "o1", "12.5"), ("p1", "o2", "40")])
    spec = CollectorSpec("lab", ["orders", "results"], "ts", activity="Lab Test", attributes={"crp": "crp"},
                         attribute_types={"crp": "float"}, mode="join", join_keys=["pid", "oid"])
    events = collect_events(spec, {"orders": orders, "results": results})
    assert [e.attributes["crp"] for e in events] == [12.5, 40.0]


def test_aggregate_collector():
    t = _src("vit", ["pid", "ts", "hr"], [
        ("p1", "2020-03-10 10:00:00", "80"),
        ("p1", "2020-03-10 10:00:00", "90"),
        ("p1", "2020-03-10 11:00:00", "70"),
    ])
    spec = CollectorSpec("v", ["vit"], "ts", activity="Vital Signs", attributes={"hr": "hr"},
                         attribute_types={"hr": "float"}, mode="aggregate", aggregations={"hr": "mean"})
    assert [e.attributes["hr"] for e in collect_events(spec, {"vit": t})] == [85.0, 70.0]


def test_collector_unknown_column_and_table():
    spec = CollectorSpec("v", ["vitals"], "nope", activity="X")
    with pytest.raises(EventLogError, match="unknown columns"):
        collect_events(spec, {"vitals": VITALS})
    with pytest.raises(EventLogError, match="unknown tables"):
        collect_events(CollectorSpec("v", ["zzz"], "d", activity="X"), {"vitals": VITALS})


def test_collector_spec_validation():
    with pytest.raises(ValueError):
        CollectorSpec("v", ["a"], "ts")
    with pytest.raises(ValueError):
        CollectorSpec("v", ["a"], "ts", activity="X", mode="join")


def test_cast_value():
    assert cast_value("3", "int") == 3
    assert cast_value("3.0", "int") == 3
    assert cast_value("true", "boolean") is True
    assert cast_value("x", "float") is None
    assert cast_value(None, "float") is None
    assert cast_value(" a ", "string") == "a"


def test_propagate_case_attributes(caplog):
    demo = _src("pat", ["pid", "age", "sex"], [("p1", "70", "F"), ("p2", "", "M")], types={"age": "int"})
    events = [EventRecord("p1", "A", ts(0)), EventRecord("p3", "A", ts(0))]
    _, attrs = propagate_case_attributes(events, demo)
    assert attrs == {"p1": {"age": 70, "sex": "F"}, "p3": {}}
    assert "p3" in caplog.text


def test_propagate_duplicate_rows():
    demo = _src("pat", ["pid", "age"], [("p1", "70"), ("p1", "71")])
    with pytest.raises(EventLogError, match="duplicate"):
        propagate_case_attributes([EventRecord("p1", "A", ts(0))], demo)


def test_build_traces_sorted_with_tiebreak():
    events = [
        EventRecord("b", "Vital Signs", ts(5)),
        EventRecord("a", "ICU Discharge", ts(0)),
        EventRecord("a", "Lab Test", ts(0)),
        EventRecord("a", "Admission", ts(0)),
        EventRecord("a", "Triage", ts(0)),
    ]
    log = build_traces(events)
    assert list(log.traces) == ["a", "b"]
    assert [e.activity for e in log.traces["a"].events] == ["Admission", "Triage", "Lab Test", "ICU Discharge"]


def test_build_traces_custom_priority():
    events = [EventRecord("a", "X", ts(0)), EventRecord("a", "Y", ts(0)), EventRecord("a", "Z", ts(0))]
    log = build_traces(events, priority=["Z", "*", "X"])
    assert [e.activity for e in log.traces["a"].events] == ["Z", "Y", "X"]


def test_build_traces_independent_of_input_order():
    events = [EventRecord("a", act, ts(m), {"v": i}, "s", i) for i, (act, m) in enumerate([("L", 3), ("L", 3), ("V", 1), ("A", 1)])]
    assert build_traces(events) == build_traces(list(reversed(events)))


def test_event_record_validation():
    with pytest.raises(ValueError):
        EventRecord("", "A", ts(0))
    with pytest.raises(ValueError):
        EventRecord("p", "A", None)
    assert EventRecord("p", "A", ts(0), {"x": None, "y": "", "z": 1}).attributes == {"z": 1}


# -- CSV and XES --------------------------------------------------------------------------


def test_csv_layout(tmp_path, small_log):
    small_log.traces["p1"].case_attributes["age"] = 70
    small_log.traces["p1"].events[1] = EventRecord("p1", "Vital Signs", ts(30), {"hr": 80.5, "ok": True})
    path = tmp_path / "log.csv"
    write_csv(small_log, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "case_id,activity,timestamp,hr,ok,case:age"
    assert lines[1] == "id,string,datetime,float,boolean,int"
    assert lines[3] == "p1,Vital Signs,2020-03-01T00:30:00Z,80.5,true,70"
    assert lines[2].endswith(",,,70")


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("case_id,activity,timestamp,hr\nid,string,datetime,float\nc1,A,2020-03-01T00:00:00Z,abc\n")
    with pytest.raises(EventLogError, match="row 3"):
        read_csv(p)
    p.write_text("case_id,activity,timestamp\nid,string,datetime\nc1,A,yesterday\n")
    with pytest.raises(EventLogError, match="row 3"):
        read_csv(p)
    p.write_text("case_id,activity,timestamp\n")
    with pytest.raises(EventLogError):
        read_csv(p)


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture, HealthCheck.too_slow])
@given(event_logs(max_cases=50, max_events=10))
def test_csv_round_trip(tmp_path, log):
    path = tmp_path / "rt.csv"
    write_csv(log, path)
    assert read_csv(path) == log


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture, HealthCheck.too_slow])
@given(event_logs(max_cases=50, max_events=10))
def test_xes_round_trip(tmp_path, log):
    path = tmp_path / "rt.xes"
    write_xes(log, path)
    assert read_xes(path) == log


def test_xes_element_names(tmp_path, small_log):
    path = tmp_path / "l.xes"
    write_xes(small_log, path)
    text = path.read_text()
    assert '<date key="time:timestamp" value="2020-03-01T00:00:00Z"' in text
    assert '<string key="concept:name" value="p1"' in text


def test_xes_rejects_unsupported(tmp_path):
    p = tmp_path / "x.xes"
    p.write_text('<log xmlns="http://www.xes-standard.org/"><trace><string key="concept:name" value="a"/>'
                 '<event><string key="concept:name" value="A"/><date key="time:timestamp" value="2020-01-01T00:00:00Z"/>'
                 '<list key="l"/></event></trace></log>')
    with pytest.raises(XESError, match="list"):
        read_xes(p)
    p.write_text("<log><trace>")
    with pytest.raises(XESError):
        read_xes(p)


def test_xes_skips_header_elements(tmp_path):
    p = tmp_path / "x.xes"
    p.write_text('<log xmlns="http://www.xes-standard.org/"><extension name="Concept" prefix="concept" uri="u"/>'
                 '<global scope="event"><string key="concept:name" value="?"/></global>'
                 '<trace><string key="concept:name" value="a"/><event><string key="concept:name" value="A"/>'
                 '<date key="time:timestamp" value="2020-01-01T01:00:00+01:00"/></event></trace></log>')
    log = read_xes(p)
    assert log.traces["a"].events[0].timestamp == ts(-24 * 60 * 60)
