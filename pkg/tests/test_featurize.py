import math
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from pathmon.eventlog import EventRecord, Trace
from pathmon.featurize import (
    OOV,
    CaseAttributeSpec,
    FeatureConfig,
    FeatureError,
    SignalSpec,
    activity_features,
    build_feature_table,
    clinical_aggregates,
    fit_spec,
    raw_features,
    read_feature_table,
    temporal_features,
    transition_features,
    write_feature_table,
)
from pathmon.prefixing import TargetSpec, build_prefix_dataset, generate_prefixes

from conftest import event_logs, make_log, ts

CONFIG = FeatureConfig(
    "Admission",
    [SignalSpec("hr"), SignalSpec("spo2", ("latest", "min"))],
    [CaseAttributeSpec("age"), CaseAttributeSpec("sex", "one_hot")],
)


def _trace():
    evs = [
        EventRecord("p", "Admission", ts(0)),
        EventRecord("p", "Vital Signs", ts(10), {"hr": 80.0, "spo2": 96.0}),
        EventRecord("p", "Lab Test", ts(30), {"crp": 5.0}),
        EventRecord("p", "Vital Signs", ts(70), {"hr": 100.0, "time_inferred": True}),
    ]
    return Trace("p", evs, {"age": 60, "sex": "F"})


def _dataset():
    log = make_log(
        {"a": [("Admission", 0), ("Vital Signs", 5), ("Lab Test", 9)], "b": [("Admission", 0), ("Medication", 20)]},
        {"a": {"age": 50, "sex": "M"}, "b": {"age": 70, "sex": "F"}},
    )
    return build_prefix_dataset(log, case_labels={"a": 1, "b": 0})


def test_temporal_features():
    p = generate_prefixes(_trace())[3]
    f = temporal_features(p)
    assert f["elapsed_total"] == 70 * 60
    assert f["time_since_admission"] == 70 * 60
    assert f["gap_mean"] == pytest.approx(70 * 60 / 3)
    assert f["gap_max"] == 40 * 60 and f["gap_last"] == 40 * 60
    assert f["has_inferred_time"] == 1.0


def test_temporal_single_event():
    p = generate_prefixes(_trace())[0]
    f = temporal_features(p)
    assert math.isnan(f["gap_mean"]) and f["missing:gaps"] == 1.0
    assert f["elapsed_total"] == 0.0


def test_activity_and_transition_features():
    spec = fit_spec(_dataset(), CONFIG)
    assert spec.activity_vocabulary == ["Admission", "Lab Test", "Medication", "Vital Signs"]
    p = generate_prefixes(_trace())[3]
    a = activity_features(p, spec)
    assert a["count:Vital Signs"] == 2 and a["freq:Vital Signs"] == 0.5
    assert a["last:Vital Signs"] == 1.0 and a[f"last:{OOV}"] == 0.0
    t = transition_features(p, spec)
    assert t["trans:Admission->Vital Signs"] == 1
    # Vital Signs->Lab Test is known, Lab Test->Vital Signs was never seen in training
    assert t["trans:Vital Signs->Lab Test"] == 1
    assert t[f"trans:{OOV}"] == 1


def test_oov_activity_bucket():
    spec = fit_spec(_dataset(), CONFIG)
    trace = Trace("z", [EventRecord("z", "Admission", ts(0)), EventRecord("z", "Surgery", ts(1))])
    a = activity_features(generate_prefixes(trace)[1], spec)
    assert a[f"count:{OOV}"] == 1 and a[f"last:{OOV}"] == 1


def test_clinical_aggregates():
    p = generate_prefixes(_trace())[3]
    f = clinical_aggregates(p, [SignalSpec("hr"), SignalSpec("crp"), SignalSpec("lymph")])
    assert (f["sig:hr:latest"], f["sig:hr:min"], f["sig:hr:max"], f["sig:hr:mean"]) == (100, 80, 100, 90)
    assert f["missing:sig:hr"] == 0.0
    assert math.isnan(f["sig:lymph:mean"]) and f["missing:sig:lymph"] == 1.0


def test_non_numeric_signal_counted():
    trace = Trace("p", [EventRecord("p", "V", ts(0), {"hr": "high"})])
    q = Counter()
    f = clinical_aggregates(generate_prefixes(trace)[0], [SignalSpec("hr")], q)
    assert f["missing:sig:hr"] == 1.0 and q["non_numeric:hr"] == 1


def test_columns_fixed_order_and_width():
    spec = fit_spec(_dataset(), CONFIG)
    cols = spec.columns
    assert cols[:3] == ["elapsed_total", "time_since_admission", "gap_mean"]
    assert "sig:spo2:latest" in cols and "sig:spo2:max" not in cols
    assert cols[-3:] == ["case:sex=F", "case:sex=M", f"case:sex={OOV}"]
    assert len(raw_features(generate_prefixes(_trace())[2], spec)) == spec.width


def test_standardized_missing_maps_to_zero():
    ds = _dataset()
    spec = fit_spec(ds, CONFIG)
    table = build_feature_table(ds, spec)
    assert np.all(np.isfinite(table.X))
    j = spec.columns.index("sig:hr:mean")
    assert np.all(table.X[:, j] == 0.0)


def test_standardization_uses_train_statistics():
    ds = _dataset()
    spec = fit_spec(ds, CONFIG)
    X = build_feature_table(ds, spec).X
    raw = np.vstack([raw_features(p, spec) for p in sorted(ds.prefixes, key=lambda p: (p.case_id, p.length))])
    live = (np.array(spec.stds) > 0) & ~np.isnan(raw).any(axis=0)
    assert np.allclose(X[:, live].mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(X[:, live].std(axis=0), 1.0)
    assert np.allclose(np.nan_to_num(spec.inverse_standardize(X)[:, live]), np.nan_to_num(raw[:, live]))


def test_fit_spec_empty():
    with pytest.raises(FeatureError):
        fit_spec(_dataset().subset([]), CONFIG)


def test_table_order_and_round_trip(tmp_path):
    ds = _dataset()
    table = build_feature_table(ds, fit_spec(ds, CONFIG))
    assert table.prefix_ids == ["a:1", "a:2", "a:3", "b:1", "b:2"]
    path = tmp_path / "f.csv"
    write_feature_table(table, path)
    back = read_feature_table(path)
    assert back.prefix_ids == table.prefix_ids
    assert np.array_equal(back.X, table.X) and np.array_equal(back.labels, table.labels)
    assert back.spec.fingerprint() == table.spec.fingerprint()
    write_feature_table(back, tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_bytes() == path.read_bytes()


def _mutate(e: EventRecord, data) -> EventRecord:
    choice = data.draw(st.sampled_from(["activity", "time", "attrs"]))
    if choice == "activity":
        return replace(e, activity=data.draw(st.sampled_from(["Vital Signs", "Surgery", "ICU Admission", "Lab Test"])))
    if choice == "time":
        return replace(e, timestamp=e.timestamp + (ts(data.draw(st.integers(1, 5000))) - ts(0)))
    return replace(e, attributes={"hr": data.draw(st.floats(0, 300)), "spo2": data.draw(st.floats(50, 100))})


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(event_logs(max_cases=6, max_events=10, min_events=2), st.data())
def test_suffix_mutation_leaves_prefix_features(log, data):
    ds = build_prefix_dataset(log, TargetSpec(exclude_target_suffix=False), case_labels={c: 0 for c in log.traces})
    spec = fit_spec(ds, CONFIG)
    cid = data.draw(st.sampled_from(sorted(log.traces)))
    trace = log.traces[cid]
    k = data.draw(st.integers(1, len(trace.events) - 1))
    events = list(trace.events)
    for i in range(k, len(events)):
        if data.draw(st.booleans()):
            events[i] = _mutate(events[i], data)
    before = raw_features(generate_prefixes(trace)[k - 1], spec)
    after = raw_features(generate_prefixes(Trace(cid, events, trace.case_attributes))[k - 1], spec)
    assert np.array_equal(before, after, equal_nan=True)
