import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathmon.evaluate import (
    CaseSplit,
    SplitError,
    auc,
    case_level_split,
    evaluate,
    f1_score,
    metrics_from_counts,
    prefix_length_report,
    read_predictions,
    threshold_metrics,
    write_predictions,
    write_report,
)
from pathmon.learn import Prediction


def brute_force_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def _preds(scores, labels, lengths=None, cases=None):
    lengths = lengths or [1] * len(scores)
    cases = cases or [f"c{i}" for i in range(len(scores))]
    return [Prediction(f"{c}:{k}", c, k, float(s), int(y)) for s, y, k, c in zip(scores, labels, lengths, cases)]


def test_auc_examples():
    assert auc(scores=[0.1, 0.4, 0.35, 0.8], labels=[0, 0, 1, 1]) == 0.75
    assert auc(scores=[0.5, 0.5], labels=[0, 1]) == 0.5
    assert auc(scores=[0.2, 0.9], labels=[0, 1]) == 1.0
    assert auc(scores=[0.2, 0.9], labels=[1, 1]) is None
    assert auc(_preds([0.3, 0.1], [1, 0])) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 200), st.integers(0, 2**32 - 1))
def test_auc_equals_brute_force_with_ties(n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    scores = np.round(rng.random(n), int(rng.integers(0, 3)))
    assert abs(auc(scores=scores, labels=labels) - brute_force_auc(scores, labels)) <= 1e-12


def test_f1_reference_pairs():
    assert round(f1_score(0.985, 0.725), 3) == 0.835
    assert round(f1_score(0.980, 0.631), 3) == 0.768
    assert f1_score(0.0, 0.0) is None
    assert f1_score(None, 0.5) is None


def test_threshold_metrics():
    m = threshold_metrics(_preds([0.9, 0.6, 0.4, 0.2, 0.7], [1, 0, 1, 0, 1]), 0.5)
    # tp=2 fp=1 fn=1 tn=1
    assert m["accuracy"] == 0.6
    assert m["precision"] == pytest.approx(2 / 3)
    assert m["recall"] == pytest.approx(2 / 3)
    assert m["f1"] == pytest.approx(2 / 3)


def test_undefined_metrics_are_none():
    m = threshold_metrics(_preds([0.1, 0.2], [0, 0]), 0.5)
    assert m["precision"] is None and m["recall"] is None and m["f1"] is None
    assert m["accuracy"] == 1.0
    assert metrics_from_counts(0, 0, 0, 0)["accuracy"] is None


def test_split_size_4479_cases():
    labels = {f"p{i:04d}": int(i < 564) for i in range(4479)}
    s = case_level_split(labels, 0.2, seed=0)
    assert len(s.test_cases) == 896
    assert len(s.train_cases) == 4479 - 896
    test_pos = sum(labels[c] for c in s.test_cases)
    assert test_pos == round(896 * 564 / 4479)


@settings(max_examples=100, deadline=None)
@given(st.integers(4, 300), st.floats(0.05, 0.5), st.floats(0.05, 0.9), st.integers(0, 10**6))
def test_split_disjoint_and_complete(n, rate, frac, seed):
    n_pos = min(max(2, int(n * rate)), n - 2)
    labels = {f"c{i}": int(i < n_pos) for i in range(n)}
    s = case_level_split(labels, frac, seed)
    assert not (s.train_cases & s.test_cases)
    assert s.train_cases | s.test_cases == set(labels)
    for c in (0, 1):
        assert any(labels[x] == c for x in s.test_cases)
        assert any(labels[x] == c for x in s.train_cases)


def test_split_deterministic_and_serializable():
    labels = {f"c{i}": i % 5 == 0 for i in range(50)}
    a = case_level_split(labels, 0.2, 7)
    assert a == case_level_split(labels, 0.2, 7)
    assert a != case_level_split(labels, 0.2, 8)
    assert CaseSplit.from_dict(json.loads(json.dumps(a.to_dict()))) == a


def test_split_errors():
    with pytest.raises(SplitError):
        case_level_split({"a": 1, "b": 0, "c": 0}, 0.2)
    with pytest.raises(SplitError):
        case_level_split({"a": 1, "b": 1, "c": 0, "d": 0}, 1.0)


def test_prefix_length_report():
    preds = _preds([0.9, 0.1, 0.8, 0.7, 0.3], [1, 0, 1, 0, 1], [1, 1, 2, 2, 5], ["a", "b", "a", "b", "a"])
    r = prefix_length_report(preds, [1, 2, 5, 10])
    assert r[1]["auc"] == 1.0 and r[1]["n_cases"] == 2
    assert r[2]["auc"] == 1.0
    assert r[5]["auc"] is None and r[5]["n_prefixes"] == 1
    assert r[10] == {"n_cases": 0, "n_prefixes": 0, "auc": None, "precision": None, "recall": None, "f1": None}


def test_report_files(tmp_path):
    preds = _preds([0.9, 0.1, 0.6, 0.7], [1, 0, 1, 0], [1, 1, 2, 2], ["a", "b", "a", "b"])
    rep = evaluate(preds, "logreg", 0.5, [1, 2])
    write_report(rep, tmp_path / "m.json")
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["overall"]["auc"] == 0.75 and d["overall"]["n_cases"] == 2
    assert [row["length"] for row in d["per_length"]] == [1, 2]
    text = (tmp_path / "m.txt").read_text()
    assert "logreg | 2 | 4 | 0.500 | 0.750 |" in text


def test_predictions_round_trip(tmp_path):
    preds = _preds([0.123456789012345, 1e-300, 1.0], [1, 0, 1])
    write_predictions(preds, tmp_path / "p.csv")
    assert read_predictions(tmp_path / "p.csv") == preds
