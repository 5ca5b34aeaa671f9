"""Case-level splitting and classification metrics, overall and by prefix length."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .learn import Prediction

REPORT_LENGTHS = (1, 5, 10, 20, 30, 40, 50)


class SplitError(Exception):
    pass


@dataclass(frozen=True)
class CaseSplit:
    train_cases: frozenset[str]
    test_cases: frozenset[str]
    seed: int
    test_fraction: float

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "test_fraction": self.test_fraction,
            "train_cases": sorted(self.train_cases),
            "test_cases": sorted(self.test_cases),
        }

    @classmethod
    def from_dict(cls, d) -> "CaseSplit":
        return cls(frozenset(d["train_cases"]), frozenset(d["test_cases"]), d["seed"], d["test_fraction"])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def case_level_split(case_labels: Mapping[str, int], test_fraction: float = 0.2, seed: int = 0) -> CaseSplit:
    """Seeded split of case ids, stratified by label.

    The test size is round(n * fraction); it is shared between the classes by
    largest remainder, with at least one case of each class on each side.
    """
    if not 0 < test_fraction < 1:
        raise SplitError("test_fraction must lie in (0, 1)")
    by_class = {c: sorted(k for k, y in case_labels.items() if int(y) == c) for c in (0, 1)}
    for c, ids in by_class.items():
        if len(ids) < 2:
            raise SplitError(f"need at least 2 cases of class {c} to stratify, got {len(ids)}")
    n = len(case_labels)
    n_test = _round_half_up(n * test_fraction)
    quotas = {c: n_test * len(ids) / n for c, ids in by_class.items()}
    alloc = {c: int(math.floor(q)) for c, q in quotas.items()}
    for c in sorted(quotas, key=lambda c: (-(quotas[c] - alloc[c]), c))[: n_test - sum(alloc.values())]:
        alloc[c] += 1
    for c, ids in by_class.items():
        alloc[c] = min(max(alloc[c], 1), len(ids) - 1)
    rng = np.random.default_rng(seed)
    test: set[str] = set()
    for c in (0, 1):
        ids = by_class[c]
        perm = rng.permutation(len(ids))
        test.update(ids[i] for i in perm[: alloc[c]])
    train = frozenset(case_labels) - test
    return CaseSplit(train, frozenset(test), seed, test_fraction)


def auc(predictions: Sequence[Prediction] | None = None, *, scores=None, labels=None) -> float | None:
    """Mann-Whitney AUC with half credit for ties; None when a class is absent."""
    if predictions is not None:
        scores = [p.score for p in predictions]
        labels = [p.label for p in predictions]
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    # average ranks over tied groups
    starts = np.r_[0, np.nonzero(np.diff(sorted_s))[0] + 1]
    ends = np.r_[starts[1:], len(s)]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + b + 1) / 2.0
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def threshold_metrics(predictions: Sequence[Prediction], threshold: float = 0.5) -> dict[str, float | None]:
    tp = fp = tn = fn = 0
    for p in predictions:
        hit = p.score >= threshold
        if hit and p.label == 1:
            tp += 1
        elif hit:
            fp += 1
        elif p.label == 1:
            fn += 1
        else:
            tn += 1
    n = tp + fp + tn + fn
    return metrics_from_counts(tp, fp, tn, fn) if n else {"accuracy": None, "precision": None, "recall": None, "f1": None}


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int) -> dict[str, float | None]:
    n = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    return {
        "accuracy": (tp + tn) / n if n else None,
        "precision": precision,
        "recall": recall,
        "f1": f1_score(precision, recall),
    }


def f1_score(precision: float | None, recall: float | None) -> float | None:
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2 * precision * recall / (precision + recall)


def prefix_length_report(
    predictions: Sequence[Prediction], lengths: Iterable[int] = REPORT_LENGTHS, threshold: float = 0.5
) -> dict[int, dict]:
    by_len: dict[int, list[Prediction]] = {}
    for p in predictions:
        by_len.setdefault(p.length, []).append(p)
    report = {}
    for L in lengths:
        group = by_len.get(L, [])
        m = threshold_metrics(group, threshold)
        report[L] = {
            "n_cases": len({p.case_id for p in group}),
            "n_prefixes": len(group),
            "auc": auc(group) if group else None,
            "precision": m["precision"],
            "recall": m["recall"],
            "f1": m["f1"],
        }
    return report


@dataclass
class MetricsReport:
    model: str
    n_cases: int
    n_prefixes: int
    positive_rate: float
    auc: float | None
    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    threshold: float
    per_length: dict[int, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall": {
                "model": self.model,
                "n_cases": self.n_cases,
                "n_prefixes": self.n_prefixes,
                "positive_rate": self.positive_rate,
                "auc": self.auc,
                "accuracy": self.accuracy,
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "threshold": self.threshold,
            },
            "per_length": [{"length": L, **row} for L, row in sorted(self.per_length.items())],
        }

    def to_text(self) -> str:
        def r(v):
            return "-" if v is None else f"{v:.3f}"

        lines = [
            "Overall predictive performance",
            "Model | Cases | Prefixes | Positive Rate | AUC | Accuracy | Precision | Recall | F1",
            f"{self.model} | {self.n_cases} | {self.n_prefixes} | {r(self.positive_rate)} | {r(self.auc)} | "
            f"{r(self.accuracy)} | {r(self.precision)} | {r(self.recall)} | {r(self.f1)}",
            "",
            "Performance by prefix length",
            "Prefix length | Cases | AUC | Precision | Recall | F1",
        ]
        for L, row in sorted(self.per_length.items()):
            lines.append(f"{L} | {row['n_cases']} | {r(row['auc'])} | {r(row['precision'])} | {r(row['recall'])} | {r(row['f1'])}")
        return "\n".join(lines) + "\n"


def evaluate(
    predictions: Sequence[Prediction],
    model: str = "logreg",
    threshold: float = 0.5,
    lengths: Iterable[int] = REPORT_LENGTHS,
) -> MetricsReport:
    m = threshold_metrics(predictions, threshold)
    n = len(predictions)
    return MetricsReport(
        model=model,
        n_cases=len({p.case_id for p in predictions}),
        n_prefixes=n,
        positive_rate=sum(p.label for p in predictions) / n if n else math.nan,
        auc=auc(predictions),
        threshold=threshold,
        per_length=prefix_length_report(predictions, lengths, threshold),
        **m,
    )


def write_predictions(predictions: Sequence[Prediction], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prefix_id", "case_id", "length", "score", "label"])
        for p in predictions:
            w.writerow([p.prefix_id, p.case_id, p.length, repr(p.score), p.label])


def read_predictions(path: str | Path) -> list[Prediction]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            Prediction(r["prefix_id"], r["case_id"], int(r["length"]), float(r["score"]), int(r["label"]))
            for r in csv.DictReader(fh)
        ]


def write_report(report: MetricsReport, path: str | Path) -> None:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    path.with_suffix(".txt").write_text(report.to_text(), encoding="utf-8")
