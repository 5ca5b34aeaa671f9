"""Trace prefixes and case-level outcome labels."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .eventlog import EventLog, EventRecord, Trace

log = logging.getLogger(__name__)

DEFAULT_TARGET = "ICU Admission"


class PrefixError(Exception):
    pass


@dataclass(frozen=True)
class Prefix:
    prefix_id: str
    case_id: str
    length: int
    events: tuple[EventRecord, ...]
    label: int | None = None
    case_attributes: Mapping[str, Any] = field(default_factory=dict, compare=False)


@dataclass
class PrefixDataset:
    prefixes: list[Prefix]
    case_labels: dict[str, int]
    max_length: int | None = None

    def __len__(self) -> int:
        return len(self.prefixes)

    @property
    def positive_rate(self) -> float:
        if not self.prefixes:
            return float("nan")
        return sum(p.label for p in self.prefixes) / len(self.prefixes)

    def subset(self, cases) -> "PrefixDataset":
        cases = set(cases)
        return PrefixDataset(
            [p for p in self.prefixes if p.case_id in cases],
            {c: y for c, y in self.case_labels.items() if c in cases},
            self.max_length,
        )


@dataclass(frozen=True)
class TargetSpec:
    activity: str = DEFAULT_TARGET
    exclude_target_suffix: bool = True


def prefix_id(case_id: str, length: int) -> str:
    return f"{case_id}:{length}"


def generate_prefixes(trace: Trace, max_length: int | None = None) -> list[Prefix]:
    """All prefixes of lengths 1..min(n, max_length), unlabeled."""
    if not trace.events:
        raise PrefixError(f"trace {trace.case_id!r} is empty")
    if max_length is not None and max_length < 1:
        raise PrefixError("max_length must be at least 1")
    n = len(trace.events) if max_length is None else min(len(trace.events), max_length)
    events = tuple(trace.events)
    attrs = dict(trace.case_attributes)
    return [Prefix(prefix_id(trace.case_id, k), trace.case_id, k, events[:k], None, attrs) for k in range(1, n + 1)]


def derive_case_label(trace: Trace, target: TargetSpec | str = DEFAULT_TARGET) -> int:
    activity = target.activity if isinstance(target, TargetSpec) else target
    return int(any(e.activity == activity for e in trace.events))


def truncate_at_target(trace: Trace, activity: str) -> Trace:
    """Drop the first target event and everything after it."""
    for i, e in enumerate(trace.events):
        if e.activity == activity:
            return Trace(trace.case_id, trace.events[:i], trace.case_attributes)
    return trace


def attach_labels(prefixes: Sequence[Prefix], case_labels: Mapping[str, int], max_length: int | None = None) -> PrefixDataset:
    missing = sorted({p.case_id for p in prefixes if p.case_id not in case_labels})
    if missing:
        raise PrefixError(f"no label for cases {missing}")
    labelled = [replace(p, label=int(case_labels[p.case_id])) for p in prefixes]
    used = {p.case_id for p in prefixes}
    return PrefixDataset(labelled, {c: int(y) for c, y in case_labels.items() if c in used}, max_length)


def build_prefix_dataset(
    log_: EventLog,
    target: TargetSpec = TargetSpec(),
    max_length: int | None = None,
    case_labels: Mapping[str, int] | None = None,
) -> PrefixDataset:
    """Label every case from its full trace, then prefix the (possibly truncated) trace.

    With ``exclude_target_suffix`` the target event and what follows never
    enter a prefix; positive cases that start with the target yield no
    prefixes and are skipped.
    """
    if case_labels is None:
        case_labels = {t.case_id: derive_case_label(t, target) for t in log_}
        if log_.traces and not any(case_labels.values()):
            log.warning("target activity %r never occurs; every label is 0", target.activity)
    prefixes: list[Prefix] = []
    for t in log_:
        if target.exclude_target_suffix:
            t = truncate_at_target(t, target.activity)
        if not t.events:
            log.info("case %s has no events before %r; skipped", t.case_id, target.activity)
            continue
        prefixes.extend(generate_prefixes(t, max_length))
    return attach_labels(prefixes, case_labels, max_length)


# -- on-disk format ------------------------------------------------------------


def write_prefix_dataset(ds: PrefixDataset, path: str | Path, log_path: str, target: TargetSpec, log_digest: str = "") -> None:
    """Write ``prefix_id,case_id,length,label`` plus a JSON sidecar pointing at the log."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prefix_id", "case_id", "length", "label"])
        for p in ds.prefixes:
            w.writerow([p.prefix_id, p.case_id, p.length, p.label])
    sidecar = {
        "event_log": log_path,
        "event_log_sha256": log_digest,
        "target_activity": target.activity,
        "exclude_target_suffix": target.exclude_target_suffix,
        "max_length": ds.max_length,
        "case_labels": dict(sorted(ds.case_labels.items())),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_prefix_dataset(path: str | Path, log_: EventLog) -> PrefixDataset:
    """Rebuild prefixes from the CSV ids and the referenced event log."""
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    target = TargetSpec(sidecar["target_activity"], sidecar["exclude_target_suffix"])
    prefixes = []
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cid, k = row["case_id"], int(row["length"])
            if cid not in log_.traces:
                raise PrefixError(f"prefix {row['prefix_id']} references unknown case {cid!r}")
            t = log_.traces[cid]
            if target.exclude_target_suffix:
                t = truncate_at_target(t, target.activity)
            if k > len(t.events):
                raise PrefixError(f"prefix {row['prefix_id']} longer than its trace")
            prefixes.append(Prefix(row["prefix_id"], cid, k, tuple(t.events[:k]), int(row["label"]), dict(t.case_attributes)))
    return PrefixDataset(prefixes, {c: int(y) for c, y in sidecar["case_labels"].items()}, sidecar["max_length"])
