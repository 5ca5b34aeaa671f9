"""Data lifting: load raw clinical tables and reconstruct consistent event times.

The functions here are deliberately small and pure so that each lifting step
can be tested on its own. The orchestration that strings them together for a
whole configuration lives in :mod:`pathmon.pipeline`.
"""
from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

from .timeutil import parse_date, parse_time, parse_ts, to_utc

log = logging.getLogger(__name__)

MISSING = None
MISSING_TOKENS = frozenset({"0", "0.0", ""})
NUMERIC_TYPES = frozenset({"float", "int"})
DEFAULT_WINDOW = 900.0


class LiftError(Exception):
    pass


class UntimestampedCaseError(LiftError):
    """Raised for a case that has no valid timestamp in any source."""

    tag = "untimestamped-case"

    def __init__(self, case_id: str):
        super().__init__(f"{self.tag}: case {case_id!r} has no valid timestamp")
        self.case_id = case_id


@dataclass(frozen=True)
class TableSchema:
    """How to read one source table.

    ``columns`` maps column name to a declared type (float, int, string,
    boolean). Numeric columns plus any listed in ``nullable`` take part in
    missing-value normalization.
    """

    name: str
    path: str
    case_column: str
    delimiter: str = ","
    timezone: str = "UTC"
    columns: Mapping[str, str] = field(default_factory=dict)
    nullable: Sequence[str] = ()

    @property
    def normalized_columns(self) -> set[str]:
        cols = {c for c, t in self.columns.items() if t in NUMERIC_TYPES}
        cols.update(self.nullable)
        cols.discard(self.case_column)
        return cols


@dataclass
class SourceTable:
    name: str
    columns: list[str]
    rows: list[dict[str, Any]]
    case_id_column: str
    schema: TableSchema | None = None

    def __len__(self) -> int:
        return len(self.rows)


def load_table(path: str | Path, schema: TableSchema) -> SourceTable:
    """Read a delimited UTF-8 file with a header row; values stay raw strings."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"table {schema.name!r}: no such file {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise LiftError(f"table {schema.name!r}: missing header row") from None
        dupes = sorted(c for c, n in Counter(header).items() if n > 1)
        if dupes:
            raise LiftError(f"table {schema.name!r}: duplicate columns {dupes}")
        if schema.case_column not in header:
            raise LiftError(
                f"table {schema.name!r}: case column {schema.case_column!r} not in header"
            )
        rows = []
        for lineno, values in enumerate(reader, start=2):
            if not values:
                continue
            if len(values) != len(header):
                raise LiftError(
                    f"table {schema.name!r} line {lineno}: expected {len(header)} fields, got {len(values)}"
                )
            row = dict(zip(header, values))
            if not row[schema.case_column].strip():
                raise LiftError(f"table {schema.name!r} line {lineno}: empty case id")
            rows.append(row)
    return SourceTable(schema.name, list(header), rows, schema.case_column, schema)


def normalize_missing(table: SourceTable) -> SourceTable:
    """Turn zeros and empty strings into the missing marker in nullable columns."""
    if table.schema is not None:
        targets = table.schema.normalized_columns
    else:
        targets = set(table.columns) - {table.case_id_column}
    rows = []
    for row in table.rows:
        new = dict(row)
        for col in targets:
            value = new.get(col)
            if isinstance(value, str) and value.strip() in MISSING_TOKENS:
                new[col] = MISSING
        rows.append(new)
    return replace(table, rows=rows)


def compress_high_frequency(table: SourceTable, keys: Sequence[str]) -> SourceTable:
    """Keep only the first row for each distinct key tuple, preserving order."""
    unknown = [k for k in keys if k not in table.columns]
    if unknown:
        raise LiftError(f"table {table.name!r}: unknown key columns {unknown}")
    seen: set[tuple] = set()
    kept = []
    for row in table.rows:
        key = tuple(row.get(k) for k in keys)
        if key in seen:
            continue
        seen.add(key)
        kept.append(row)
    return replace(table, rows=kept)


class BuiltTimestamp(NamedTuple):
    instant: datetime | None
    time_inferred: bool = False


def build_timestamp(date_value: str | None, time_value: str | None, tz: str = "UTC") -> BuiltTimestamp:
    """Combine separate date and time fields into one UTC instant.

    A date without a time is placed at midnight and flagged as inferred.
    Malformed input gives a missing instant and a warning.
    """
    if date_value is None or not str(date_value).strip():
        return BuiltTimestamp(None)
    try:
        day = parse_date(str(date_value))
    except ValueError:
        log.warning("malformed date %r; treating as missing", date_value)
        return BuiltTimestamp(None)
    if time_value is None or not str(time_value).strip():
        return BuiltTimestamp(to_utc(datetime.combine(day, datetime.min.time()), tz), True)
    try:
        clock = parse_time(str(time_value))
    except ValueError:
        log.warning("malformed time %r; treating as missing", time_value)
        return BuiltTimestamp(None)
    return BuiltTimestamp(to_utc(datetime.combine(day, clock), tz))


def parse_datetime_field(value: str | None, tz: str = "UTC") -> BuiltTimestamp:
    """Parse a single combined date-time column; a bare date counts as time-inferred."""
    if value is None or not str(value).strip():
        return BuiltTimestamp(None)
    text = str(value).strip()
    if "T" not in text and " " not in text:
        return build_timestamp(text, None, tz)
    try:
        return BuiltTimestamp(parse_ts(text.replace(" ", "T", 1), tz))
    except ValueError:
        log.warning("malformed datetime %r; treating as missing", value)
        return BuiltTimestamp(None)


# -- event candidates and temporal rules -------------------------------------


@dataclass(frozen=True)
class EventCandidate:
    """An event before timestamp reconstruction; ``timestamp`` may be missing."""

    case_id: str
    activity: str
    timestamp: datetime | None
    attributes: Mapping[str, Any] = field(default_factory=dict)
    source: str = ""
    row_index: int = 0
    time_inferred: bool = False


class Condition(str, Enum):
    PRECEDES_WITHIN_WINDOW = "precedes_within_window"
    PRECEDES = "precedes"


class Action(str, Enum):
    SHIFT_TO_REFERENCE = "shift_to_reference"
    SWAP_ORDER = "swap_order"


@dataclass(frozen=True)
class CorrectionRule:
    id: str
    subject_activity: str
    reference_activity: str
    condition: Condition = Condition.PRECEDES_WITHIN_WINDOW
    window: float = DEFAULT_WINDOW
    action: Action = Action.SHIFT_TO_REFERENCE

    def __post_init__(self):
        object.__setattr__(self, "condition", Condition(self.condition))
        object.__setattr__(self, "action", Action(self.action))
        if self.subject_activity == self.reference_activity:
            raise ValueError(f"rule {self.id}: subject and reference must differ")
        if self.condition is Condition.PRECEDES_WITHIN_WINDOW and not self.window > 0:
            raise ValueError(f"rule {self.id}: window must be positive")

    def triggers(self, subject: datetime, reference: datetime) -> bool:
        if subject >= reference:
            return False
        if self.condition is Condition.PRECEDES:
            return True
        return (reference - subject).total_seconds() <= self.window


def _pair(event) -> tuple[str, datetime | None]:
    if isinstance(event, EventCandidate):
        return event.activity, event.timestamp
    return event[0], event[1]


def _with_ts(event, ts):
    if isinstance(event, EventCandidate):
        return replace(event, timestamp=ts)
    return (event[0], ts)


def _rule_pass(out: list, rules: Sequence[CorrectionRule], stats: Counter | None) -> bool:
    changed = False
    for rule in rules:
        timed = [(i, *_pair(e)) for i, e in enumerate(out) if _pair(e)[1] is not None]
        refs = [(ts, i) for i, act, ts in timed if act == rule.reference_activity]
        subjects = [(ts, i) for i, act, ts in timed if act == rule.subject_activity]
        if not refs or not subjects:
            log.debug("rule %s skipped: activity absent from case", rule.id)
            if stats is not None:
                stats[f"skipped:{rule.id}"] += 1
            continue
        ref_ts, ref_i = min(refs)
        if rule.action is Action.SHIFT_TO_REFERENCE:
            for ts, i in subjects:
                if rule.triggers(ts, ref_ts):
                    out[i] = _with_ts(out[i], ref_ts)
                    changed = True
                    if stats is not None:
                        stats[f"applied:{rule.id}"] += 1
        else:
            sub_ts, sub_i = min(subjects)
            if rule.triggers(sub_ts, ref_ts):
                out[sub_i] = _with_ts(out[sub_i], ref_ts)
                out[ref_i] = _with_ts(out[ref_i], sub_ts)
                changed = True
                if stats is not None:
                    stats[f"applied:{rule.id}"] += 1
    return changed


def apply_correction_rules(events: Sequence, rules: Sequence[CorrectionRule], stats: Counter | None = None) -> list:
    """Apply correction rules, in order, to the events of one case.

    ``events`` holds ``(activity, timestamp)`` pairs or :class:`EventCandidate`
    objects; the same kind is returned. Events with a missing timestamp are
    left alone. The reference of a rule is the earliest timed occurrence of
    its reference activity; a swap pairs it with the earliest timed subject.

    Passes over the rule list repeat until nothing changes, since a later rule
    can bring a subject inside the window of an earlier one. Shifts only move
    timestamps forward onto existing values, so this terminates and the result
    is a fixed point. Swap rules that undo each other are cut off after
    ``len(events) ** 2 + 1`` passes with a warning.
    """
    out = list(events)
    max_passes = len(out) ** 2 + 1
    for _ in range(max_passes):
        if not _rule_pass(out, rules, stats):
            return out
    log.warning("correction rules did not settle after %d passes; rule set contains a cycle", max_passes)
    return out


# -- anchors and inference -----------------------------------------------------


class OrderingLabel(str, Enum):
    FIRST = "FIRST"
    NOT_FIRST = "NOT_FIRST"
    LAST = "LAST"


@dataclass(frozen=True)
class AnchorSpec:
    """An anchor is the min or max timestamp found in one source."""

    name: str
    source: str
    aggregate: str = "min"

    def __post_init__(self):
        if self.aggregate not in ("min", "max"):
            raise ValueError(f"anchor {self.name}: aggregate must be min or max")


@dataclass
class AnchorTable:
    case_id: str
    anchors: dict[str, datetime]
    warnings: list[str] = field(default_factory=list)

    @property
    def earliest(self) -> datetime:
        return min(self.anchors.values())

    @property
    def latest(self) -> datetime:
        return max(self.anchors.values())


def build_anchor_table(
    case_id: str,
    case_rows: Mapping[str, Iterable[datetime | None]],
    specs: Sequence[AnchorSpec],
    constraints: Sequence[tuple[str, str]] = (),
) -> AnchorTable:
    """Aggregate candidate timestamps per source into named anchors.

    ``case_rows`` maps a source name to the timestamps of that case's rows in
    the source. ``constraints`` lists ``(earlier, later)`` anchor pairs; a
    violated pair is recorded as a warning. When no configured anchor can be
    computed, the overall first and last timestamps serve as anchors.
    """
    by_source = {src: [t for t in ts if t is not None] for src, ts in case_rows.items()}
    every = [t for ts in by_source.values() for t in ts]
    if not every:
        raise UntimestampedCaseError(case_id)
    anchors: dict[str, datetime] = {}
    for spec in specs:
        values = by_source.get(spec.source)
        if values:
            anchors[spec.name] = min(values) if spec.aggregate == "min" else max(values)
    if not anchors:
        anchors = {"case_start": min(every), "case_end": max(every)}
    table = AnchorTable(case_id, anchors)
    for earlier, later in constraints:
        if earlier in anchors and later in anchors and anchors[earlier] > anchors[later]:
            table.warnings.append(f"ordering violated: {earlier} after {later}")
    return table


class InferenceResult(NamedTuple):
    events: list[EventCandidate]
    dropped: list[tuple[EventCandidate, str]]


def infer_timestamps(
    events: Sequence[EventCandidate],
    anchors: AnchorTable,
    label_of: Mapping[str, OrderingLabel | str],
) -> InferenceResult:
    """Fill missing timestamps from the case's anchors.

    FIRST events take the earliest anchor, LAST events the latest, and
    NOT_FIRST events one second past the earliest anchor or the time of the
    preceding event from the same source, whichever is later. Anything that
    would fall outside the anchor range is dropped with a reason.
    """
    lo, hi = anchors.earliest, anchors.latest
    one = timedelta(seconds=1)
    kept: list[EventCandidate] = []
    dropped: list[tuple[EventCandidate, str]] = []
    last_by_source: dict[str, datetime] = {}
    for ev in events:
        ts = ev.timestamp
        if ts is None:
            label = label_of.get(ev.activity)
            if label is None:
                dropped.append((ev, "missing timestamp and no ordering label"))
                continue
            label = OrderingLabel(label)
            if label is OrderingLabel.FIRST:
                ts = lo
            elif label is OrderingLabel.LAST:
                ts = hi
            else:
                ts = lo + one
                prev = last_by_source.get(ev.source)
                if prev is not None and prev > ts:
                    ts = prev
            if ts > hi:
                dropped.append((ev, f"{label.value} placement {ts.isoformat()} exceeds latest anchor"))
                continue
            ev = replace(ev, timestamp=ts, time_inferred=True)
        elif not lo <= ts <= hi:
            dropped.append((ev, "timestamp outside anchor range"))
            continue
        last_by_source[ev.source] = ts
        kept.append(ev)
    for ev, reason in dropped:
        log.info("case %s: dropped %s (%s)", ev.case_id, ev.activity, reason)
    return InferenceResult(kept, dropped)
