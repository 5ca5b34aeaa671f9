"""Event records, declarative collectors, trace assembly and the CSV log format."""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .ingest import EventCandidate, SourceTable, build_timestamp, parse_datetime_field
from .timeutil import format_ts, parse_ts

log = logging.getLogger(__name__)

CASE_PREFIX = "case:"
INFERRED_ATTR = "time_inferred"

# Admissions first, measurements ("*": anything unlisted) next, discharges last.
DEFAULT_PRIORITY = (
    "Admission",
    "ED Admission",
    "Hospital Admission",
    "Triage",
    "ICU Admission",
    "*",
    "ICU Discharge",
    "Discharge",
    "Hospital Discharge",
    "Death",
)


class EventLogError(Exception):
    pass


def clean_attributes(attrs: Mapping[str, Any]) -> dict[str, Any]:
    """Drop missing values so that an absent key and a missing value coincide."""
    out = {}
    for key, value in attrs.items():
        if value is None:
            continue
        if isinstance(value, float) and math.isnan(value):
            continue
        if isinstance(value, str) and value == "":
            continue
        if not isinstance(value, (bool, int, float, str)):
            raise TypeError(f"attribute {key!r}: unsupported value type {type(value).__name__}")
        out[key] = value
    return out


@dataclass(frozen=True)
class EventRecord:
    case_id: str
    activity: str
    timestamp: datetime
    attributes: Mapping[str, Any] = field(default_factory=dict)
    # provenance for tie-breaking; not serialized
    source: str = field(default="", compare=False)
    row_index: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.case_id:
            raise ValueError("event without case id")
        if not self.activity:
            raise ValueError(f"event of case {self.case_id!r} without activity")
        if self.timestamp is None:
            raise ValueError(f"event {self.activity!r} of case {self.case_id!r} without timestamp")
        object.__setattr__(self, "attributes", clean_attributes(self.attributes))

    @property
    def time_inferred(self) -> bool:
        return bool(self.attributes.get(INFERRED_ATTR, False))


@dataclass
class Trace:
    case_id: str
    events: list[EventRecord]
    case_attributes: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.events)


@dataclass
class EventLog:
    traces: dict[str, Trace] = field(default_factory=dict)

    @property
    def activity_alphabet(self) -> set[str]:
        return {e.activity for t in self.traces.values() for e in t.events}

    @property
    def n_events(self) -> int:
        return sum(len(t) for t in self.traces.values())

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces.values())


# -- collectors ----------------------------------------------------------------


@dataclass(frozen=True)
class CollectorSpec:
    """Declarative mapping from source table rows to events.

    ``timestamp`` is either one column name or a ``[date, time]`` pair.
    ``attributes`` maps source column to standardized attribute name.
    """

    name: str
    source_tables: Sequence[str]
    timestamp: str | Sequence[str]
    activity: str | None = None
    activity_column: str | None = None
    attributes: Mapping[str, str] = field(default_factory=dict)
    attribute_types: Mapping[str, str] = field(default_factory=dict)
    mode: str = "single_table"
    join_keys: Sequence[str] = ()
    group_keys: Sequence[str] = ()
    aggregations: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("single_table", "join", "aggregate"):
            raise ValueError(f"collector {self.name}: unknown mode {self.mode!r}")
        if (self.activity is None) == (self.activity_column is None):
            raise ValueError(f"collector {self.name}: give exactly one of activity / activity_column")
        if self.mode == "join" and (not self.join_keys or len(self.source_tables) < 2):
            raise ValueError(f"collector {self.name}: join mode needs join_keys and two tables")
        if self.mode == "aggregate" and not self.aggregations:
            raise ValueError(f"collector {self.name}: aggregate mode needs aggregations")


_AGGREGATORS = {
    "mean": lambda xs: sum(xs) / len(xs),
    "min": min,
    "max": max,
    "sum": sum,
    "first": lambda xs: xs[0],
    "last": lambda xs: xs[-1],
    "count": len,
}


def cast_value(raw: Any, kind: str) -> Any:
    """Cast a raw cell to its declared type; failures become missing."""
    if raw is None:
        return None
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if text == "":
        return None
    try:
        if kind == "float":
            return float(text)
        if kind == "int":
            return int(float(text)) if "." in text else int(text)
        if kind == "boolean":
            low = text.lower()
            if low in ("true", "1", "yes", "y", "t"):
                return True
            if low in ("false", "0", "no", "n", "f"):
                return False
            raise ValueError(text)
    except ValueError:
        log.warning("cannot cast %r to %s; treating as missing", raw, kind)
        return None
    return text


def _join(left: SourceTable, right: SourceTable, keys: Sequence[str]) -> list[dict]:
    for k in keys:
        if k not in left.columns or k not in right.columns:
            raise EventLogError(f"join key {k!r} absent from {left.name!r} or {right.name!r}")
    index: dict[tuple, list[dict]] = defaultdict(list)
    for row in right.rows:
        index[tuple(row.get(k) for k in keys)].append(row)
    joined = []
    for row in left.rows:
        for match in index.get(tuple(row.get(k) for k in keys), ()):
            merged = dict(row)
            for col, value in match.items():
                if col in keys:
                    continue
                merged[col if col not in merged else f"{right.name}.{col}"] = value
            joined.append(merged)
    return joined


def _row_timestamp(row: Mapping[str, Any], ts_spec, tz: str) -> tuple[datetime | None, bool]:
    if isinstance(ts_spec, str):
        value = row.get(ts_spec)
        if isinstance(value, datetime):
            return value, bool(row.get(f"{ts_spec}__inferred", False))
        built = parse_datetime_field(value, tz)
    else:
        date_col, time_col = ts_spec
        built = build_timestamp(row.get(date_col), row.get(time_col), tz)
    return built.instant, built.time_inferred


def collect_candidates(spec: CollectorSpec, tables: Mapping[str, SourceTable]) -> list[EventCandidate]:
    """Map rows to event candidates; untimed rows are kept with a missing timestamp."""
    missing = [t for t in spec.source_tables if t not in tables]
    if missing:
        raise EventLogError(f"collector {spec.name}: unknown tables {missing}")
    base = tables[spec.source_tables[0]]
    tz = base.schema.timezone if base.schema is not None else "UTC"
    case_col = base.case_id_column

    if spec.mode == "join":
        rows = base.rows
        for other in spec.source_tables[1:]:
            right = tables[other]
            rows = _join(SourceTable(base.name, list(rows[0]) if rows else base.columns, rows, case_col), right, spec.join_keys)
        columns = set().union(*(r.keys() for r in rows)) if rows else set(base.columns)
    else:
        rows = base.rows
        columns = set(base.columns)

    ts_cols = [spec.timestamp] if isinstance(spec.timestamp, str) else list(spec.timestamp)
    needed = set(ts_cols) | set(spec.attributes) | {case_col}
    if spec.activity_column:
        needed.add(spec.activity_column)
    if rows:
        unknown = sorted(c for c in needed if c not in columns)
        if unknown:
            raise EventLogError(f"collector {spec.name}: unknown columns {unknown}")

    def attrs_of(row):
        return {
            spec.attributes[c]: cast_value(row.get(c), spec.attribute_types.get(c, "string"))
            for c in spec.attributes
        }

    def activity_of(row):
        return spec.activity if spec.activity is not None else str(row.get(spec.activity_column) or "")

    out = []
    if spec.mode == "aggregate":
        keys = list(spec.group_keys) or [case_col, *ts_cols]
        groups: dict[tuple, list[tuple[int, dict]]] = {}
        for i, row in enumerate(rows):
            groups.setdefault(tuple(row.get(k) for k in keys), []).append((i, row))
        for members in groups.values():
            first_i, first = members[0]
            attrs = {}
            for col, name in spec.attributes.items():
                how = spec.aggregations.get(col, "first")
                kind = spec.attribute_types.get(col, "string")
                values = [cast_value(r.get(col), kind) for _, r in members]
                values = [v for v in values if v is not None]
                attrs[name] = _AGGREGATORS[how](values) if values or how == "count" else None
            ts, inferred = _row_timestamp(first, spec.timestamp, tz)
            out.append(EventCandidate(str(first[case_col]), activity_of(first), ts, attrs, spec.name, first_i, inferred))
    else:
        for i, row in enumerate(rows):
            ts, inferred = _row_timestamp(row, spec.timestamp, tz)
            out.append(EventCandidate(str(row[case_col]), activity_of(row), ts, attrs_of(row), spec.name, i, inferred))
    return out


def candidate_to_event(c: EventCandidate) -> EventRecord:
    attrs = dict(c.attributes)
    if c.time_inferred:
        attrs[INFERRED_ATTR] = True
    return EventRecord(c.case_id, c.activity, c.timestamp, attrs, c.source, c.row_index)


def collect_events(spec: CollectorSpec, tables: Mapping[str, SourceTable], stats: Counter | None = None) -> list[EventRecord]:
    """One event per qualifying row (or join row, or group); untimed rows are excluded and counted."""
    events = []
    excluded = 0
    for c in collect_candidates(spec, tables):
        if c.timestamp is None or not c.activity:
            excluded += 1
            continue
        events.append(candidate_to_event(c))
    if stats is not None:
        stats["collected"] += len(events) + excluded
        stats["excluded_missing_timestamp"] += excluded
    if excluded:
        log.info("collector %s: excluded %d rows without timestamp", spec.name, excluded)
    return events


def propagate_case_attributes(
    events: Sequence[EventRecord],
    demographics: SourceTable,
    columns: Mapping[str, str] | None = None,
    types: Mapping[str, str] | None = None,
) -> tuple[list[EventRecord], dict[str, dict[str, Any]]]:
    """Attach per-case demographic attributes.

    ``columns`` maps demographic column to attribute name (default: every
    non-case column, unrenamed).
    """
    case_col = demographics.case_id_column
    if columns is None:
        columns = {c: c for c in demographics.columns if c != case_col}
    types = types or {}
    if demographics.schema is not None and not types:
        types = dict(demographics.schema.columns)
    by_case: dict[str, dict[str, Any]] = {}
    for row in demographics.rows:
        cid = str(row[case_col])
        if cid in by_case:
            raise EventLogError(f"duplicate demographic rows for case {cid!r}")
        by_case[cid] = clean_attributes(
            {name: cast_value(row.get(col), types.get(col, "string")) for col, name in columns.items()}
        )
    case_attrs = {}
    for cid in sorted({e.case_id for e in events}):
        if cid not in by_case:
            log.warning("case %s has no demographic row", cid)
        case_attrs[cid] = dict(by_case.get(cid, {}))
    return list(events), case_attrs


def _canonical_key(priority: Sequence[str]):
    rank = {a: i for i, a in enumerate(priority)}
    default = rank.get("*", len(priority))

    def key(e: EventRecord):
        return (
            e.timestamp,
            rank.get(e.activity, default),
            e.activity,
            e.source,
            e.row_index,
            repr(sorted(e.attributes.items())),
        )

    return key


def build_traces(
    events: Iterable[EventRecord],
    case_attrs: Mapping[str, Mapping[str, Any]] | None = None,
    priority: Sequence[str] = DEFAULT_PRIORITY,
) -> EventLog:
    case_attrs = case_attrs or {}
    grouped: dict[str, list[EventRecord]] = defaultdict(list)
    for e in events:
        grouped[e.case_id].append(e)
    key = _canonical_key(priority)
    traces = {}
    for cid in sorted(grouped):
        traces[cid] = Trace(cid, sorted(grouped[cid], key=key), dict(case_attrs.get(cid, {})))
    return EventLog(traces)


# -- CSV format ------------------------------------------------------------------

_TYPE_OF = {bool: "boolean", int: "int", float: "float", str: "string"}


def column_type(values: Iterable[Any], name: str) -> str:
    kinds = {_TYPE_OF[type(v)] for v in values}
    if not kinds:
        return "string"
    if len(kinds) == 1:
        return kinds.pop()
    if kinds <= {"int", "float"}:
        return "float"
    raise EventLogError(f"attribute {name!r} mixes types {sorted(kinds)}")


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(text: str, kind: str) -> Any:
    if text == "":
        return None
    if kind == "float":
        return float(text)
    if kind == "int":
        return int(text)
    if kind == "boolean":
        if text not in ("true", "false"):
            raise ValueError(f"bad boolean {text!r}")
        return text == "true"
    if kind == "string":
        return text
    raise ValueError(f"unknown type tag {kind!r}")


def log_columns(log_: EventLog) -> tuple[list[str], list[str], dict[str, str]]:
    """Sorted event and case attribute names plus their column types."""
    ev_values: dict[str, list] = defaultdict(list)
    case_values: dict[str, list] = defaultdict(list)
    for t in log_:
        for k, v in t.case_attributes.items():
            case_values[k].append(v)
        for e in t.events:
            for k, v in e.attributes.items():
                ev_values[k].append(v)
    types = {k: column_type(v, k) for k, v in ev_values.items()}
    types.update({CASE_PREFIX + k: column_type(v, k) for k, v in case_values.items()})
    return sorted(ev_values), sorted(case_values), types


def write_csv(log_: EventLog, path: str | Path) -> None:
    ev_cols, case_cols, types = log_columns(log_)
    header = ["case_id", "activity", "timestamp", *ev_cols, *(CASE_PREFIX + c for c in case_cols)]
    type_row = ["id", "string", "datetime", *(types[c] for c in header[3:])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerow(type_row)
        for cid in sorted(log_.traces):
            t = log_.traces[cid]
            case_part = [format_value(t.case_attributes.get(c)) for c in case_cols]
            for e in t.events:
                w.writerow(
                    [cid, e.activity, format_ts(e.timestamp)]
                    + [format_value(e.attributes.get(c)) for c in ev_cols]
                    + case_part
                )


def read_csv(path: str | Path) -> EventLog:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
            type_row = next(reader)
        except StopIteration:
            raise EventLogError(f"{path}: missing header or type row") from None
        if header[:3] != ["case_id", "activity", "timestamp"]:
            raise EventLogError(f"{path}: header must start with case_id,activity,timestamp")
        if len(type_row) != len(header) or type_row[:3] != ["id", "string", "datetime"]:
            raise EventLogError(f"{path}: type-tag row does not match header")
        for tag in type_row[3:]:
            if tag not in ("string", "int", "float", "boolean"):
                raise EventLogError(f"{path}: unknown type tag {tag!r}")
        events: dict[str, list[EventRecord]] = {}
        case_attrs: dict[str, dict] = {}
        for rowno, row in enumerate(reader, start=3):
            if len(row) != len(header):
                raise EventLogError(f"{path} row {rowno}: expected {len(header)} fields, got {len(row)}")
            cid, activity, ts_text = row[:3]
            try:
                ts = parse_ts(ts_text)
                values = {h: parse_value(v, k) for h, v, k in zip(header[3:], row[3:], type_row[3:])}
            except ValueError as exc:
                raise EventLogError(f"{path} row {rowno}: {exc}") from None
            ev_attrs = {h: v for h, v in values.items() if not h.startswith(CASE_PREFIX)}
            c_attrs = clean_attributes({h[len(CASE_PREFIX):]: v for h, v in values.items() if h.startswith(CASE_PREFIX)})
            if cid in case_attrs and case_attrs[cid] != c_attrs:
                raise EventLogError(f"{path} row {rowno}: case attributes differ within case {cid!r}")
            case_attrs.setdefault(cid, c_attrs)
            seq = events.setdefault(cid, [])
            seq.append(EventRecord(cid, activity, ts, ev_attrs, "", len(seq)))
    return EventLog({cid: Trace(cid, events[cid], case_attrs[cid]) for cid in sorted(events)})
