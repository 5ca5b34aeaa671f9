"""Minimal XES reader/writer.

Supports log/trace/event elements, string/int/float/boolean/date attributes
and the concept and time extensions. Anything else is rejected.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Any

from .eventlog import EventLog, EventRecord, Trace, format_value
from .timeutil import format_ts, parse_ts

NS = "http://www.xes-standard.org/"
_TAG_OF = {bool: "boolean", int: "int", float: "float", str: "string"}
_SKIP = {"extension", "global", "classifier"}


class XESError(Exception):
    pass


def _attr(parent: ET.Element, key: str, value: Any) -> None:
    if hasattr(value, "tzinfo"):
        ET.SubElement(parent, "date", key=key, value=format_ts(value))
        return
    try:
        tag = _TAG_OF[type(value)]
    except KeyError:
        raise XESError(f"attribute {key!r}: unsupported type {type(value).__name__}") from None
    ET.SubElement(parent, tag, key=key, value=format_value(value))


def write_xes(log_: EventLog, path: str | Path) -> None:
    root = ET.Element("log", {"xes.version": "1.0", "xes.features": "", "xmlns": NS})
    ET.SubElement(root, "extension", name="Concept", prefix="concept", uri="http://www.xes-standard.org/concept.xesext")
    ET.SubElement(root, "extension", name="Time", prefix="time", uri="http://www.xes-standard.org/time.xesext")
    for cid in sorted(log_.traces):
        t = log_.traces[cid]
        trace_el = ET.SubElement(root, "trace")
        _attr(trace_el, "concept:name", cid)
        for k in sorted(t.case_attributes):
            _attr(trace_el, k, t.case_attributes[k])
        for e in t.events:
            ev_el = ET.SubElement(trace_el, "event")
            _attr(ev_el, "concept:name", e.activity)
            _attr(ev_el, "time:timestamp", e.timestamp)
            for k in sorted(e.attributes):
                _attr(ev_el, k, e.attributes[k])
    ET.indent(root)
    tree = ET.ElementTree(root)
    with Path(path).open("wb") as fh:
        tree.write(fh, encoding="utf-8", xml_declaration=True)


def _local(tag: str) -> str:
    return tag.split("}", 1)[1] if tag.startswith("{") else tag


def _value(el: ET.Element) -> tuple[str, Any]:
    tag = _local(el.tag)
    key, raw = el.get("key"), el.get("value")
    if key is None or raw is None:
        raise XESError(f"<{tag}> without key/value")
    if len(el):
        raise XESError(f"nested attributes under {key!r} are not supported")
    try:
        if tag == "string":
            return key, raw
        if tag == "int":
            return key, int(raw)
        if tag == "float":
            return key, float(raw)
        if tag == "boolean":
            if raw not in ("true", "false"):
                raise ValueError(raw)
            return key, raw == "true"
        if tag == "date":
            return key, parse_ts(raw)
    except ValueError:
        raise XESError(f"bad {tag} value {raw!r} for {key!r}") from None
    raise XESError(f"unsupported XES element <{tag}>")


def read_xes(path: str | Path) -> EventLog:
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise XESError(f"{path}: {exc}") from None
    if _local(root.tag) != "log":
        raise XESError(f"{path}: root element is <{_local(root.tag)}>, expected <log>")
    traces = {}
    for trace_el in root:
        tag = _local(trace_el.tag)
        if tag in _SKIP:
            continue
        if tag != "trace":
            raise XESError(f"unsupported log-level element <{tag}>")
        case_attrs: dict[str, Any] = {}
        event_els = []
        for child in trace_el:
            if _local(child.tag) == "event":
                event_els.append(child)
            else:
                k, v = _value(child)
                case_attrs[k] = v
        cid = case_attrs.pop("concept:name", None)
        if not isinstance(cid, str):
            raise XESError("trace without string concept:name")
        events = []
        for i, ev_el in enumerate(event_els):
            attrs = dict(_value(c) for c in ev_el)
            activity = attrs.pop("concept:name", None)
            ts = attrs.pop("time:timestamp", None)
            if activity is None or ts is None:
                raise XESError(f"trace {cid!r}: event {i} lacks concept:name or time:timestamp")
            events.append(EventRecord(cid, activity, ts, attrs, "", i))
        if cid in traces:
            raise XESError(f"duplicate trace {cid!r}")
        traces[cid] = Trace(cid, events, case_attrs)
    return EventLog({cid: traces[cid] for cid in sorted(traces)})
