"""Timestamp parsing and formatting.

All instants are timezone-aware ``datetime`` objects in UTC with second
resolution. Serialized form is ISO-8601 with a trailing ``Z``.
"""
from __future__ import annotations

from datetime import date, datetime, time, timedelta, timezone
from zoneinfo import ZoneInfo

UTC = timezone.utc

_DATE_FORMATS = ("%Y-%m-%d", "%d/%m/%Y", "%Y/%m/%d")
_TIME_FORMATS = ("%H:%M:%S", "%H:%M")


def to_utc(value: datetime, tz: str = "UTC") -> datetime:
    """Attach ``tz`` to a naive datetime (or convert an aware one) and move it to UTC."""
    if value.tzinfo is None:
        value = value.replace(tzinfo=ZoneInfo(tz))
    return value.astimezone(UTC).replace(microsecond=0)


def format_ts(ts: datetime) -> str:
    return ts.astimezone(UTC).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_ts(text: str, tz: str = "UTC") -> datetime:
    """Parse an ISO-8601 instant. Raises ValueError on anything else."""
    text = text.strip()
    if not text:
        raise ValueError("empty timestamp")
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    value = datetime.fromisoformat(text)
    return to_utc(value, tz)


def parse_date(text: str) -> date:
    for fmt in _DATE_FORMATS:
        try:
            return datetime.strptime(text.strip(), fmt).date()
        except ValueError:
            continue
    raise ValueError(f"unrecognized date {text!r}")


def parse_time(text: str) -> time:
    for fmt in _TIME_FORMATS:
        try:
            return datetime.strptime(text.strip(), fmt).time()
        except ValueError:
            continue
    raise ValueError(f"unrecognized time {text!r}")


def seconds(delta: timedelta) -> float:
    return delta.total_seconds()
