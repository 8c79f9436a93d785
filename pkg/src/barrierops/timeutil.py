"""RFC 3339 UTC timestamp helpers.

Every timestamp in the system is timezone-aware UTC; the wire and file
formats always use the trailing-Z form.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

STEP = timedelta(minutes=15)
STEP_SECONDS = 900


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def parse_rfc3339(text: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime."""
    t = text.strip()
    if t.endswith(("Z", "z")):
        t = t[:-1] + "+00:00"
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_rfc3339(dt: datetime) -> str:
    """Format an aware datetime as RFC 3339 UTC with a trailing Z."""
    dt = dt.astimezone(timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%f").rstrip("0") + "Z"
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def slot_index(dt: datetime, epoch: datetime | None = None) -> int:
    """Index of the nearest 15-minute slot, used to join observation streams."""
    base = epoch or datetime(2021, 1, 1, tzinfo=timezone.utc)
    return round((dt - base).total_seconds() / STEP_SECONDS)
