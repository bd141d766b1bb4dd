"""Serialization helpers: RFC 3339 timestamps, exact rationals, canonical JSON.

Frequencies travel as doubles on the wire but are exact `Fraction`s
internally; `as_fraction` converts doubles through their decimal repr so
that a configured 0.55 really is 11/20.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from fractions import Fraction
from typing import Any

UTC = timezone.utc


def as_fraction(value: Fraction | float | int | str) -> Fraction:
    """Coerce a number to an exact Fraction (floats via their decimal repr)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def format_timestamp(ts: datetime) -> str:
    """RFC 3339 at second precision; UTC rendered with a `Z` suffix."""
    if ts.tzinfo is None:
        raise ValueError("naive timestamps are not allowed on the wire")
    ts = ts.replace(microsecond=0)
    if ts.utcoffset() == timezone.utc.utcoffset(None):
        return ts.strftime("%Y-%m-%dT%H:%M:%SZ")
    return ts.isoformat()


def parse_timestamp(text: str) -> datetime:
    """Parse an RFC 3339 timestamp; result is timezone-aware, second precision."""
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise ValueError(f"invalid RFC 3339 timestamp: {text!r}") from exc
    if ts.tzinfo is None:
        raise ValueError(f"timestamp must carry an offset: {text!r}")
    return ts.replace(microsecond=0)


def canonical_dumps(payload: Any, *, sort_keys: bool = False) -> str:
    """Deterministic JSON encoding (no whitespace, stable key order)."""
    return json.dumps(
        payload, sort_keys=sort_keys, separators=(",", ":"), ensure_ascii=False,
        allow_nan=False,
    )


def content_digest(payload: Any) -> str:
    """SHA-256 digest of the key-sorted canonical encoding of `payload`."""
    data = canonical_dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(data).hexdigest()
