"""Canonical serialization shared by signing, hashing and the audit chain.

One definition repo-wide: UTF-8 JSON, lexicographically sorted keys, no
insignificant whitespace, timestamps as RFC 3339 UTC with seconds precision.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone


def canonical_json(obj) -> bytes:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def digest_obj(obj) -> str:
    return sha256_hex(canonical_json(obj))


def rfc3339(epoch_seconds: float) -> str:
    """Format an epoch timestamp as RFC 3339 UTC, seconds precision."""
    dt = datetime.fromtimestamp(int(epoch_seconds), tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_rfc3339(text: str) -> float:
    dt = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ")
    return dt.replace(tzinfo=timezone.utc).timestamp()
