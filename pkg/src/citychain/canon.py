"""Canonical JSON serialization and hashing.

Every byte sequence that gets hashed or signed in this project goes
through this module: sorted keys, no insignificant whitespace, UTF-8,
no NaN/Infinity. Quantities are integers (Wh, centimeters, seconds),
so floats never appear in hashed material.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

ZERO_DIGEST = "0" * 64


def canonical_dumps(obj: Any) -> str:
    """Canonical JSON string: sorted keys, compact separators."""
    return json.dumps(
        obj,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    )


def canonical_bytes(obj: Any) -> bytes:
    return canonical_dumps(obj).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_hash(obj: Any) -> str:
    """Hex SHA-256 over the canonical JSON bytes of obj."""
    return sha256_hex(canonical_bytes(obj))


def is_canonical(raw: bytes) -> bool:
    """True iff raw parses as JSON and equals its own canonical form."""
    try:
        parsed = json.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError):
        return False
    return canonical_bytes(parsed) == raw
