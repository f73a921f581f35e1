"""Canonical JSON encoding shared by signatures, MACs, and hash chains.

Every byte string that gets signed, MACed, or hashed in this package is
produced here, so that two structurally equal documents always map to the
same bytes regardless of key insertion order or unicode escaping choices.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

__all__ = ["NonCanonicalizable", "canonical_bytes", "sha256_hex", "content_digest"]


class NonCanonicalizable(ValueError):
    """The value has no canonical encoding (non-finite number, non-JSON type,
    or a mapping whose keys cannot be sorted)."""


def canonical_bytes(value: Any) -> bytes:
    """Encode ``value`` as canonical JSON: keys sorted, no insignificant
    whitespace, non-ASCII kept as UTF-8, floats in shortest round-trip form.

    Raises NonCanonicalizable instead of emitting bytes that a re-parse
    would not reproduce.
    """
    try:
        text = json.dumps(
            value,
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
            allow_nan=False,
        )
    except (TypeError, ValueError, RecursionError) as exc:
        raise NonCanonicalizable(str(exc)) from None
    return text.encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def content_digest(value: Any) -> str:
    """SHA-256 of the canonical encoding, as lowercase hex."""
    return sha256_hex(canonical_bytes(value))
