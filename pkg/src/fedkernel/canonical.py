"""Canonical document encoding used for hashing, persistence and the wire.

Every digest in the system is SHA-256 over this encoding, so it must be
deterministic across processes: JSON with sorted keys, no insignificant
whitespace, UTF-8 bytes. Byte-sequence fields are carried as lowercase hex
strings (JSON has no binary type).
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE


def canonical_dumps(doc: Any) -> str:
    """Serialize ``doc`` to its unique canonical text form."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_loads(text: str) -> Any:
    try:
        return json.loads(text)
    except (ValueError, TypeError) as exc:
        from .errors import ParseError

        raise ParseError(str(exc)) from exc


def canonical_bytes(doc: Any) -> bytes:
    return canonical_dumps(doc).encode("utf-8")


def digest(doc: Any) -> bytes:
    """SHA-256 digest of the canonical encoding of ``doc``."""
    return hashlib.sha256(canonical_bytes(doc)).digest()


def hex_digest(doc: Any) -> str:
    return digest(doc).hex()
