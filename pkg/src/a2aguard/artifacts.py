"""Artifact integrity: content hashing and producer signatures.

The content hash covers the canonical wire form of the parts list; the
signature covers (artifact_id, content_hash), binding content to one
artifact identity. Verification checks hash equality before signature
validity, so content swapped between two validly signed artifacts is
reported as a hash problem, not a signature problem.
"""

from __future__ import annotations

from typing import Optional, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from pydantic import TypeAdapter

from .canonical import canonical_bytes, sha256_hex
from .cards import TrustRegistry
from .errors import (
    HashMismatch,
    InvalidParts,
    RevokedKey,
    SignatureMismatch,
    UnknownKey,
    Unsigned,
)
from .model import Artifact, DetachedSignature, Part

__all__ = [
    "parts_content_hash",
    "artifact_signing_bytes",
    "seal_artifact",
    "verify_artifact",
]

_PARTS_ADAPTER = TypeAdapter(list[Part])


def parts_content_hash(parts: Sequence[Part]) -> str:
    docs = [part.model_dump(mode="json", exclude_none=True) for part in parts]
    return sha256_hex(canonical_bytes(docs))


def artifact_signing_bytes(artifact_id: str, content_hash: str) -> bytes:
    return canonical_bytes({"artifact_id": artifact_id, "content_hash": content_hash})


def seal_artifact(
    parts: Sequence[Part],
    producer_key: Optional[Ed25519PrivateKey],
    key_id: Optional[str],
    *,
    artifact_id: str,
) -> Artifact:
    """Hash (and, when a key is given, sign) the parts into an artifact."""
    if not parts:
        raise InvalidParts("an artifact needs at least one part")
    try:
        validated = _PARTS_ADAPTER.validate_python(list(parts))
    except Exception as exc:
        raise InvalidParts(str(exc)) from None
    content_hash = parts_content_hash(validated)
    signature = None
    if producer_key is not None:
        if not key_id:
            raise InvalidParts("signing requires a key_id")
        raw = producer_key.sign(artifact_signing_bytes(artifact_id, content_hash))
        signature = DetachedSignature(
            key_id=key_id, algorithm="ed25519", signature=raw.hex()
        )
    return Artifact(
        artifact_id=artifact_id,
        parts=validated,
        content_hash=content_hash,
        signature=signature,
    )


def verify_artifact(artifact: Artifact, registry: TrustRegistry) -> None:
    """Hash equality first, then signature validity against the registry."""
    actual = parts_content_hash(artifact.parts)
    if actual != artifact.content_hash:
        raise HashMismatch(
            "artifact content does not match its recorded hash",
            expected=artifact.content_hash,
            observed=actual,
        )
    if artifact.signature is None:
        raise Unsigned("artifact carries no signature")
    entry = registry.get(artifact.signature.key_id)
    if entry is None:
        raise UnknownKey(f"key {artifact.signature.key_id!r} is not registered")
    if entry.revoked:
        raise RevokedKey(f"key {entry.key_id!r} has been revoked")
    public = registry.public_key(artifact.signature.key_id)
    assert public is not None
    try:
        public.verify(
            bytes.fromhex(artifact.signature.signature),
            artifact_signing_bytes(artifact.artifact_id, artifact.content_hash),
        )
    except InvalidSignature:
        raise SignatureMismatch("artifact signature does not verify") from None
