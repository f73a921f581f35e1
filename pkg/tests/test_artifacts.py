"""Artifact hashing, sealing, and verification order."""

import pytest

from a2aguard.artifacts import (
    parts_content_hash,
    seal_artifact,
    verify_artifact,
)
from a2aguard.cards import RegistryEntry, TrustRegistry, public_key_hex
from a2aguard.errors import (
    HashMismatch,
    InvalidParts,
    RevokedKey,
    SignatureMismatch,
    UnknownKey,
    Unsigned,
)
from a2aguard.model import DataPart, TextPart

from conftest import seeded_key


@pytest.fixture
def producer():
    return seeded_key("artifact-producer")


@pytest.fixture
def artifact_registry(producer):
    registry = TrustRegistry()
    registry.register(
        RegistryEntry(
            key_id="producer-1",
            public_key=public_key_hex(producer),
            allowed_domains=["echo.example"],
        )
    )
    return registry


PARTS = [TextPart(text="the result"), DataPart(payload={"rows": [1, 2, 3]})]


def test_seal_then_verify(producer, artifact_registry):
    artifact = seal_artifact(PARTS, producer, "producer-1", artifact_id="art-1")
    assert artifact.content_hash == parts_content_hash(PARTS)
    verify_artifact(artifact, artifact_registry)


def test_content_hash_is_order_sensitive_and_canonical():
    one = parts_content_hash([TextPart(text="a"), TextPart(text="b")])
    two = parts_content_hash([TextPart(text="b"), TextPart(text="a")])
    assert one != two
    assert parts_content_hash(PARTS) == parts_content_hash(list(PARTS))


def test_tampered_part_is_a_hash_mismatch(producer, artifact_registry):
    artifact = seal_artifact(PARTS, producer, "producer-1", artifact_id="art-1")
    tampered = artifact.model_copy(update={"parts": [TextPart(text="poisoned result")]})
    with pytest.raises(HashMismatch):
        verify_artifact(tampered, artifact_registry)


def test_swapped_content_between_signed_artifacts_is_hash_mismatch(
    producer, artifact_registry
):
    # Both signatures are valid; the hash check must fire first.
    a = seal_artifact([TextPart(text="a")], producer, "producer-1", artifact_id="art-a")
    b = seal_artifact([TextPart(text="b")], producer, "producer-1", artifact_id="art-b")
    crossed = a.model_copy(update={"parts": b.parts})
    with pytest.raises(HashMismatch):
        verify_artifact(crossed, artifact_registry)


def test_unsigned_unknown_revoked(producer, artifact_registry):
    unsigned = seal_artifact(PARTS, None, None, artifact_id="art-1")
    with pytest.raises(Unsigned):
        verify_artifact(unsigned, artifact_registry)

    foreign = seal_artifact(PARTS, seeded_key("other"), "ghost-key", artifact_id="art-1")
    with pytest.raises(UnknownKey):
        verify_artifact(foreign, artifact_registry)

    ok = seal_artifact(PARTS, producer, "producer-1", artifact_id="art-1")
    artifact_registry.revoke("producer-1")
    with pytest.raises(RevokedKey):
        verify_artifact(ok, artifact_registry)


def test_signature_bound_to_artifact_id(producer, artifact_registry):
    sealed = seal_artifact(PARTS, producer, "producer-1", artifact_id="art-1")
    renamed = sealed.model_copy(update={"artifact_id": "art-2"})
    with pytest.raises(SignatureMismatch):
        verify_artifact(renamed, artifact_registry)


def test_flipped_signature_byte(producer, artifact_registry):
    sealed = seal_artifact(PARTS, producer, "producer-1", artifact_id="art-1")
    sig = sealed.signature
    flipped_hex = ("0" if sig.signature[0] != "0" else "1") + sig.signature[1:]
    broken = sealed.model_copy(
        update={"signature": sig.model_copy(update={"signature": flipped_hex})}
    )
    with pytest.raises(SignatureMismatch):
        verify_artifact(broken, artifact_registry)


def test_empty_parts_rejected(producer):
    with pytest.raises(InvalidParts):
        seal_artifact([], producer, "producer-1", artifact_id="art-1")


def test_signing_requires_key_id(producer):
    with pytest.raises(InvalidParts):
        seal_artifact(PARTS, producer, None, artifact_id="art-1")
