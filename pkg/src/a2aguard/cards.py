"""Agent card lifecycle: detached signing, registry-backed verification,
discovery resolution, and content scanning against instruction poisoning.

A card is trustworthy only if (a) its canonical bytes verify against a
registry key, (b) that key is authorized for the card's endpoint host and
not revoked, and (c) its free text passes the scan rules. Resolution wires
those checks into one call so callers cannot skip a step by accident.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Literal, Optional, Protocol

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .canonical import canonical_bytes
from .errors import (
    AlreadySigned,
    CardInvalid,
    CardTooLarge,
    DomainMismatch,
    InsecureChannel,
    InvalidCard,
    MalformedJson,
    PinMismatch,
    RevokedKey,
    SignatureMismatch,
    TrustTooLow,
    UnknownKey,
    Unsigned,
)
from .model import DEFAULT_LIMITS, AgentCard, DetachedSignature, ValidationLimits
from .validation import strict_json_loads

__all__ = [
    "RegistryEntry",
    "TrustRegistry",
    "generate_signing_key",
    "signing_key_from_seed",
    "public_key_hex",
    "card_signing_bytes",
    "sign_card",
    "verify_card",
    "host_matches",
    "ResolvePolicy",
    "ResolvedCard",
    "CardSource",
    "resolve_card",
    "ScanRule",
    "RuleSet",
    "Finding",
    "ScanReport",
    "scan_card",
    "iter_card_text",
    "escape_for_model",
    "DEFAULT_WHITELIST_CHARS",
]

_DEFAULT_RULES_PATH = Path(__file__).parent / "rules" / "default_rules.json"
DEFAULT_WHITELIST_CHARS = "\\x20-\\x7E"


# --- keys and registry -----------------------------------------------------

def generate_signing_key() -> Ed25519PrivateKey:
    return Ed25519PrivateKey.generate()


def signing_key_from_seed(seed: bytes) -> Ed25519PrivateKey:
    """Key from a 32-byte seed. Harness and tests use this so key material
    is reproducible from a seeded RNG."""
    return Ed25519PrivateKey.from_private_bytes(seed)


def public_key_hex(key: Ed25519PrivateKey) -> str:
    from cryptography.hazmat.primitives import serialization

    raw = key.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return raw.hex()


class RegistryEntry(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    key_id: str = Field(min_length=1, max_length=128)
    public_key: str = Field(pattern=r"^[0-9a-f]{64}$")
    # Hosts this key may sign for: exact names or "*.suffix" patterns.
    allowed_domains: list[str] = Field(min_length=1)
    revoked: bool = False
    trust_score: int = Field(default=100, ge=0, le=100)


class TrustRegistry:
    """Thread-safe key_id -> RegistryEntry store with JSON persistence."""

    def __init__(self, entries: Optional[list[RegistryEntry]] = None) -> None:
        self._lock = threading.RLock()
        self._entries: dict[str, RegistryEntry] = {}
        for entry in entries or []:
            self.register(entry)

    def register(self, entry: RegistryEntry) -> None:
        with self._lock:
            self._entries[entry.key_id] = entry

    def get(self, key_id: str) -> Optional[RegistryEntry]:
        with self._lock:
            return self._entries.get(key_id)

    def revoke(self, key_id: str) -> None:
        with self._lock:
            entry = self._entries.get(key_id)
            if entry is not None:
                self._entries[key_id] = entry.model_copy(update={"revoked": True})

    def set_trust_score(self, key_id: str, score: int) -> None:
        with self._lock:
            entry = self._entries.get(key_id)
            if entry is not None:
                self._entries[key_id] = entry.model_copy(update={"trust_score": score})

    def public_key(self, key_id: str) -> Optional[Ed25519PublicKey]:
        entry = self.get(key_id)
        if entry is None:
            return None
        return Ed25519PublicKey.from_public_bytes(bytes.fromhex(entry.public_key))

    def entries(self) -> list[RegistryEntry]:
        with self._lock:
            return sorted(self._entries.values(), key=lambda e: e.key_id)

    def save(self, path: Path) -> None:
        doc = {"keys": [entry.model_dump(mode="json") for entry in self.entries()]}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path) -> "TrustRegistry":
        doc = json.loads(path.read_text())
        return cls([RegistryEntry.model_validate(item) for item in doc.get("keys", [])])


# --- signing and verification ------------------------------------------------

def card_signing_bytes(card: AgentCard) -> bytes:
    """Canonical bytes of the card with the signature field removed.
    Everything else — auth schemes included — is covered by the signature."""
    doc = card.model_dump(mode="json", by_alias=True, exclude_none=True)
    doc.pop("signature", None)
    return canonical_bytes(doc)


def sign_card(card: AgentCard, key: Ed25519PrivateKey, key_id: str) -> AgentCard:
    if card.signature is not None:
        raise AlreadySigned(f"card already signed with key {card.signature.key_id!r}")
    try:
        payload = card_signing_bytes(card)
    except Exception as exc:
        raise InvalidCard(str(exc)) from None
    signature = key.sign(payload)
    return card.model_copy(
        update={
            "signature": DetachedSignature(
                key_id=key_id, algorithm="ed25519", signature=signature.hex()
            )
        }
    )


def host_matches(host: str, patterns: list[str]) -> bool:
    """Exact match, or dot-boundary suffix match for "*.suffix" patterns.
    A bare "*" matches nothing; wildcards must carry a suffix."""
    host = host.lower()
    for pattern in patterns:
        pattern = pattern.lower()
        if pattern.startswith("*."):
            if host.endswith(pattern[1:]) and len(host) > len(pattern) - 1:
                return True
        elif host == pattern:
            return True
    return False


def verify_card(card: AgentCard, registry: TrustRegistry) -> None:
    """Raises a VerifyError subclass unless the card's signature checks out
    against a registered, unrevoked key authorized for the card's host."""
    if card.signature is None:
        raise Unsigned("card carries no signature")
    entry = registry.get(card.signature.key_id)
    if entry is None:
        raise UnknownKey(f"key {card.signature.key_id!r} is not registered")
    if entry.revoked:
        raise RevokedKey(f"key {entry.key_id!r} has been revoked")
    if not host_matches(card.host, entry.allowed_domains):
        raise DomainMismatch(
            f"key {entry.key_id!r} is not authorized for host {card.host!r}"
        )
    public = Ed25519PublicKey.from_public_bytes(bytes.fromhex(entry.public_key))
    try:
        public.verify(bytes.fromhex(card.signature.signature), card_signing_bytes(card))
    except InvalidSignature:
        raise SignatureMismatch("card signature does not verify") from None


# --- discovery resolution ------------------------------------------------------

class CardSource(Protocol):
    """Transport-side discovery: fetch the card document for a host."""

    def fetch_card(self, host: str) -> tuple[Any, bytes]:
        """Returns (channel_identity, raw_bytes). Raises CardNotFound."""
        ...


class ResolvePolicy(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    require_signature: bool = True
    require_secure_channel: bool = True
    min_trust_score: int = Field(default=0, ge=0, le=100)
    # host -> expected channel fingerprint
    pins: dict[str, str] = Field(default_factory=dict)


@dataclass(frozen=True)
class ResolvedCard:
    card: AgentCard
    channel: Any
    raw: bytes


def resolve_card(
    host: str,
    resolver: CardSource,
    policy: Optional[ResolvePolicy] = None,
    registry: Optional[TrustRegistry] = None,
    limits: Optional[ValidationLimits] = None,
) -> ResolvedCard:
    """Fetch, size-check, parse, and (per policy) verify a host's card."""
    policy = policy or ResolvePolicy()
    limits = limits or DEFAULT_LIMITS

    channel, raw = resolver.fetch_card(host)

    pinned = policy.pins.get(host)
    if pinned is not None and channel.fingerprint != pinned:
        raise PinMismatch(
            f"channel fingerprint for {host!r} does not match pin",
            expected=pinned,
            observed=channel.fingerprint,
        )
    if policy.require_secure_channel and not channel.secure:
        raise InsecureChannel(f"refusing card from insecure channel to {host!r}")

    if len(raw) > limits.max_card_bytes:
        raise CardTooLarge(
            f"card is {len(raw)} bytes, cap is {limits.max_card_bytes}",
            observed=len(raw),
            limit=limits.max_card_bytes,
        )

    try:
        doc = strict_json_loads(raw)
    except MalformedJson as exc:
        raise CardInvalid(f"card is not parseable JSON: {exc.message}") from None
    try:
        card = AgentCard.model_validate(doc, context={"limits": limits})
    except ValidationError as exc:
        first = exc.errors()[0]
        path = "$" + "".join(
            f"[{seg}]" if isinstance(seg, int) else f".{seg}" for seg in first["loc"]
        )
        raise CardInvalid(first["msg"], path=path) from None

    if card.signature is None:
        if policy.require_signature:
            raise Unsigned(f"card for {host!r} is unsigned and policy requires one")
        return ResolvedCard(card=card, channel=channel, raw=raw)

    if registry is None:
        if policy.require_signature:
            raise UnknownKey("no trust registry available to verify the card")
        # Permissive resolver without a registry: the signature is opaque
        # bytes it cannot check, not grounds for rejection.
        return ResolvedCard(card=card, channel=channel, raw=raw)
    verify_card(card, registry)
    entry = registry.get(card.signature.key_id)
    assert entry is not None
    if entry.trust_score < policy.min_trust_score:
        raise TrustTooLow(
            f"key {entry.key_id!r} trust score {entry.trust_score} below "
            f"required {policy.min_trust_score}",
            observed=entry.trust_score,
            required=policy.min_trust_score,
        )
    return ResolvedCard(card=card, channel=channel, raw=raw)


# --- scanning ---------------------------------------------------------------------

class ScanRule(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    rule_id: str = Field(min_length=1, max_length=64)
    pattern: str = Field(min_length=1)
    severity: Literal["info", "warn", "block"]

    @field_validator("pattern")
    @classmethod
    def _compiles(cls, value: str) -> str:
        try:
            re.compile(value, re.IGNORECASE)
        except re.error as exc:
            raise ValueError(f"pattern does not compile: {exc}") from None
        return value


class RuleSet(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    version: int = Field(ge=1)
    whitelist_chars: str = DEFAULT_WHITELIST_CHARS
    whitelist_severity: Literal["info", "warn", "block"] = "warn"
    max_field_chars: int = Field(default=2048, ge=1)
    length_severity: Literal["info", "warn", "block"] = "warn"
    rules: list[ScanRule] = Field(default_factory=list)

    @field_validator("whitelist_chars")
    @classmethod
    def _class_compiles(cls, value: str) -> str:
        try:
            re.compile(f"[{value}]")
        except re.error as exc:
            raise ValueError(f"whitelist char class does not compile: {exc}") from None
        return value

    @classmethod
    def load(cls, path: Path) -> "RuleSet":
        return cls.model_validate(json.loads(path.read_text()))

    @classmethod
    def default(cls) -> "RuleSet":
        return cls.load(_DEFAULT_RULES_PATH)


class Finding(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    path: str
    rule_id: str
    severity: Literal["info", "warn", "block"]
    excerpt: str


class ScanReport(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    verdict: Literal["clean", "suspicious", "blocked"]
    findings: list[Finding]
    scanned_fields: int


def iter_card_text(card: AgentCard) -> Iterator[tuple[str, str]]:
    """(path, text) for every free-text field, in document order."""
    yield "name", card.name
    yield "version", card.version
    yield "provider", card.provider
    for i, skill in enumerate(card.capabilities):
        base = f"capabilities[{i}]"
        yield f"{base}.id", skill.id
        if skill.name:
            yield f"{base}.name", skill.name
        if skill.description:
            yield f"{base}.description", skill.description
        for j, tag in enumerate(skill.tags):
            yield f"{base}.tags[{j}]", tag
        for j, example in enumerate(skill.examples):
            yield f"{base}.examples[{j}]", example


def _excerpt(text: str, limit: int = 80) -> str:
    return text if len(text) <= limit else text[: limit - 3] + "..."


def scan_card(card: AgentCard, rules: Optional[RuleSet] = None) -> ScanReport:
    """Deterministic content scan. Findings are ordered by field, then by
    rule order in the rule set; verdict is the worst severity seen."""
    rules = rules or RuleSet.default()
    non_whitelisted = re.compile(f"[^{rules.whitelist_chars}]")
    findings: list[Finding] = []
    scanned = 0

    for path, text in iter_card_text(card):
        scanned += 1
        if len(text) > rules.max_field_chars:
            findings.append(
                Finding(
                    path=path,
                    rule_id="over-length",
                    severity=rules.length_severity,
                    excerpt=f"{len(text)} chars exceeds {rules.max_field_chars}",
                )
            )
        stray = non_whitelisted.search(text)
        if stray is not None:
            findings.append(
                Finding(
                    path=path,
                    rule_id="non-whitelisted-chars",
                    severity=rules.whitelist_severity,
                    excerpt=f"first offending char U+{ord(stray.group(0)):04X}",
                )
            )
        for rule in rules.rules:
            match = re.search(rule.pattern, text, re.IGNORECASE)
            if match is not None:
                findings.append(
                    Finding(
                        path=path,
                        rule_id=rule.rule_id,
                        severity=rule.severity,
                        excerpt=_excerpt(match.group(0)),
                    )
                )

    severities = {finding.severity for finding in findings}
    if "block" in severities:
        verdict = "blocked"
    elif "warn" in severities:
        verdict = "suspicious"
    else:
        verdict = "clean"
    return ScanReport(verdict=verdict, findings=findings, scanned_fields=scanned)


def escape_for_model(text: str, whitelist_chars: str = DEFAULT_WHITELIST_CHARS) -> str:
    """Escape every non-whitelisted character as \\uXXXX (or \\UXXXXXXXX
    beyond the BMP). Identity on whitelisted input; idempotent because the
    escape alphabet is itself whitelisted."""
    allowed = re.compile(f"[{whitelist_chars}]")
    out: list[str] = []
    for ch in text:
        if allowed.fullmatch(ch):
            out.append(ch)
        elif ord(ch) <= 0xFFFF:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(f"\\U{ord(ch):08x}")
    return "".join(out)
