"""Per-request security controls: authentication, replay protection,
request MACs, scope authorization, and rate limiting.

Each guard either returns quietly or raises a GuardReject subclass; the
request pipeline turns those into RPC errors and audit entries. Guards
never consult the wall clock themselves — callers pass ``now`` so tests
and the harness drive time explicitly.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import secrets
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from .canonical import canonical_bytes
from .errors import (
    DuplicateNonce,
    Forbidden,
    FutureTimestamp,
    MacMismatch,
    MalformedToken,
    MissingMac,
    RateLimited,
    ReplayStoreSaturated,
    StaleTimestamp,
    UnknownApiKey,
)
from .model import RequestEnvelope
from .tokens import JwtKey, decode_token

__all__ = [
    "Principal",
    "RateLimitSettings",
    "JwtSettings",
    "GuardConfig",
    "NonceStore",
    "check_replay",
    "mac_payload",
    "compute_mac",
    "verify_mac",
    "ApiKeyStore",
    "validate_jwt",
    "authorize",
    "TokenBucket",
]


@dataclass(frozen=True)
class Principal:
    """Authenticated requester identity for the duration of one request."""

    id: str
    auth_kind: Literal["anonymous", "api-key", "jwt"]
    scopes: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        # Anonymous principals can never carry scopes; authorization
        # decisions must not be reachable without authentication.
        if self.auth_kind == "anonymous" and self.scopes:
            raise ValueError("anonymous principals cannot hold scopes")

    @classmethod
    def anonymous(cls, channel_fingerprint: str) -> "Principal":
        return cls(id=f"anon:{channel_fingerprint[:16]}", auth_kind="anonymous")


class RateLimitSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    capacity: int = Field(default=20, ge=1)
    refill_per_second: float = Field(default=10.0, gt=0)


class JwtSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    issuer: str = Field(min_length=1)
    audience: str = Field(min_length=1)
    leeway_seconds: float = Field(default=0.0, ge=0)


class GuardConfig(BaseModel):
    """Declarative switchboard for the request guards. Defaults are the
    hardened posture except where material (secrets, keys) must be
    provisioned before a control can be on."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    auth_mode: Literal["none", "api-key", "jwt"] = "none"
    replay_enabled: bool = True
    timestamp_window_seconds: float = Field(default=300.0, gt=0)
    nonce_store_capacity: int = Field(default=100_000, ge=1)
    mac_required: bool = False
    rate_limit: RateLimitSettings = Field(default_factory=RateLimitSettings)
    # skill_id -> scopes a principal must hold; absence of an entry denies.
    scope_policy: dict[str, list[str]] = Field(default_factory=dict)
    enforce_scopes: bool = True
    jwt: Optional[JwtSettings] = None
    # Harness-only weakness toggle: accept tokens without checking their
    # signature. Never enable outside an insecure baseline.
    jwt_insecure_skip_signature_check: bool = False


# --- replay protection --------------------------------------------------------


class NonceStore:
    """Nonce ledger scoped per principal. Entries live for twice the
    freshness window (both clock-skew directions), then lazily expire.
    At capacity the store fails closed: new admissions are rejected
    rather than silently evicting a live nonce."""

    def __init__(self, window_seconds: float = 300.0, capacity: int = 100_000) -> None:
        if window_seconds <= 0:
            raise ValueError("window must be positive")
        self._ttl = 2.0 * window_seconds
        self._capacity = capacity
        self._entries: dict[tuple[str, str], float] = {}
        self._expirations: deque[tuple[float, tuple[str, str]]] = deque()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def _purge(self, now: float) -> None:
        while self._expirations and self._expirations[0][0] <= now:
            expiry, key = self._expirations.popleft()
            if self._entries.get(key) == expiry:
                del self._entries[key]

    def admit(self, principal_id: str, nonce: str, now: float) -> None:
        key = (principal_id, nonce)
        with self._lock:
            self._purge(now)
            if key in self._entries:
                raise DuplicateNonce(f"nonce already used by {principal_id!r}")
            if len(self._entries) >= self._capacity:
                raise ReplayStoreSaturated(
                    f"nonce store at capacity {self._capacity}; failing closed"
                )
            expiry = now + self._ttl
            self._entries[key] = expiry
            self._expirations.append((expiry, key))


def check_replay(
    envelope: RequestEnvelope,
    principal: Principal,
    store: NonceStore,
    config: GuardConfig,
    now: float,
) -> None:
    """Freshness window first, then single-use nonce admission."""
    window = config.timestamp_window_seconds
    skew = now - envelope.security.issued_at
    if skew > window:
        raise StaleTimestamp(
            f"issued_at is {skew:.1f}s old, window is {window:.0f}s",
            skew=skew,
            window=window,
        )
    if -skew > window:
        raise FutureTimestamp(
            f"issued_at is {-skew:.1f}s in the future, window is {window:.0f}s",
            skew=skew,
            window=window,
        )
    store.admit(principal.id, envelope.security.nonce, now)


# --- request MACs ----------------------------------------------------------------


def mac_payload(
    method: str, params: dict[str, Any], nonce: str, issued_at: float
) -> bytes:
    """Canonical bytes the MAC covers: everything an attacker would want
    to splice — method, full params, and the anti-replay material."""
    return canonical_bytes(
        {"method": method, "params": params, "nonce": nonce, "issued_at": issued_at}
    )


def compute_mac(
    method: str, params: dict[str, Any], nonce: str, issued_at: float, secret: bytes
) -> str:
    digest = hmac.new(
        secret, mac_payload(method, params, nonce, issued_at), hashlib.sha256
    )
    return digest.hexdigest()


def verify_mac(envelope: RequestEnvelope, secret: bytes) -> None:
    presented = envelope.security.mac
    if presented is None:
        raise MissingMac("request carries no MAC and the server requires one")
    expected = compute_mac(
        envelope.method,
        envelope.params,
        envelope.security.nonce,
        envelope.security.issued_at,
        secret,
    )
    if not hmac.compare_digest(expected, presented):
        raise MacMismatch("request MAC does not verify")


# --- API keys -----------------------------------------------------------------------


class ApiKeyStore:
    """Maps SHA-256 digests of issued keys to principals. Plaintext keys
    are never persisted; ``issue`` returns the only copy."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._by_digest: dict[str, tuple[str, tuple[str, ...]]] = {}

    @staticmethod
    def _digest(key: str) -> str:
        return hashlib.sha256(key.encode("utf-8")).hexdigest()

    def issue(self, principal_id: str, scopes: tuple[str, ...] = ()) -> str:
        key = secrets.token_urlsafe(32)
        self.register(key, principal_id, scopes)
        return key

    def register(self, key: str, principal_id: str, scopes: tuple[str, ...] = ()) -> None:
        with self._lock:
            self._by_digest[self._digest(key)] = (principal_id, tuple(scopes))

    def lookup(self, presented: str) -> Principal:
        entry = self._by_digest.get(self._digest(presented))
        if entry is None:
            raise UnknownApiKey("presented API key is not recognized")
        principal_id, scopes = entry
        return Principal(id=principal_id, auth_kind="api-key", scopes=frozenset(scopes))

    def save(self, path: Path) -> None:
        with self._lock:
            doc = {
                "keys": [
                    {"digest": digest, "principal_id": pid, "scopes": list(scopes)}
                    for digest, (pid, scopes) in sorted(self._by_digest.items())
                ]
            }
        path.write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path: Path) -> "ApiKeyStore":
        store = cls()
        doc = json.loads(path.read_text())
        for item in doc.get("keys", []):
            store._by_digest[item["digest"]] = (
                item["principal_id"],
                tuple(item.get("scopes", [])),
            )
        return store


# --- bearer tokens --------------------------------------------------------------------


def _scopes_from_claims(claims: dict[str, Any]) -> frozenset[str]:
    raw = claims.get("scope", claims.get("scopes", ()))
    if isinstance(raw, str):
        return frozenset(part for part in raw.split() if part)
    if isinstance(raw, list) and all(isinstance(item, str) for item in raw):
        return frozenset(raw)
    raise MalformedToken("scope claim must be a string or list of strings")


def validate_jwt(
    token: str, config: GuardConfig, keys: dict[str, JwtKey], now: float
) -> Principal:
    if config.jwt is None:
        raise MalformedToken("server has no JWT settings configured")
    claims = decode_token(
        token,
        issuer=config.jwt.issuer,
        audience=config.jwt.audience,
        keys=keys,
        now=now,
        leeway=config.jwt.leeway_seconds,
        skip_signature_check=config.jwt_insecure_skip_signature_check,
    )
    subject = claims.get("sub")
    if not isinstance(subject, str) or not subject:
        raise MalformedToken("sub claim must be a non-empty string")
    return Principal(id=subject, auth_kind="jwt", scopes=_scopes_from_claims(claims))


# --- authorization -------------------------------------------------------------------


def authorize(principal: Principal, skill_id: str, config: GuardConfig) -> None:
    """Deny by default: a skill with no scope policy entry is closed, and
    every listed scope must be held."""
    if not config.enforce_scopes:
        return
    required = config.scope_policy.get(skill_id)
    if required is None:
        raise Forbidden(f"skill {skill_id!r} has no authorization policy; denying")
    missing = sorted(set(required) - set(principal.scopes))
    if missing:
        raise Forbidden(
            f"principal {principal.id!r} lacks scopes {missing} for skill {skill_id!r}",
            missing=missing,
        )


# --- rate limiting --------------------------------------------------------------------


@dataclass
class _Bucket:
    tokens: float
    updated: float


class TokenBucket:
    """Per-key token bucket. A fresh key starts with a full burst budget;
    each admitted request spends one token."""

    def __init__(self, capacity: int = 20, refill_per_second: float = 10.0) -> None:
        if capacity < 1 or refill_per_second <= 0:
            raise ValueError("capacity must be >=1 and refill positive")
        self.capacity = capacity
        self.refill_per_second = refill_per_second
        self._buckets: dict[str, _Bucket] = {}
        self._lock = threading.Lock()

    def check(self, key: str, now: float) -> None:
        with self._lock:
            bucket = self._buckets.get(key)
            if bucket is None:
                bucket = _Bucket(tokens=float(self.capacity), updated=now)
                self._buckets[key] = bucket
            elapsed = max(0.0, now - bucket.updated)
            bucket.tokens = min(
                float(self.capacity), bucket.tokens + elapsed * self.refill_per_second
            )
            bucket.updated = now
            if bucket.tokens >= 1.0:
                bucket.tokens -= 1.0
                return
            deficit = 1.0 - bucket.tokens
            raise RateLimited(
                f"rate limit exceeded for {key!r}",
                retry_after=deficit / self.refill_per_second,
            )
