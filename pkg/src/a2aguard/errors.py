"""Typed failure taxonomy and the JSON-RPC error code registry.

Codes -32700/-32600/-32601/-32602 follow JSON-RPC 2.0. The application
range -32000..-32019 is reserved for guard and task-layer rejections so
that clients can dispatch on the code without parsing messages.

Every error that can cross the wire maps to exactly one code; everything
raised by validation carries a field path and everything raised by a
guard names the control that tripped, because the audit log and the
attack report both key off those fields.
"""

from __future__ import annotations

from typing import Any, Optional

__all__ = [
    "RPC_PARSE_ERROR",
    "RPC_INVALID_ENVELOPE",
    "RPC_UNKNOWN_METHOD",
    "RPC_SCHEMA_VIOLATION",
    "RPC_INTERNAL_ERROR",
    "RPC_AUTH_REJECTED",
    "RPC_REPLAY_REJECTED",
    "RPC_MAC_REJECTED",
    "RPC_FORBIDDEN",
    "RPC_RATE_LIMITED",
    "RPC_TASK_STATE",
    "RPC_NOT_OWNER",
    "RPC_DUPLICATE_TASK",
    "RPC_SSRF_BLOCKED",
    "RPC_UNSUPPORTED_CAPABILITY",
    "RPC_STREAM_QUOTA",
    "RPC_TASK_NOT_FOUND",
    "RPC_EXECUTION_FAILED",
    "ERROR_REGISTRY",
    "A2AError",
    "ValidationFailure",
    "MalformedJson",
    "BodyTooLarge",
    "InvalidEnvelope",
    "UnknownMethod",
    "SchemaViolation",
    "GuardReject",
    "AuthRejected",
    "MissingCredential",
    "InsecureChannel",
    "MalformedToken",
    "BadSignature",
    "WrongIssuer",
    "WrongAudience",
    "TokenExpired",
    "TokenNotYetValid",
    "UnknownApiKey",
    "ReplayRejected",
    "StaleTimestamp",
    "FutureTimestamp",
    "DuplicateNonce",
    "ReplayStoreSaturated",
    "MacRejected",
    "MissingMac",
    "MacMismatch",
    "Forbidden",
    "RateLimited",
    "NotTaskOwner",
    "SsrfBlocked",
    "StreamQuotaExceeded",
    "TaskError",
    "TaskNotFound",
    "WrongTaskState",
    "IllegalTransition",
    "DuplicateTaskId",
    "UnsupportedCapability",
    "ExecutorFailure",
    "VerifyError",
    "Unsigned",
    "UnknownKey",
    "RevokedKey",
    "DomainMismatch",
    "SignatureMismatch",
    "HashMismatch",
    "TrustTooLow",
    "PinMismatch",
    "CardNotFound",
    "CardTooLarge",
    "CardInvalid",
    "CardBlockedByScan",
    "AlreadySigned",
    "InvalidCard",
    "CapabilityDenied",
    "InvalidParts",
    "TransportError",
    "NoCompatibleAuth",
    "StreamClosedWithoutTerminal",
    "DeliveryFailed",
    "WebhookRejected",
    "LogSealed",
    "ConfigError",
    "ClientRpcError",
    "error_payload",
]

# JSON-RPC 2.0 protocol range.
RPC_PARSE_ERROR = -32700
RPC_INVALID_ENVELOPE = -32600
RPC_UNKNOWN_METHOD = -32601
RPC_SCHEMA_VIOLATION = -32602
RPC_INTERNAL_ERROR = -32603

# Application range -32000..-32019: guard and task-layer rejections.
RPC_AUTH_REJECTED = -32000
RPC_REPLAY_REJECTED = -32001
RPC_MAC_REJECTED = -32002
RPC_FORBIDDEN = -32003
RPC_RATE_LIMITED = -32004
RPC_TASK_STATE = -32005
RPC_NOT_OWNER = -32006
RPC_DUPLICATE_TASK = -32007
RPC_SSRF_BLOCKED = -32008
RPC_UNSUPPORTED_CAPABILITY = -32009
RPC_STREAM_QUOTA = -32010
RPC_TASK_NOT_FOUND = -32011
RPC_EXECUTION_FAILED = -32012

ERROR_REGISTRY: dict[int, str] = {
    RPC_PARSE_ERROR: "request body is not parseable JSON",
    RPC_INVALID_ENVELOPE: "request envelope is structurally invalid",
    RPC_UNKNOWN_METHOD: "method is not part of the protocol surface",
    RPC_SCHEMA_VIOLATION: "a field violates the declared schema",
    RPC_INTERNAL_ERROR: "internal error",
    RPC_AUTH_REJECTED: "authentication failed or is missing",
    RPC_REPLAY_REJECTED: "request replayed or outside the freshness window",
    RPC_MAC_REJECTED: "request integrity check failed",
    RPC_FORBIDDEN: "authenticated principal lacks the required scope",
    RPC_RATE_LIMITED: "request rate exceeds the configured budget",
    RPC_TASK_STATE: "operation conflicts with the task's current state",
    RPC_NOT_OWNER: "task belongs to a different principal",
    RPC_DUPLICATE_TASK: "task id already exists with different parameters",
    RPC_SSRF_BLOCKED: "outbound URL rejected by the egress guard",
    RPC_UNSUPPORTED_CAPABILITY: "capability or skill is not offered",
    RPC_STREAM_QUOTA: "per-principal stream quota exhausted",
    RPC_TASK_NOT_FOUND: "no task with that id",
    RPC_EXECUTION_FAILED: "skill executor failed",
}


class A2AError(Exception):
    """Base of every typed failure. Maps to one JSON-RPC code."""

    code: int = RPC_INTERNAL_ERROR

    def __init__(self, message: str = "", **data: Any) -> None:
        super().__init__(message or ERROR_REGISTRY.get(self.code, ""))
        self.message = message or ERROR_REGISTRY.get(self.code, "")
        self.data = data

    def payload(self) -> dict[str, Any]:
        """The ``data`` member of the JSON-RPC error object."""
        body: dict[str, Any] = {"type": type(self).__name__}
        for key, value in self.data.items():
            if value is not None:
                body[key] = value
        return body


# --- validation failures: always carry a field path ---------------------

class ValidationFailure(A2AError):
    """Rejection produced while validating raw input. ``path`` locates the
    offending field ("$" for the document root)."""

    def __init__(self, message: str = "", *, path: str = "$", **data: Any) -> None:
        super().__init__(message, path=path, **data)
        self.path = path


class MalformedJson(ValidationFailure):
    code = RPC_PARSE_ERROR


class BodyTooLarge(ValidationFailure):
    code = RPC_INVALID_ENVELOPE


class InvalidEnvelope(ValidationFailure):
    """Top-level envelope problem: not an object, wrong protocol version,
    missing or unknown top-level member."""

    code = RPC_INVALID_ENVELOPE


class UnknownMethod(ValidationFailure):
    code = RPC_UNKNOWN_METHOD


class SchemaViolation(ValidationFailure):
    """A field inside params (or a document being linted) breaks its schema."""

    code = RPC_SCHEMA_VIOLATION


# --- guard rejections: always name the control that tripped -------------

class GuardReject(A2AError):
    """Rejection by a security control. ``control`` is the stable name the
    audit log records."""

    control: str = "guard"

    def payload(self) -> dict[str, Any]:
        body = super().payload()
        body["control"] = self.control
        return body


class AuthRejected(GuardReject):
    code = RPC_AUTH_REJECTED
    control = "authentication"


class MissingCredential(AuthRejected):
    pass


class InsecureChannel(AuthRejected):
    control = "channel-security"


class MalformedToken(AuthRejected):
    pass


class BadSignature(AuthRejected):
    pass


class WrongIssuer(AuthRejected):
    pass


class WrongAudience(AuthRejected):
    pass


class TokenExpired(AuthRejected):
    pass


class TokenNotYetValid(AuthRejected):
    pass


class UnknownApiKey(AuthRejected):
    pass


class ReplayRejected(GuardReject):
    code = RPC_REPLAY_REJECTED
    control = "replay"


class StaleTimestamp(ReplayRejected):
    pass


class FutureTimestamp(ReplayRejected):
    pass


class DuplicateNonce(ReplayRejected):
    pass


class ReplayStoreSaturated(ReplayRejected):
    """Nonce store at capacity: new admissions fail closed."""


class MacRejected(GuardReject):
    code = RPC_MAC_REJECTED
    control = "mac"


class MissingMac(MacRejected):
    pass


class MacMismatch(MacRejected):
    pass


class Forbidden(GuardReject):
    code = RPC_FORBIDDEN
    control = "authorization"


class RateLimited(GuardReject):
    code = RPC_RATE_LIMITED
    control = "rate-limit"

    def __init__(self, message: str = "", *, retry_after: float = 0.0, **data: Any) -> None:
        super().__init__(message, retry_after=retry_after, **data)
        self.retry_after = retry_after


class NotTaskOwner(GuardReject):
    code = RPC_NOT_OWNER
    control = "ownership"


class SsrfBlocked(GuardReject):
    code = RPC_SSRF_BLOCKED
    control = "egress-guard"


class StreamQuotaExceeded(GuardReject):
    code = RPC_STREAM_QUOTA
    control = "stream-quota"


class CapabilityDenied(GuardReject):
    """An executor touched a resource its handler never declared."""

    code = RPC_FORBIDDEN
    control = "capability-sandbox"


# --- task layer ----------------------------------------------------------

class TaskError(A2AError):
    pass


class TaskNotFound(TaskError):
    code = RPC_TASK_NOT_FOUND


class WrongTaskState(TaskError):
    code = RPC_TASK_STATE


class IllegalTransition(TaskError):
    """Attempted edge is not in the task status transition relation."""

    code = RPC_TASK_STATE

    def __init__(self, current: str, requested: str) -> None:
        super().__init__(
            f"no transition from {current!r} to {requested!r}",
            current=current,
            requested=requested,
        )
        self.current = current
        self.requested = requested


class DuplicateTaskId(TaskError):
    code = RPC_DUPLICATE_TASK


class UnsupportedCapability(TaskError):
    code = RPC_UNSUPPORTED_CAPABILITY


class ExecutorFailure(TaskError):
    code = RPC_EXECUTION_FAILED


# --- document verification (cards and artifacts) -------------------------

class VerifyError(A2AError):
    """Signature/integrity verification failure on a card or artifact."""


class Unsigned(VerifyError):
    pass


class UnknownKey(VerifyError):
    pass


class RevokedKey(VerifyError):
    pass


class DomainMismatch(VerifyError):
    """Signing key is not authorized for the card's endpoint host."""


class SignatureMismatch(VerifyError):
    pass


class HashMismatch(VerifyError):
    """Artifact content does not hash to the recorded content_hash."""


class TrustTooLow(VerifyError):
    """Signing key's registry trust score is below the resolve policy floor."""


class PinMismatch(VerifyError):
    """Observed channel fingerprint differs from the pinned one."""


class CardNotFound(VerifyError):
    pass


class CardTooLarge(VerifyError):
    pass


class CardInvalid(ValidationFailure):
    """Fetched card fails schema validation."""


class CardBlockedByScan(A2AError):
    """Scan verdict was 'blocked'; the card must not be consumed."""

    def __init__(self, message: str = "", *, findings: Any = None) -> None:
        super().__init__(message, findings=findings)
        self.findings = findings


class AlreadySigned(A2AError):
    pass


class InvalidCard(A2AError):
    pass


class InvalidParts(A2AError):
    pass


# --- client / delivery / config ------------------------------------------

class TransportError(A2AError):
    """Connection-level failure: refused, reset, or protocol breakage."""


class NoCompatibleAuth(A2AError):
    """No advertised auth scheme matches a credential the client holds."""


class StreamClosedWithoutTerminal(A2AError):
    """Stream ended and reconciliation never observed a terminal status."""


class DeliveryFailed(A2AError):
    """Webhook delivery exhausted its retry budget."""


class WebhookRejected(A2AError):
    """Inbound webhook failed receiver-side verification."""


class LogSealed(A2AError):
    """Append attempted on a sealed audit log."""


class ConfigError(A2AError):
    """Configuration violates a declared invariant."""


class ClientRpcError(A2AError):
    """Server-side JSON-RPC error surfaced to SDK callers."""

    def __init__(self, code: int, message: str, data: Optional[dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.code = code
        self.data = data or {}


def error_payload(exc: A2AError) -> dict[str, Any]:
    """JSON-RPC error object for ``exc``."""
    return {"code": exc.code, "message": exc.message, "data": exc.payload()}
