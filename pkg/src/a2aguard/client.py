"""Client SDK: discovery, task exchange, streaming, webhook receipt.

The client carries its own defenses — card verification and scanning at
discovery, channel binding between discovery and RPC, artifact signature
checks on everything it accepts, and an optional audit trail recording
what was rejected and why. Each defense is a config switch so the
unhardened stance is one object away.
"""

from __future__ import annotations

import hmac as _hmac
import secrets
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Generator, Iterable, Optional, Union

from pydantic import ValidationError as PydanticValidationError

from .audit import AuditLog
from .canonical import canonical_bytes
from .cards import (
    ResolvePolicy,
    ResolvedCard,
    RuleSet,
    ScanReport,
    TrustRegistry,
    resolve_card,
    scan_card,
)
from .artifacts import verify_artifact
from .errors import (
    A2AError,
    CardBlockedByScan,
    ClientRpcError,
    GuardReject,
    MalformedJson,
    NoCompatibleAuth,
    PinMismatch,
    StreamClosedWithoutTerminal,
    TransportError,
    Unsigned,
    VerifyError,
    WebhookRejected,
)
from .guards import compute_mac
from .model import (
    DEFAULT_LIMITS,
    AgentCard,
    Artifact,
    ArtifactUpdateEvent,
    Message,
    ProgressEvent,
    RpcResponse,
    StatusUpdateEvent,
    Task,
    TaskStatus,
    TERMINAL_STATUSES,
    TextPart,
    ValidationLimits,
    wire,
)
from .transport import ClientTransport, Connection
from .validation import strict_json_loads
from .webhooks import SIGNATURE_HEADER, TIMESTAMP_HEADER, sign_delivery

__all__ = [
    "ClientConfig",
    "VerifiedAgent",
    "StreamItem",
    "A2AClient",
    "user_message",
    "verify_webhook",
]


def user_message(text: str) -> Message:
    return Message(role="user", parts=[TextPart(text=text)])


@dataclass
class ClientConfig:
    registry: Optional[TrustRegistry] = None
    policy: ResolvePolicy = field(default_factory=ResolvePolicy)
    rules: Optional[RuleSet] = None
    limits: ValidationLimits = DEFAULT_LIMITS
    api_key: Optional[str] = None
    bearer_token: Optional[str] = None
    mac_secret: Optional[bytes] = None
    # Every artifact accepted must carry a verifying signature.
    verify_artifacts: bool = True
    # Scan every resolved card; refuse ones the ruleset blocks.
    scan_cards: bool = True
    # RPC connections must present the same channel identity discovery saw.
    bind_channel: bool = True
    # When a stream dies without a terminal event, poll once before failing.
    poll_after_stream: bool = True


@dataclass(frozen=True)
class VerifiedAgent:
    host: str
    card: AgentCard
    channel_fingerprint: str
    scan: Optional[ScanReport]
    auth_scheme: Optional[str]


StreamItem = Union[StatusUpdateEvent, ArtifactUpdateEvent, ProgressEvent]

_EVENT_MODELS = {
    "task-status-update": StatusUpdateEvent,
    "task-artifact-update": ArtifactUpdateEvent,
    "task-progress": ProgressEvent,
}


class A2AClient:
    def __init__(
        self,
        transport: ClientTransport,
        config: Optional[ClientConfig] = None,
        *,
        clock: Callable[[], float] = time.time,
        nonce_source: Optional[Callable[[], str]] = None,
        audit: Optional[AuditLog] = None,
    ) -> None:
        self.transport = transport
        self.config = config or ClientConfig()
        self._clock = clock
        self._nonce_source = nonce_source or (lambda: secrets.token_hex(16))
        self.audit = audit
        self._next_id = 0

    # -- discovery ---------------------------------------------------------

    def discover(self, host: str) -> VerifiedAgent:
        try:
            resolved = resolve_card(
                host,
                self.transport,
                policy=self.config.policy,
                registry=self.config.registry,
                limits=self.config.limits,
            )
            report = self._scan(resolved)
        except A2AError as exc:
            self._audit_reject(exc, stage="discover", host=host)
            raise
        scheme = self._pick_auth_scheme(resolved.card)
        self._audit_ok(
            "card-resolved",
            host=host,
            signed=resolved.card.signature is not None,
            verdict=report.verdict if report else "unscanned",
        )
        return VerifiedAgent(
            host=host,
            card=resolved.card,
            channel_fingerprint=resolved.channel.fingerprint,
            scan=report,
            auth_scheme=scheme,
        )

    def _scan(self, resolved: ResolvedCard) -> Optional[ScanReport]:
        if not self.config.scan_cards:
            return None
        rules = self.config.rules or RuleSet.default()
        report = scan_card(resolved.card, rules)
        if report.verdict == "blocked":
            raise CardBlockedByScan(
                f"card for {resolved.card.host!r} blocked by "
                f"{len(report.findings)} finding(s)",
                findings=[wire(f) for f in report.findings],
            )
        return report

    def _pick_auth_scheme(self, card: AgentCard) -> Optional[str]:
        if not card.auth_schemes:
            return None
        for descriptor in card.auth_schemes:
            if descriptor.scheme == "api-key" and self.config.api_key:
                return "api-key"
            if descriptor.scheme == "http-bearer" and self.config.bearer_token:
                return "http-bearer"
        raise NoCompatibleAuth(
            "agent offers "
            + ", ".join(d.scheme for d in card.auth_schemes)
            + " but no matching credential is configured"
        )

    # -- task methods --------------------------------------------------------

    def send_task(
        self,
        agent: VerifiedAgent,
        task_id: str,
        skill_id: str,
        history: Iterable[Message],
    ) -> Task:
        params = {
            "task_id": task_id,
            "skill_id": skill_id,
            "history": [wire(m) for m in history],
        }
        result = self._call(agent, "tasks/send", params)
        return self._accept_task(result, agent)

    def get_task(self, agent: VerifiedAgent, task_id: str) -> Task:
        result = self._call(agent, "tasks/get", {"task_id": task_id})
        return self._accept_task(result, agent)

    def cancel_task(self, agent: VerifiedAgent, task_id: str) -> Task:
        result = self._call(agent, "tasks/cancel", {"task_id": task_id})
        return self._accept_task(result, agent)

    def set_push_notification(
        self, agent: VerifiedAgent, task_id: str, url: str
    ) -> bytes:
        """Registers ``url`` for task updates. Returns the delivery-signing
        secret the receiver needs for verify_webhook."""
        result = self._call(
            agent, "tasks/pushNotification/set", {"task_id": task_id, "webhook_url": url}
        )
        secret_hex = result.get("webhook_secret")
        if not isinstance(secret_hex, str):
            raise TransportError("push registration result carries no secret")
        return bytes.fromhex(secret_hex)

    def subscribe_task(
        self,
        agent: VerifiedAgent,
        task_id: str,
        skill_id: str,
        history: Iterable[Message],
    ) -> Generator[StreamItem, None, None]:
        params = {
            "task_id": task_id,
            "skill_id": skill_id,
            "history": [wire(m) for m in history],
        }
        connection = self._connect(agent)
        raw = self._envelope(
            "tasks/sendSubscribe", params, credential=self._credential(agent)
        )
        outcome = connection.subscribe(raw)
        if outcome.events is None:
            response = self._parse_response(outcome.body, self._next_id)
            raise ClientRpcError(
                response.error.code, response.error.message, response.error.data
            )
        saw_final = False
        try:
            for name, payload in outcome.events:
                event = self._parse_event(name, payload, agent)
                if isinstance(event, StatusUpdateEvent) and event.final:
                    saw_final = True
                yield event
        except A2AError:
            raise
        if saw_final:
            return
        # Stream died early. Reconcile against task state before deciding.
        if self.config.poll_after_stream:
            task = self.get_task(agent, task_id)
            if task.status in TERMINAL_STATUSES:
                yield StatusUpdateEvent(
                    task_id=task_id,
                    status=task.status,
                    timestamp=task.updated_at,
                    final=True,
                )
                return
        exc = StreamClosedWithoutTerminal(
            f"stream for task {task_id!r} ended without a terminal status"
        )
        self._audit_reject(exc, stage="subscribe", task_id=task_id)
        raise exc

    # -- plumbing --------------------------------------------------------------

    def _connect(self, agent: VerifiedAgent) -> Connection:
        connection = self.transport.connect(agent.card.a2a_endpoint_url)
        if (
            self.config.bind_channel
            and connection.identity.fingerprint != agent.channel_fingerprint
        ):
            exc = PinMismatch(
                "endpoint channel identity differs from the one discovery saw",
                expected=agent.channel_fingerprint,
                observed=connection.identity.fingerprint,
            )
            self._audit_reject(exc, stage="connect", host=agent.host)
            raise exc
        return connection

    def _credential(self, agent: VerifiedAgent) -> Optional[str]:
        if agent.auth_scheme == "api-key":
            return self.config.api_key
        if agent.auth_scheme == "http-bearer":
            return self.config.bearer_token
        return None

    def _envelope(
        self, method: str, params: dict[str, Any], credential: Optional[str] = None
    ) -> bytes:
        self._next_id += 1
        nonce = self._nonce_source()
        issued_at = self._clock()
        security: dict[str, Any] = {"nonce": nonce, "issued_at": issued_at}
        if credential is not None:
            security["credential"] = credential
        if self.config.mac_secret is not None:
            security["mac"] = compute_mac(
                method, params, nonce, issued_at, self.config.mac_secret
            )
        return canonical_bytes(
            {
                "jsonrpc": "2.0",
                "id": self._next_id,
                "method": method,
                "params": params,
                "security": security,
            }
        )

    def _call(
        self, agent: VerifiedAgent, method: str, params: dict[str, Any]
    ) -> dict[str, Any]:
        connection = self._connect(agent)
        raw = self._envelope(method, params, credential=self._credential(agent))
        try:
            body = connection.send(raw)
        except TransportError as exc:
            self._audit_reject(exc, stage="send", host=agent.host)
            raise
        response = self._parse_response(body, self._next_id)
        if response.error is not None:
            exc = ClientRpcError(
                response.error.code, response.error.message, response.error.data
            )
            self._audit_reject(exc, stage=method, host=agent.host)
            raise exc
        assert response.result is not None
        return response.result

    def _parse_response(self, body: Optional[bytes], want_id: int) -> RpcResponse:
        if body is None:
            raise TransportError("no response body")
        # The peer answering with something other than a JSON-RPC response
        # is a transport failure to the caller, whatever the bytes were.
        try:
            doc = strict_json_loads(body)
            response = RpcResponse.model_validate(
                doc, context={"limits": self.config.limits}
            )
        except (MalformedJson, PydanticValidationError) as exc:
            raise TransportError(f"unparseable response: {exc}") from None
        if response.request_id != want_id:
            # A spliced or replayed response would carry the wrong id.
            raise TransportError(
                f"response id {response.request_id!r} does not match request {want_id}"
            )
        return response

    def _accept_task(self, result: dict[str, Any], agent: VerifiedAgent) -> Task:
        payload = result.get("task")
        if not isinstance(payload, dict):
            raise TransportError("result carries no task object")
        task = Task.model_validate(payload, context={"limits": self.config.limits})
        for artifact in task.artifacts:
            self._check_artifact(artifact, agent)
        return task

    def _check_artifact(self, artifact: Artifact, agent: VerifiedAgent) -> None:
        if not self.config.verify_artifacts:
            return
        try:
            if self.config.registry is None:
                raise Unsigned("artifact verification requires a trust registry")
            verify_artifact(artifact, self.config.registry)
        except VerifyError as exc:
            self._audit_reject(
                exc,
                stage="artifact",
                host=agent.host,
                artifact_id=artifact.artifact_id,
            )
            raise

    def _parse_event(
        self, name: str, payload: dict[str, Any], agent: VerifiedAgent
    ) -> StreamItem:
        model = _EVENT_MODELS.get(name)
        if model is None:
            raise TransportError(f"unknown stream event {name!r}")
        event = model.model_validate(payload, context={"limits": self.config.limits})
        if isinstance(event, ArtifactUpdateEvent):
            self._check_artifact(event.artifact, agent)
        return event

    # -- client-side audit ------------------------------------------------------

    def _control_for(self, exc: A2AError) -> str:
        if isinstance(exc, GuardReject):
            return exc.control
        if isinstance(exc, CardBlockedByScan):
            return "card-scan"
        if isinstance(exc, (StreamClosedWithoutTerminal,)):
            return "stream-reconciliation"
        if isinstance(exc, VerifyError):
            return "card-trust"
        return "client-policy"

    def _audit_reject(self, exc: A2AError, **detail: Any) -> None:
        if self.audit is None:
            return
        control = self._control_for(exc)
        if detail.get("stage") == "artifact":
            control = "artifact-integrity"
        self.audit.append(
            "guard_reject",
            principal_id="client",
            task_id=str(detail.pop("task_id", "")),
            detail={
                "control": control,
                "error_type": type(exc).__name__,
                **detail,
            },
        )

    def _audit_ok(self, event: str, **detail: Any) -> None:
        if self.audit is None:
            return
        self.audit.append(
            "auth", principal_id="client", detail={"event": event, **detail}
        )


# --- webhook receiver -----------------------------------------------------------


def verify_webhook(
    raw_body: bytes,
    headers: dict[str, str],
    secret: bytes,
    *,
    now: Optional[float] = None,
    tolerance_seconds: float = 300.0,
) -> dict[str, Any]:
    """Receiver-side check of one delivery. Returns the parsed payload or
    raises WebhookRejected; rejects both bad signatures and stale
    timestamps, since the signature covers the timestamp string."""
    now = time.time() if now is None else now
    lowered = {key.lower(): value for key, value in headers.items()}
    timestamp = lowered.get(TIMESTAMP_HEADER.lower())
    signature = lowered.get(SIGNATURE_HEADER.lower())
    if timestamp is None or signature is None:
        raise WebhookRejected("delivery is missing signature or timestamp header")
    try:
        issued_at = float(timestamp)
    except ValueError:
        raise WebhookRejected("timestamp header is not a number") from None
    if abs(now - issued_at) > tolerance_seconds:
        raise WebhookRejected(
            f"delivery timestamp is {abs(now - issued_at):.0f}s off; "
            f"tolerance is {tolerance_seconds:.0f}s"
        )
    expected = sign_delivery(raw_body, timestamp, secret)
    if not _hmac.compare_digest(expected, signature):
        raise WebhookRejected("delivery signature does not verify")
    doc = strict_json_loads(raw_body)
    if not isinstance(doc, dict):
        raise WebhookRejected("delivery body is not a JSON object")
    return doc
