"""Server runtime: the guarded request pipeline and the task engine.

Every inbound request passes the same gauntlet in a fixed order — rate
limit, channel check, schema validation, authentication, replay check,
MAC check, authorization — before any task state is touched. Each gate
is independently toggleable so a deployment (or a test harness) can
observe exactly what each control buys.

Skill executors are generators. They yield events (progress, artifacts,
input requests, completion) and receive follow-up messages via send().
The engine owns all task state; executors never mutate a Task directly.
"""

from __future__ import annotations

import json
import logging
import secrets as _secrets
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Generator, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from .artifacts import seal_artifact
from .audit import AuditLog
from .canonical import canonical_bytes, sha256_hex
from .cards import TrustRegistry, sign_card, verify_card
from .errors import (
    RPC_INTERNAL_ERROR,
    A2AError,
    CapabilityDenied,
    ConfigError,
    DuplicateTaskId,
    ExecutorFailure,
    GuardReject,
    InsecureChannel,
    MissingCredential,
    MissingMac,
    NotTaskOwner,
    RateLimited,
    StreamQuotaExceeded,
    TaskNotFound,
    UnsupportedCapability,
    ValidationFailure,
    WrongTaskState,
    error_payload,
)
from .guards import (
    ApiKeyStore,
    GuardConfig,
    NonceStore,
    Principal,
    TokenBucket,
    authorize,
    check_replay,
    validate_jwt,
    verify_mac,
)
from .model import (
    AgentCard,
    ArtifactUpdateEvent,
    DataPart,
    FilePart,
    Message,
    Part,
    ProgressEvent,
    PushRegistrationParams,
    RequestEnvelope,
    StatusUpdateEvent,
    Task,
    TaskCancelParams,
    TaskGetParams,
    TaskSendParams,
    TaskStatus,
    TERMINAL_STATUSES,
    TextPart,
    ValidationLimits,
    canonical_method,
    transition,
    wire,
)
from .streams import SseConfig, SseSession, StreamEvent, StreamRegistry
from .tokens import JwtKey
from .transport import ChannelIdentity, RpcOutcome
from .validation import ValidatedRequest, validate_envelope
from .webhooks import WebhookConfig, WebhookDispatcher, WebhookRegistration

__all__ = [
    "Progress",
    "RequireInput",
    "EmitArtifact",
    "Complete",
    "SkillEvent",
    "SkillContext",
    "SkillHandler",
    "ServerConfig",
    "ServerKeys",
    "A2AServer",
]

log = logging.getLogger(__name__)

# --------------------------------------------------------------------------
# Executor contract


@dataclass(frozen=True)
class Progress:
    note: str = ""


@dataclass(frozen=True)
class RequireInput:
    prompt: Message


@dataclass(frozen=True)
class EmitArtifact:
    parts: list[Part]


@dataclass(frozen=True)
class Complete:
    message: Optional[Message] = None


SkillEvent = Union[Progress, RequireInput, EmitArtifact, Complete]

Executor = Callable[
    ["SkillContext", Message], Generator[SkillEvent, Optional[Message], None]
]


class SkillContext:
    """What an executor is allowed to see. Resource reads are gated by
    the handler's declared capabilities when the sandbox is on; with the
    sandbox off, any skill can read anything the server holds."""

    def __init__(
        self,
        *,
        task_id: str,
        skill_id: str,
        resources: dict[str, str],
        capabilities: frozenset[str],
        sandbox_enabled: bool,
    ) -> None:
        self.task_id = task_id
        self.skill_id = skill_id
        self._resources = resources
        self._capabilities = capabilities
        self._sandbox_enabled = sandbox_enabled

    def read_resource(self, name: str) -> str:
        if self._sandbox_enabled and f"resource:{name}" not in self._capabilities:
            raise CapabilityDenied(
                f"skill {self.skill_id!r} did not declare resource:{name}",
                resource=name,
                skill_id=self.skill_id,
            )
        if name not in self._resources:
            raise KeyError(f"no such resource: {name}")
        return self._resources[name]


@dataclass(frozen=True)
class SkillHandler:
    skill_id: str
    executor: Executor
    # Declared needs, e.g. "resource:weekly-roster". The sandbox denies
    # anything outside this set.
    capabilities: frozenset[str] = frozenset()


# --------------------------------------------------------------------------
# Configuration


class ServerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    card: AgentCard
    limits: ValidationLimits = Field(default_factory=ValidationLimits)
    guard: GuardConfig = Field(default_factory=GuardConfig)
    sse: SseConfig = Field(default_factory=SseConfig)
    webhook: WebhookConfig = Field(default_factory=WebhookConfig)
    send_budget_seconds: float = Field(default=10.0, gt=0)
    require_secure_channel: bool = True
    schema_enforced: bool = True
    sandbox_enabled: bool = True
    sign_artifacts: bool = True
    audit_chained: bool = True


@dataclass
class ServerKeys:
    card_key: object = None
    card_key_id: Optional[str] = None
    artifact_key: object = None
    artifact_key_id: Optional[str] = None
    mac_secret: Optional[bytes] = None
    jwt_keys: dict[str, JwtKey] = field(default_factory=dict)


# --------------------------------------------------------------------------
# Internal task bookkeeping


@dataclass
class _TaskRecord:
    task: Task
    created_digest: str
    handler: SkillHandler
    lock: threading.RLock = field(default_factory=threading.RLock)
    generator: Optional[Generator[SkillEvent, Optional[Message], None]] = None
    sessions: list[SseSession] = field(default_factory=list)
    registrations: list[WebhookRegistration] = field(default_factory=list)
    progress_seq: int = 0
    # Result body of the call that created the task, replayed verbatim
    # on an identical retry.
    recorded_result: Optional[dict] = None


def _loose_message(raw: object) -> Message:
    """Best-effort Message used only when schema enforcement is off.
    model_construct skips every validator on purpose: the point of the
    unhardened configuration is that forged fields flow through."""
    if isinstance(raw, Message):
        return raw
    data = raw if isinstance(raw, dict) else {}
    parts: list[object] = []
    for part in data.get("parts", []):
        if not isinstance(part, dict):
            continue
        kind = part.get("type")
        if kind == "data":
            parts.append(
                DataPart.model_construct(type="data", payload=part.get("payload"))
            )
        elif kind == "file":
            parts.append(
                FilePart.model_construct(
                    type="file",
                    file_name=str(part.get("file_name", "")),
                    mime_type=str(part.get("mime_type", "application/octet-stream")),
                    bytes_content=part.get("bytes_content"),
                    uri=part.get("uri"),
                )
            )
        else:
            parts.append(
                TextPart.model_construct(type="text", text=str(part.get("text", "")))
            )
    if not parts:
        parts = [TextPart.model_construct(type="text", text="")]
    return Message.model_construct(role=data.get("role", "user"), parts=parts)


class A2AServer:
    def __init__(
        self,
        config: ServerConfig,
        *,
        keys: Optional[ServerKeys] = None,
        registry: Optional[TrustRegistry] = None,
        api_keys: Optional[ApiKeyStore] = None,
        audit: Optional[AuditLog] = None,
        resources: Optional[dict[str, str]] = None,
        clock: Callable[[], float] = time.time,
        webhook_poster=None,
        webhook_sleeper: Callable[[float], None] = time.sleep,
        webhook_resolver=None,
        secret_source: Callable[[int], bytes] = _secrets.token_bytes,
    ) -> None:
        self.config = config
        self.keys = keys or ServerKeys()
        self.registry = registry
        self._api_keys = api_keys
        self._clock = clock
        self._resources = resources or {}
        self._secret_source = secret_source
        self.audit = audit or AuditLog(None, chained=config.audit_chained, clock=clock)

        guard = config.guard
        if guard.mac_required and not self.keys.mac_secret:
            raise ConfigError("mac_required is set but no mac_secret provided")
        if guard.auth_mode == "jwt" and (guard.jwt is None or not self.keys.jwt_keys):
            raise ConfigError("auth_mode jwt needs jwt settings and at least one key")
        if guard.auth_mode == "api-key" and api_keys is None:
            raise ConfigError("auth_mode api-key needs an ApiKeyStore")
        if config.sign_artifacts and (
            self.keys.artifact_key is None or not self.keys.artifact_key_id
        ):
            raise ConfigError("sign_artifacts is set but no artifact key provided")

        self._nonces = NonceStore(
            window_seconds=guard.timestamp_window_seconds,
            capacity=guard.nonce_store_capacity,
        )
        self._bucket = TokenBucket(
            capacity=guard.rate_limit.capacity,
            refill_per_second=guard.rate_limit.refill_per_second,
        )
        self._streams = StreamRegistry(config.sse)
        dispatcher_kwargs = {
            "sleeper": webhook_sleeper,
            "clock": clock,
            "audit": self.audit,
        }
        if webhook_poster is not None:
            dispatcher_kwargs["poster"] = webhook_poster
        if webhook_resolver is not None:
            dispatcher_kwargs["resolver"] = webhook_resolver
        self._dispatcher = WebhookDispatcher(config.webhook, **dispatcher_kwargs)

        self._handlers: dict[str, SkillHandler] = {}
        self._tasks: dict[str, _TaskRecord] = {}
        self._tasks_lock = threading.Lock()
        self._workers: list[threading.Thread] = []

    # -- setup ------------------------------------------------------------

    def register_skill(self, handler: SkillHandler) -> None:
        self._handlers[handler.skill_id] = handler

    def signed_card_bytes(self) -> bytes:
        card = self.config.card
        if card.signature is None:
            if self.keys.card_key is None or not self.keys.card_key_id:
                raise ConfigError("card is unsigned and no card key is configured")
            card = sign_card(card, self.keys.card_key, self.keys.card_key_id)
            self.config = self.config.model_copy(update={"card": card})
        return canonical_bytes(wire(card))

    def self_check(self) -> None:
        """Startup invariants: every advertised skill has a handler, and
        the card we serve verifies against our own registry."""
        for skill in self.config.card.capabilities:
            if skill.id not in self._handlers:
                raise ConfigError(f"card advertises skill {skill.id!r} with no handler")
        for skill_id in self._handlers:
            if skill_id not in {s.id for s in self.config.card.capabilities}:
                raise ConfigError(f"handler {skill_id!r} is not on the card")
        if self.config.card.signature is not None and self.registry is not None:
            verify_card(self.config.card, self.registry)

    def as_endpoint(
        self, identity: Optional[ChannelIdentity] = None
    ) -> "InMemoryEndpoint":
        """This server as an in-memory network endpoint, for in-process
        wiring in tests and demos."""
        from .transport import InMemoryEndpoint, synthetic_fingerprint

        host = self.config.card.host
        identity = identity or ChannelIdentity(
            fingerprint=synthetic_fingerprint(host), secure=True
        )
        return InMemoryEndpoint(
            host=host,
            identity=identity,
            card_provider=lambda client: self.serve_card(client)[0],
            rpc_handler=lambda raw, client: self.handle_request(raw, client),
            clock=self._clock,
        )

    # -- card endpoint -----------------------------------------------------

    def serve_card(
        self, channel: ChannelIdentity, now: Optional[float] = None
    ) -> tuple[bytes, dict[str, str]]:
        now = self._clock() if now is None else now
        self._bucket.check(f"card:{channel.fingerprint}", now)
        body = self.signed_card_bytes()
        headers = {
            "Content-Type": "application/json",
            "Cache-Control": "no-store",
            "X-Content-Type-Options": "nosniff",
            "X-Frame-Options": "DENY",
            "Content-Security-Policy": "default-src 'none'",
        }
        return body, headers

    # -- request pipeline ---------------------------------------------------

    def handle_request(
        self,
        raw: bytes,
        channel: ChannelIdentity,
        now: Optional[float] = None,
    ) -> RpcOutcome:
        now = self._clock() if now is None else now
        request_id: object = None
        method = ""
        principal: Optional[Principal] = None
        try:
            self._bucket.check(f"rpc:{channel.fingerprint}", now)
            if self.config.require_secure_channel and not channel.secure:
                raise InsecureChannel(
                    "plaintext channel refused", fingerprint=channel.fingerprint
                )
            checked = self._validate(raw)
            request_id = checked.envelope.request_id
            method = checked.envelope.method
            principal = self._authenticate(checked.envelope, channel, now)
            guard = self.config.guard
            if guard.replay_enabled:
                if checked.envelope.security is None:
                    raise MissingCredential(
                        "replay protection requires a security block"
                    )
                check_replay(checked.envelope, principal, self._nonces, guard, now)
            if guard.mac_required:
                if checked.envelope.security is None:
                    raise MissingMac("request carries no security block")
                verify_mac(checked.envelope, self.keys.mac_secret)

            outcome = self._dispatch(checked, principal, channel, now)
            self.audit.append(
                "auth",
                principal_id=principal.id,
                task_id=self._task_id_of(checked),
                detail={
                    "event": "request-accepted",
                    "method": method,
                    "auth_kind": principal.auth_kind,
                },
            )
            return outcome
        except A2AError as exc:
            self._audit_rejection(exc, principal, method)
            retry_after = exc.data.get("retry_after") if isinstance(exc, RateLimited) else None
            return RpcOutcome(
                body=self._error_body(request_id, exc),
                error_code=exc.code,
                retry_after=retry_after,
            )
        except Exception:
            # Never leak internals. The audit trail gets the class name;
            # the caller gets a generic failure.
            log.exception("unhandled error in request pipeline")
            self.audit.append(
                "admin",
                principal_id=principal.id if principal else "",
                detail={"event": "internal-error", "method": method},
            )
            body = canonical_bytes(
                {
                    "jsonrpc": "2.0",
                    "id": request_id,
                    "error": {"code": RPC_INTERNAL_ERROR, "message": "internal error"},
                }
            )
            return RpcOutcome(body=body, error_code=RPC_INTERNAL_ERROR)

    def _validate(self, raw: bytes) -> ValidatedRequest:
        if self.config.schema_enforced:
            return validate_envelope(raw, self.config.limits)
        return self._loose_validate(raw)

    def _loose_validate(self, raw: bytes) -> ValidatedRequest:
        """Schema enforcement disabled: parse just enough to route. Bad
        actors keep whatever fields they forged; that is the point of
        running a deliberately unhardened configuration."""
        from .errors import MalformedJson, UnknownMethod

        try:
            data = json.loads(raw.decode("utf-8", errors="replace"))
        except json.JSONDecodeError as exc:
            raise MalformedJson(f"request body is not valid JSON: {exc.msg}") from None
        if not isinstance(data, dict):
            raise MalformedJson("request body is not a JSON object")
        try:
            method = canonical_method(str(data.get("method", "")))
        except UnknownMethod:
            raise
        params = data.get("params") if isinstance(data.get("params"), dict) else {}
        envelope = RequestEnvelope.model_construct(
            jsonrpc="2.0",
            request_id=data.get("id"),
            method=method,
            params=params,
            security=None,
        )
        raw_security = data.get("security")
        if isinstance(raw_security, dict):
            from .model import SecurityEnvelope

            envelope = envelope.model_copy(
                update={
                    "security": SecurityEnvelope.model_construct(
                        nonce=str(raw_security.get("nonce", "")),
                        issued_at=float(raw_security.get("issued_at", 0.0))
                        if isinstance(raw_security.get("issued_at"), (int, float))
                        else 0.0,
                        mac=raw_security.get("mac"),
                        credential=raw_security.get("credential"),
                    )
                }
            )
        params_model = self._loose_params(method, params)
        return ValidatedRequest(envelope=envelope, params=params_model)

    def _loose_params(self, method: str, params: dict) -> object:
        if method == "tasks/send" or method == "tasks/sendSubscribe":
            history = [_loose_message(m) for m in params.get("history", [])]
            if not history:
                history = [_loose_message({})]
            return TaskSendParams.model_construct(
                task_id=str(params.get("task_id", "")),
                skill_id=str(params.get("skill_id", "")),
                history=history,
            )
        if method == "tasks/get":
            return TaskGetParams.model_construct(task_id=str(params.get("task_id", "")))
        if method == "tasks/cancel":
            return TaskCancelParams.model_construct(
                task_id=str(params.get("task_id", ""))
            )
        return PushRegistrationParams.model_construct(
            task_id=str(params.get("task_id", "")),
            webhook_url=str(params.get("webhook_url", "")),
        )

    def _authenticate(
        self, envelope: RequestEnvelope, channel: ChannelIdentity, now: float
    ) -> Principal:
        guard = self.config.guard
        credential = envelope.security.credential if envelope.security else None
        if guard.auth_mode == "none":
            return Principal.anonymous(channel.fingerprint)
        if credential is None:
            raise MissingCredential(f"auth mode {guard.auth_mode!r} requires a credential")
        if guard.auth_mode == "api-key":
            assert self._api_keys is not None
            return self._api_keys.lookup(credential)
        return validate_jwt(credential, guard, self.keys.jwt_keys, now=now)

    def _dispatch(
        self,
        checked: ValidatedRequest,
        principal: Principal,
        channel: ChannelIdentity,
        now: float,
    ) -> RpcOutcome:
        method = checked.envelope.method
        request_id = checked.envelope.request_id
        if method == "tasks/send":
            result = self._tasks_send(checked, principal, now, streaming=False)
            return RpcOutcome(body=self._result_body(request_id, result))
        if method == "tasks/sendSubscribe":
            session = self._tasks_send(checked, principal, now, streaming=True)
            return RpcOutcome(
                body=self._result_body(request_id, {"streaming": True}),
                stream=session,
            )
        if method == "tasks/get":
            record = self._owned_record(checked.params.task_id, principal)
            with record.lock:
                return RpcOutcome(
                    body=self._result_body(request_id, {"task": wire(record.task)})
                )
        if method == "tasks/cancel":
            result = self._tasks_cancel(checked.params.task_id, principal, now)
            return RpcOutcome(body=self._result_body(request_id, result))
        result = self._push_set(checked.params, principal, now)
        return RpcOutcome(body=self._result_body(request_id, result))

    # -- method implementations ---------------------------------------------

    def _tasks_send(
        self,
        checked: ValidatedRequest,
        principal: Principal,
        now: float,
        *,
        streaming: bool,
    ):
        params: TaskSendParams = checked.params
        digest = sha256_hex(
            canonical_bytes(
                {
                    "task_id": params.task_id,
                    "skill_id": params.skill_id,
                    "history": [wire(m) for m in params.history],
                }
            )
        )
        with self._tasks_lock:
            record = self._tasks.get(params.task_id)
            if record is None:
                authorize(principal, params.skill_id, self.config.guard)
                handler = self._handlers.get(params.skill_id)
                on_card = any(s.id == params.skill_id for s in self.config.card.capabilities)
                if handler is None or (self.config.schema_enforced and not on_card):
                    raise UnsupportedCapability(
                        f"skill {params.skill_id!r} is not offered by this agent",
                        skill_id=params.skill_id,
                    )
                task = Task.model_construct(
                    task_id=params.task_id,
                    skill_id=params.skill_id,
                    status=TaskStatus.SUBMITTED,
                    history=list(params.history),
                    artifacts=[],
                    created_at=now,
                    updated_at=now,
                    owner_principal=principal.id,
                )
                record = _TaskRecord(task=task, created_digest=digest, handler=handler)
                self._tasks[params.task_id] = record
                created = True
            else:
                created = False
        if created:
            if streaming:
                # Claim the stream slot before committing the task: a
                # quota refusal must leave no half-created state behind.
                try:
                    session = self._attach_session(record, principal, now)
                except StreamQuotaExceeded:
                    with self._tasks_lock:
                        self._tasks.pop(params.task_id, None)
                    raise
            self.audit.append(
                "transition",
                principal_id=principal.id,
                task_id=params.task_id,
                detail={"from": "", "to": TaskStatus.SUBMITTED.value},
            )
            if streaming:
                self._drive_in_worker(record, principal, None, now)
                return session
            self._drive(record, principal, None, now)
            with record.lock:
                result = {"task": wire(record.task)}
                record.recorded_result = result
            return result

        # Existing task: only its owner may touch it, whatever they send.
        with record.lock:
            if record.task.owner_principal != principal.id:
                raise NotTaskOwner(
                    f"task {params.task_id!r} belongs to another principal",
                    task_id=params.task_id,
                )
            if digest == record.created_digest:
                # Idempotent retry of the creating call.
                if streaming:
                    return self._attach_session(record, principal, now)
                if record.recorded_result is not None:
                    return record.recorded_result
                return {"task": wire(record.task)}
            if record.task.skill_id != params.skill_id:
                raise DuplicateTaskId(
                    f"task id {params.task_id!r} is already bound to skill "
                    f"{record.task.skill_id!r}",
                    task_id=params.task_id,
                )
            if record.task.status is not TaskStatus.INPUT_REQUIRED:
                raise WrongTaskState(
                    f"task {params.task_id!r} is {record.task.status.value}, "
                    "not awaiting input",
                    task_id=params.task_id,
                    status=record.task.status.value,
                )
            # Input provision: append the new turn and resume the executor.
            reply = params.history[-1]
            record.task = record.task.model_copy(
                update={"history": record.task.history + list(params.history)}
            )
            self._transition(record, principal, TaskStatus.WORKING, now)
        if streaming:
            session = self._attach_session(record, principal, now)
            self._drive_in_worker(record, principal, reply, now)
            return session
        self._drive(record, principal, reply, now)
        with record.lock:
            return {"task": wire(record.task)}

    def _tasks_cancel(self, task_id: str, principal: Principal, now: float) -> dict:
        record = self._owned_record(task_id, principal)
        with record.lock:
            if record.task.status in TERMINAL_STATUSES:
                raise WrongTaskState(
                    f"task {task_id!r} is already {record.task.status.value}",
                    task_id=task_id,
                    status=record.task.status.value,
                )
            if record.generator is not None:
                record.generator.close()
                record.generator = None
            self._transition(record, principal, TaskStatus.CANCELED, now)
            return {"task": wire(record.task)}

    def _push_set(
        self, params: PushRegistrationParams, principal: Principal, now: float
    ) -> dict:
        if not self.config.card.supports_push_notifications:
            raise UnsupportedCapability("this agent does not offer push notifications")
        record = self._owned_record(params.task_id, principal)
        from .webhooks import validate_webhook_url

        validate_webhook_url(
            params.webhook_url, self.config.webhook, self._dispatcher._resolver
        )
        # The secret travels back over the authenticated channel; the
        # receiver uses it to verify delivery signatures.
        secret = self._secret_source(32)
        registration = WebhookRegistration(
            task_id=params.task_id,
            url=params.webhook_url,
            secret=secret,
            principal_id=principal.id,
        )
        with record.lock:
            record.registrations.append(registration)
        self.audit.append(
            "admin",
            principal_id=principal.id,
            task_id=params.task_id,
            detail={"event": "push-registered", "url": params.webhook_url},
        )
        return {"registered": True, "webhook_secret": secret.hex()}

    # -- task engine ----------------------------------------------------------

    def _owned_record(self, task_id: str, principal: Principal) -> _TaskRecord:
        with self._tasks_lock:
            record = self._tasks.get(task_id)
        if record is None:
            raise TaskNotFound(f"no task {task_id!r}", task_id=task_id)
        if record.task.owner_principal != principal.id:
            raise NotTaskOwner(
                f"task {task_id!r} belongs to another principal", task_id=task_id
            )
        return record

    def _attach_session(
        self, record: _TaskRecord, principal: Principal, now: float
    ) -> SseSession:
        def _detach(_: SseSession) -> None:
            with record.lock:
                if session in record.sessions:
                    record.sessions.remove(session)

        session = self._streams.open(
            principal.id, record.task.task_id, now=now, on_close=_detach
        )
        with record.lock:
            record.sessions.append(session)
            status = record.task.status
            snapshot = StatusUpdateEvent(
                task_id=record.task.task_id,
                status=status,
                timestamp=record.task.updated_at,
                final=status in TERMINAL_STATUSES,
            )
            session.push(
                StreamEvent(
                    name=snapshot.event,
                    payload=wire(snapshot),
                    critical=True,
                    final=snapshot.final,
                ),
                now=now,
            )
        return session

    def _drive_in_worker(
        self,
        record: _TaskRecord,
        principal: Principal,
        send_value: Optional[Message],
        now: float,
    ) -> None:
        def _run() -> None:
            try:
                self._drive(record, principal, send_value, now)
            except A2AError:
                # Already reflected in task state and the audit trail; a
                # worker has no response to attach it to.
                pass
            except Exception:
                log.exception("executor worker crashed")

        worker = threading.Thread(target=_run, daemon=True)
        self._workers = [t for t in self._workers if t.is_alive()] + [worker]
        worker.start()

    def drain_workers(self, timeout: float = 30.0) -> None:
        for worker in list(self._workers):
            worker.join(timeout)
        self._dispatcher.drain(timeout)

    def _drive(
        self,
        record: _TaskRecord,
        principal: Principal,
        send_value: Optional[Message],
        now: float,
    ) -> None:
        """Run the executor until it completes, fails, or asks for input.
        Holds the record lock for the whole run: one driver at a time."""
        deadline = self._clock() + self.config.send_budget_seconds
        with record.lock:
            if record.generator is None:
                context = SkillContext(
                    task_id=record.task.task_id,
                    skill_id=record.task.skill_id,
                    resources=self._resources,
                    capabilities=record.handler.capabilities,
                    sandbox_enabled=self.config.sandbox_enabled,
                )
                record.generator = record.handler.executor(
                    context, record.task.history[-1]
                )
                self._transition(record, principal, TaskStatus.WORKING, now)
                send_value = None
            gen = record.generator
            while True:
                if self._clock() > deadline:
                    gen.close()
                    record.generator = None
                    self._transition(record, principal, TaskStatus.FAILED, now)
                    raise ExecutorFailure(
                        "skill exceeded its execution budget",
                        task_id=record.task.task_id,
                    )
                try:
                    event = gen.send(send_value)
                    send_value = None
                except StopIteration:
                    record.generator = None
                    self._transition(record, principal, TaskStatus.COMPLETED, now)
                    return
                except CapabilityDenied as exc:
                    record.generator = None
                    self.audit.append(
                        "guard_reject",
                        principal_id=principal.id,
                        task_id=record.task.task_id,
                        detail={"control": exc.control, "error": exc.message},
                    )
                    self._transition(record, principal, TaskStatus.FAILED, now)
                    raise
                except Exception as exc:
                    record.generator = None
                    self.audit.append(
                        "admin",
                        principal_id=principal.id,
                        task_id=record.task.task_id,
                        detail={
                            "event": "executor-error",
                            "error_type": type(exc).__name__,
                        },
                    )
                    self._transition(record, principal, TaskStatus.FAILED, now)
                    raise ExecutorFailure(
                        "skill execution failed", task_id=record.task.task_id
                    ) from exc

                if isinstance(event, Progress):
                    record.progress_seq += 1
                    update = ProgressEvent(
                        task_id=record.task.task_id,
                        seq=record.progress_seq,
                        note=event.note,
                        timestamp=self._clock(),
                    )
                    self._publish(record, update, critical=False, final=False)
                elif isinstance(event, EmitArtifact):
                    self._emit_artifact(record, principal, event.parts)
                elif isinstance(event, RequireInput):
                    record.task = record.task.model_copy(
                        update={"history": record.task.history + [event.prompt]}
                    )
                    self._transition(record, principal, TaskStatus.INPUT_REQUIRED, now)
                    return
                elif isinstance(event, Complete):
                    if event.message is not None:
                        record.task = record.task.model_copy(
                            update={"history": record.task.history + [event.message]}
                        )
                    gen.close()
                    record.generator = None
                    self._transition(record, principal, TaskStatus.COMPLETED, now)
                    return
                else:
                    gen.close()
                    record.generator = None
                    self._transition(record, principal, TaskStatus.FAILED, now)
                    raise ExecutorFailure(
                        f"skill yielded an unknown event {type(event).__name__!r}",
                        task_id=record.task.task_id,
                    )

    def _emit_artifact(
        self, record: _TaskRecord, principal: Principal, parts: list[Part]
    ) -> None:
        artifact_id = f"{record.task.task_id}-a{len(record.task.artifacts) + 1}"
        if self.config.sign_artifacts:
            artifact = seal_artifact(
                parts,
                self.keys.artifact_key,
                self.keys.artifact_key_id,
                artifact_id=artifact_id,
            )
        else:
            from .artifacts import parts_content_hash
            from .model import Artifact

            artifact = Artifact(
                artifact_id=artifact_id,
                parts=parts,
                content_hash=parts_content_hash(parts),
            )
        record.task = record.task.model_copy(
            update={"artifacts": record.task.artifacts + [artifact]}
        )
        self.audit.append(
            "artifact",
            principal_id=principal.id,
            task_id=record.task.task_id,
            detail={
                "artifact_id": artifact.artifact_id,
                "content_hash": artifact.content_hash,
                "signed": artifact.signature is not None,
            },
        )
        update = ArtifactUpdateEvent(
            task_id=record.task.task_id, artifact=artifact, timestamp=self._clock()
        )
        self._publish(record, update, critical=True, final=False)

    def _transition(
        self, record: _TaskRecord, principal: Principal, to: TaskStatus, now: float
    ) -> None:
        prior = record.task.status
        record.task = transition(record.task, to, now=max(now, self._clock()))
        self.audit.append(
            "transition",
            principal_id=principal.id,
            task_id=record.task.task_id,
            detail={"from": prior.value, "to": to.value},
        )
        final = to in TERMINAL_STATUSES
        update = StatusUpdateEvent(
            task_id=record.task.task_id,
            status=to,
            timestamp=record.task.updated_at,
            final=final,
        )
        self._publish(record, update, critical=True, final=final)
        if final or to is TaskStatus.INPUT_REQUIRED:
            self._notify_webhooks(record, update)

    def _publish(
        self, record: _TaskRecord, update: BaseModel, critical: bool, final: bool
    ) -> None:
        event = StreamEvent(
            name=update.event, payload=wire(update), critical=critical, final=final
        )
        for session in list(record.sessions):
            session.push(event, now=self._clock())

    def _notify_webhooks(self, record: _TaskRecord, update: StatusUpdateEvent) -> None:
        payload = {"kind": "task-status", **wire(update)}
        for registration in list(record.registrations):
            self._dispatcher.dispatch_async(registration, payload)

    # -- response building ---------------------------------------------------

    def _result_body(self, request_id: object, result: dict) -> bytes:
        return canonical_bytes({"jsonrpc": "2.0", "id": request_id, "result": result})

    def _error_body(self, request_id: object, exc: A2AError) -> bytes:
        return canonical_bytes(
            {"jsonrpc": "2.0", "id": request_id, "error": error_payload(exc)}
        )

    def _task_id_of(self, checked: ValidatedRequest) -> str:
        task_id = getattr(checked.params, "task_id", "")
        return task_id if isinstance(task_id, str) else ""

    def _audit_rejection(
        self, exc: A2AError, principal: Optional[Principal], method: str
    ) -> None:
        if isinstance(exc, GuardReject):
            control = exc.control
        elif isinstance(exc, ValidationFailure):
            control = "schema-validation"
        else:
            control = "task-lifecycle"
        detail = {
            "control": control,
            "error_type": type(exc).__name__,
            "code": exc.code,
            "method": method,
        }
        if "path" in exc.data:
            detail["path"] = exc.data["path"]
        self.audit.append(
            "guard_reject",
            principal_id=principal.id if principal else "",
            task_id=exc.data.get("task_id", ""),
            detail=detail,
        )
