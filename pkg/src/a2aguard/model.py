"""Wire-visible domain types and the task status state machine.

All models are strict (unknown fields rejected, no type coercion beyond
enum-by-value), frozen after construction, and carry their wire shape via
``wire()``. Size and scheme limits are injected through the pydantic
validation context as ``{"limits": ValidationLimits(...)}`` so one model
definition serves differently-configured deployments; absent a context the
package defaults apply.
"""

from __future__ import annotations

import base64
import binascii
import re
from enum import Enum
from typing import Annotated, Any, Literal, Optional, Union
from urllib.parse import urlsplit

import jsonschema
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationInfo,
    field_validator,
    model_validator,
)

from .canonical import NonCanonicalizable, canonical_bytes
from .errors import IllegalTransition

__all__ = [
    "ValidationLimits",
    "DEFAULT_LIMITS",
    "TaskStatus",
    "TERMINAL_STATUSES",
    "ALLOWED_TRANSITIONS",
    "transition",
    "TextPart",
    "FilePart",
    "DataPart",
    "Part",
    "Message",
    "DetachedSignature",
    "AuthSchemeDescriptor",
    "SkillDescriptor",
    "AgentCard",
    "Artifact",
    "Task",
    "SecurityEnvelope",
    "RequestEnvelope",
    "TaskSendParams",
    "TaskGetParams",
    "TaskCancelParams",
    "PushRegistrationParams",
    "PARAMS_MODEL_BY_METHOD",
    "METHODS",
    "canonical_method",
    "StatusUpdateEvent",
    "ArtifactUpdateEvent",
    "ProgressEvent",
    "RpcErrorObject",
    "RpcResponse",
    "wire",
]

_ID_PATTERN = r"^[A-Za-z0-9][A-Za-z0-9._-]{0,127}$"
_HEX64 = r"^[0-9a-f]{64}$"
_HEX128 = r"^[0-9a-f]{128}$"

_STRICT = ConfigDict(extra="forbid", strict=True, frozen=True, populate_by_name=True)


class ValidationLimits(BaseModel):
    """Configurable input caps. Defaults are the shipped hardened values."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    max_body_bytes: int = Field(default=1024 * 1024, ge=1)
    max_card_bytes: int = Field(default=64 * 1024, ge=1)
    max_file_part_bytes: int = Field(default=4 * 1024 * 1024, ge=1)
    max_text_field_chars: int = Field(default=2048, ge=1)
    max_nesting_depth: int = Field(default=64, ge=4)
    allowed_endpoint_schemes: tuple[str, ...] = ("https",)
    # Lenient mode drops unknown top-level envelope fields instead of
    # rejecting; everything below the top level stays strict.
    lenient_envelope: bool = False


DEFAULT_LIMITS = ValidationLimits()


def _limits(info: ValidationInfo) -> ValidationLimits:
    ctx = info.context or {}
    limits = ctx.get("limits")
    return limits if isinstance(limits, ValidationLimits) else DEFAULT_LIMITS


# --- task status state machine -------------------------------------------

class TaskStatus(str, Enum):
    SUBMITTED = "submitted"
    WORKING = "working"
    INPUT_REQUIRED = "input-required"
    COMPLETED = "completed"
    FAILED = "failed"
    CANCELED = "canceled"


TERMINAL_STATUSES = frozenset(
    {TaskStatus.COMPLETED, TaskStatus.FAILED, TaskStatus.CANCELED}
)

# The full transition relation. Terminal statuses have out-degree zero; a
# finished task can never be revived.
ALLOWED_TRANSITIONS: dict[TaskStatus, frozenset[TaskStatus]] = {
    TaskStatus.SUBMITTED: frozenset(
        {TaskStatus.WORKING, TaskStatus.CANCELED, TaskStatus.FAILED}
    ),
    TaskStatus.WORKING: frozenset(
        {
            TaskStatus.INPUT_REQUIRED,
            TaskStatus.COMPLETED,
            TaskStatus.FAILED,
            TaskStatus.CANCELED,
        }
    ),
    TaskStatus.INPUT_REQUIRED: frozenset(
        {TaskStatus.WORKING, TaskStatus.CANCELED, TaskStatus.FAILED}
    ),
    TaskStatus.COMPLETED: frozenset(),
    TaskStatus.FAILED: frozenset(),
    TaskStatus.CANCELED: frozenset(),
}

# Enum fields opt out of strict instance checks so wire values validate,
# while unknown values still fail with a single enum error.
Status = Annotated[TaskStatus, Field(strict=False)]


# --- message parts ---------------------------------------------------------

class TextPart(BaseModel):
    model_config = _STRICT

    type: Literal["text"] = "text"
    text: str

    @field_validator("text")
    @classmethod
    def _cap_text(cls, value: str, info: ValidationInfo) -> str:
        cap = _limits(info).max_text_field_chars
        if len(value) > cap:
            raise ValueError(f"text exceeds {cap} characters")
        return value


class FilePart(BaseModel):
    """Binary content, either inline (base64) or by reference. Exactly one
    of ``bytes_content`` / ``uri`` must be present."""

    model_config = _STRICT

    type: Literal["file"] = "file"
    file_name: str = Field(min_length=1, max_length=255)
    mime_type: str = Field(default="application/octet-stream", min_length=1, max_length=255)
    bytes_content: Optional[str] = None
    uri: Optional[str] = Field(default=None, min_length=1, max_length=2048)

    @model_validator(mode="after")
    def _one_source(self, info: ValidationInfo) -> "FilePart":
        if (self.bytes_content is None) == (self.uri is None):
            raise ValueError("exactly one of bytes_content or uri is required")
        if self.bytes_content is not None:
            try:
                decoded = base64.b64decode(self.bytes_content, validate=True)
            except (binascii.Error, ValueError):
                raise ValueError("bytes_content is not valid base64") from None
            cap = _limits(info).max_file_part_bytes
            if len(decoded) > cap:
                raise ValueError(f"decoded content exceeds {cap} bytes")
        return self


class DataPart(BaseModel):
    """Structured JSON payload."""

    model_config = _STRICT

    type: Literal["data"] = "data"
    payload: Any

    @field_validator("payload")
    @classmethod
    def _canonicalizable(cls, value: Any) -> Any:
        try:
            canonical_bytes(value)
        except NonCanonicalizable as exc:
            raise ValueError(f"payload is not canonical JSON data: {exc}") from None
        return value


Part = Annotated[Union[TextPart, FilePart, DataPart], Field(discriminator="type")]


class Message(BaseModel):
    model_config = _STRICT

    role: Literal["user", "agent"]
    parts: list[Part] = Field(min_length=1, max_length=64)


# --- signatures, auth schemes, skills, cards -------------------------------

class DetachedSignature(BaseModel):
    model_config = _STRICT

    key_id: str = Field(pattern=_ID_PATTERN)
    algorithm: Literal["ed25519"] = "ed25519"
    signature: str = Field(pattern=_HEX128)


class AuthSchemeDescriptor(BaseModel):
    model_config = _STRICT

    scheme: Literal["api-key", "http-bearer", "oauth2", "oidc"]
    params: dict[str, str] = Field(default_factory=dict)


class SkillDescriptor(BaseModel):
    model_config = _STRICT

    id: str = Field(pattern=_ID_PATTERN)
    name: str = ""
    description: str = ""
    tags: list[str] = Field(default_factory=list, max_length=32)
    examples: list[str] = Field(default_factory=list, max_length=32)
    parameter_schema: dict[str, Any] = Field(default_factory=dict)
    required_scope: Optional[str] = Field(default=None, pattern=r"^[a-z][a-z0-9:._-]{0,63}$")

    @field_validator("parameter_schema")
    @classmethod
    def _schema_is_valid(cls, value: dict[str, Any]) -> dict[str, Any]:
        try:
            jsonschema.validators.validator_for(value).check_schema(value)
        except jsonschema.SchemaError as exc:
            raise ValueError(f"parameter_schema is not a valid schema: {exc.message}") from None
        return value


class AgentCard(BaseModel):
    """Self-description document served at the well-known discovery path.

    Free-text fields are deliberately not length-capped at parse time:
    hostile cards must survive parsing so the poisoning scanner can see
    and report them. The whole-document byte cap is enforced by the
    fetcher before parsing.
    """

    model_config = _STRICT

    name: str = Field(min_length=1)
    version: str = Field(min_length=1, max_length=64)
    provider: str = Field(min_length=1)
    a2a_endpoint_url: str = Field(min_length=1, max_length=2048)
    capabilities: list[SkillDescriptor] = Field(default_factory=list, max_length=128)
    auth_schemes: list[AuthSchemeDescriptor] = Field(default_factory=list, max_length=16)
    supports_push_notifications: bool = False
    signature: Optional[DetachedSignature] = None

    @field_validator("a2a_endpoint_url")
    @classmethod
    def _endpoint_shape(cls, value: str, info: ValidationInfo) -> str:
        parts = urlsplit(value)
        allowed = _limits(info).allowed_endpoint_schemes
        if parts.scheme not in allowed:
            raise ValueError(
                f"endpoint scheme {parts.scheme!r} not in allowed set {sorted(allowed)}"
            )
        if not parts.hostname:
            raise ValueError("endpoint URL has no host")
        return value

    @model_validator(mode="after")
    def _unique_skill_ids(self) -> "AgentCard":
        seen: set[str] = set()
        for skill in self.capabilities:
            if skill.id in seen:
                raise ValueError(f"duplicate skill id {skill.id!r}")
            seen.add(skill.id)
        return self

    @property
    def host(self) -> str:
        return urlsplit(self.a2a_endpoint_url).hostname or ""


# --- artifacts and tasks ----------------------------------------------------

class Artifact(BaseModel):
    model_config = _STRICT

    artifact_id: str = Field(pattern=_ID_PATTERN)
    parts: list[Part] = Field(min_length=1, max_length=64)
    content_hash: str = Field(pattern=_HEX64)
    signature: Optional[DetachedSignature] = None


class Task(BaseModel):
    model_config = _STRICT

    task_id: str = Field(pattern=_ID_PATTERN)
    skill_id: str = Field(pattern=_ID_PATTERN)
    status: Status
    history: list[Message] = Field(default_factory=list)
    artifacts: list[Artifact] = Field(default_factory=list)
    created_at: float = Field(ge=0)
    updated_at: float = Field(ge=0)
    owner_principal: str = ""

    @model_validator(mode="after")
    def _clock_order(self) -> "Task":
        if self.updated_at < self.created_at:
            raise ValueError("updated_at precedes created_at")
        return self


def transition(task: Task, next_status: TaskStatus, now: float) -> Task:
    """Return a copy of ``task`` moved along one edge of the transition
    relation. ``updated_at`` increases strictly even under a stalled clock,
    so transition order is always recoverable from timestamps.

    Raises IllegalTransition for any edge not in ALLOWED_TRANSITIONS.
    """
    if next_status not in ALLOWED_TRANSITIONS[task.status]:
        raise IllegalTransition(task.status.value, next_status.value)
    bumped = max(now, task.updated_at + 1e-6)
    return task.model_copy(update={"status": next_status, "updated_at": bumped})


# --- request envelope --------------------------------------------------------

class SecurityEnvelope(BaseModel):
    """Per-request security material: a fresh nonce, the client clock, and
    optionally a MAC over the request core and a bearer credential."""

    model_config = _STRICT

    nonce: str = Field(min_length=8, max_length=256)
    issued_at: float = Field(ge=0)
    mac: Optional[str] = Field(default=None, pattern=_HEX64)
    credential: Optional[str] = Field(default=None, min_length=1, max_length=8192)


class RequestEnvelope(BaseModel):
    model_config = _STRICT

    rpc_version: Literal["2.0"] = Field(alias="jsonrpc")
    request_id: Union[str, int] = Field(alias="id")
    method: str = Field(min_length=1, max_length=64)
    params: dict[str, Any]
    security: SecurityEnvelope

    @field_validator("request_id")
    @classmethod
    def _id_size(cls, value: Union[str, int]) -> Union[str, int]:
        if isinstance(value, str) and not (1 <= len(value) <= 128):
            raise ValueError("id must be 1..128 characters")
        return value


METHODS = frozenset(
    {
        "tasks/send",
        "tasks/sendSubscribe",
        "tasks/get",
        "tasks/cancel",
        "tasks/pushNotification/set",
    }
)

# Dot-form aliases are accepted at the parse boundary and canonicalized,
# so guards and the audit log only ever see one spelling per method.
_METHOD_ALIASES = {name.replace("/", "."): name for name in METHODS}


def canonical_method(raw: Any) -> Optional[str]:
    """Canonical method name, or None if the input names no method."""
    if not isinstance(raw, str):
        return None
    if raw in METHODS:
        return raw
    return _METHOD_ALIASES.get(raw)


class TaskSendParams(BaseModel):
    model_config = _STRICT

    task_id: str = Field(pattern=_ID_PATTERN)
    skill_id: str = Field(pattern=_ID_PATTERN)
    history: list[Message] = Field(min_length=1, max_length=128)


class TaskGetParams(BaseModel):
    model_config = _STRICT

    task_id: str = Field(pattern=_ID_PATTERN)


class TaskCancelParams(BaseModel):
    model_config = _STRICT

    task_id: str = Field(pattern=_ID_PATTERN)


class PushRegistrationParams(BaseModel):
    model_config = _STRICT

    task_id: str = Field(pattern=_ID_PATTERN)
    webhook_url: str = Field(min_length=1, max_length=2048)


PARAMS_MODEL_BY_METHOD: dict[str, type[BaseModel]] = {
    "tasks/send": TaskSendParams,
    "tasks/sendSubscribe": TaskSendParams,
    "tasks/get": TaskGetParams,
    "tasks/cancel": TaskCancelParams,
    "tasks/pushNotification/set": PushRegistrationParams,
}


# --- streamed / pushed events -------------------------------------------------

class StatusUpdateEvent(BaseModel):
    model_config = _STRICT

    event: Literal["task-status-update"] = "task-status-update"
    task_id: str
    status: Status
    timestamp: float
    final: bool = False


class ArtifactUpdateEvent(BaseModel):
    model_config = _STRICT

    event: Literal["task-artifact-update"] = "task-artifact-update"
    task_id: str
    artifact: Artifact
    timestamp: float


class ProgressEvent(BaseModel):
    """Informational progress ping. The only event class the stream lag
    policy is allowed to drop."""

    model_config = _STRICT

    event: Literal["task-progress"] = "task-progress"
    task_id: str
    seq: int
    note: str = ""
    timestamp: float


# --- responses ---------------------------------------------------------------

class RpcErrorObject(BaseModel):
    model_config = _STRICT

    code: int
    message: str
    data: dict[str, Any] = Field(default_factory=dict)


class RpcResponse(BaseModel):
    model_config = _STRICT

    rpc_version: Literal["2.0"] = Field(alias="jsonrpc")
    request_id: Optional[Union[str, int]] = Field(alias="id")
    result: Optional[dict[str, Any]] = None
    error: Optional[RpcErrorObject] = None

    @model_validator(mode="after")
    def _exactly_one(self) -> "RpcResponse":
        if (self.result is None) == (self.error is None):
            raise ValueError("exactly one of result or error is required")
        return self


def wire(model: BaseModel) -> dict[str, Any]:
    """Wire-shape dict: JSON mode, aliases applied, absent optionals omitted."""
    return model.model_dump(mode="json", by_alias=True, exclude_none=True)
