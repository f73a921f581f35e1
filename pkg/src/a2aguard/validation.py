"""Request envelope validation: raw bytes to typed, size-capped request.

The contract callers rely on: this module either returns a ValidatedRequest
or raises a ValidationFailure subclass carrying a field path. No input —
hostile, truncated, deeply nested, or otherwise — may make anything else
escape, because the fuzz gate counts every other exception as a defect.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Any, Optional

from pydantic import BaseModel, ValidationError

from .errors import (
    BodyTooLarge,
    InvalidEnvelope,
    MalformedJson,
    SchemaViolation,
    UnknownMethod,
)
from .model import (
    DEFAULT_LIMITS,
    PARAMS_MODEL_BY_METHOD,
    RequestEnvelope,
    ValidationLimits,
    canonical_method,
)

__all__ = [
    "ValidatedRequest",
    "validate_envelope",
    "strict_json_loads",
    "measure_depth",
    "loc_to_path",
]

log = logging.getLogger(__name__)

_TOP_LEVEL_FIELDS = ("jsonrpc", "id", "method", "params", "security")
# Discriminator values injected into pydantic error locations by tagged
# unions; dropped from paths when they are not the failing field itself.
_UNION_TAGS = {"text", "file", "data"}


class _DuplicateKey(ValueError):
    def __init__(self, key: str) -> None:
        super().__init__(f"duplicate object key {key!r}")


def _reject_duplicate_pairs(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    merged: dict[str, Any] = {}
    for key, value in pairs:
        if key in merged:
            raise _DuplicateKey(key)
        merged[key] = value
    return merged


def strict_json_loads(raw: bytes) -> Any:
    """Parse JSON, rejecting duplicate object keys. Raises MalformedJson on
    any parse failure, including invalid UTF-8 and parser recursion blowups."""
    try:
        return json.loads(raw, object_pairs_hook=_reject_duplicate_pairs)
    except RecursionError:
        raise MalformedJson("nesting exceeds parser limits") from None
    except ValueError as exc:
        raise MalformedJson(str(exc)) from None


def measure_depth(value: Any) -> int:
    """Container nesting depth, measured iteratively so hostile documents
    cannot exhaust the interpreter stack."""
    deepest = 0
    stack: list[tuple[Any, int]] = [(value, 1)]
    while stack:
        node, depth = stack.pop()
        if depth > deepest:
            deepest = depth
        if isinstance(node, dict):
            stack.extend((child, depth + 1) for child in node.values())
        elif isinstance(node, list):
            stack.extend((child, depth + 1) for child in node)
    return deepest


def loc_to_path(loc: tuple[Any, ...], root: str = "$") -> str:
    """Render a pydantic error location as a dotted/bracketed field path."""
    out = root
    for index, segment in enumerate(loc):
        if isinstance(segment, int):
            out += f"[{segment}]"
        elif segment in _UNION_TAGS and index + 1 < len(loc):
            continue
        else:
            out += f".{segment}"
    return out


def _first_error(exc: ValidationError, root: str) -> tuple[str, str]:
    err = exc.errors()[0]
    return loc_to_path(tuple(err["loc"]), root=root), err["msg"]


@dataclass(frozen=True)
class ValidatedRequest:
    """A request that passed every structural check. ``params`` is the
    method-specific typed model; ``envelope.params`` keeps the raw mapping
    exactly as sent, which is what MACs and idempotency compare against."""

    envelope: RequestEnvelope
    params: BaseModel
    dropped_fields: tuple[str, ...] = ()


def validate_envelope(
    raw: bytes, limits: Optional[ValidationLimits] = None
) -> ValidatedRequest:
    """Validate one request body.

    Order of checks, each with its own rejection type: byte cap, JSON
    parse, document shape, nesting depth, top-level field set, method
    name, envelope schema, then method params schema.
    """
    limits = limits or DEFAULT_LIMITS

    if len(raw) > limits.max_body_bytes:
        raise BodyTooLarge(
            f"body is {len(raw)} bytes, cap is {limits.max_body_bytes}",
            observed=len(raw),
            limit=limits.max_body_bytes,
        )

    doc = strict_json_loads(raw)

    if not isinstance(doc, dict):
        raise InvalidEnvelope("request must be a JSON object")

    depth = measure_depth(doc)
    if depth > limits.max_nesting_depth:
        raise InvalidEnvelope(
            f"nesting depth {depth} exceeds cap {limits.max_nesting_depth}",
            observed=depth,
            limit=limits.max_nesting_depth,
        )

    dropped: list[str] = []
    unknown = [key for key in doc if key not in _TOP_LEVEL_FIELDS]
    if unknown:
        if limits.lenient_envelope:
            for key in unknown:
                dropped.append(key)
                log.warning("lenient envelope: dropping unknown field %r", key)
            doc = {key: value for key, value in doc.items() if key in _TOP_LEVEL_FIELDS}
        else:
            raise InvalidEnvelope(
                f"unknown envelope field {unknown[0]!r}", path=f"$.{unknown[0]}"
            )

    for key in _TOP_LEVEL_FIELDS:
        if key not in doc:
            raise InvalidEnvelope(f"missing envelope field {key!r}", path=f"$.{key}")

    method = canonical_method(doc["method"])
    if method is None:
        raise UnknownMethod(
            f"unknown method {str(doc['method'])[:64]!r}", path="$.method"
        )

    context = {"limits": limits}
    envelope_doc = dict(doc, method=method)
    try:
        envelope = RequestEnvelope.model_validate(envelope_doc, context=context)
    except ValidationError as exc:
        path, reason = _first_error(exc, root="$")
        raise InvalidEnvelope(reason, path=path) from None
    except RecursionError:
        raise InvalidEnvelope("envelope too deeply nested") from None

    params_model = PARAMS_MODEL_BY_METHOD[method]
    try:
        params = params_model.model_validate(doc["params"], context=context)
    except ValidationError as exc:
        path, reason = _first_error(exc, root="params")
        raise SchemaViolation(reason, path=path, method=method) from None
    except RecursionError:
        raise SchemaViolation("params too deeply nested", path="params") from None

    return ValidatedRequest(
        envelope=envelope, params=params, dropped_fields=tuple(dropped)
    )
