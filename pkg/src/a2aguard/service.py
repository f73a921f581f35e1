"""ASGI face of the server runtime.

FastAPI handles HTTP mechanics only; every protocol decision lives in
A2AServer. The RPC endpoint reads the raw body because MACs and replay
protection cover exact bytes — re-serialized JSON would not verify.

Deployments are expected to terminate TLS upstream; ``assume_secure``
says whether to treat inbound channels as secure. Set it False to let
the channel-security control reject plaintext callers.
"""

from __future__ import annotations

import math
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import StreamingResponse
from urllib.parse import urlsplit

from .errors import (
    RPC_AUTH_REJECTED,
    RPC_FORBIDDEN,
    RPC_INVALID_ENVELOPE,
    RPC_PARSE_ERROR,
    RPC_RATE_LIMITED,
    RPC_SCHEMA_VIOLATION,
    RPC_UNKNOWN_METHOD,
    A2AError,
    error_payload,
)
from .canonical import canonical_bytes
from .model import RequestEnvelope, RpcResponse
from .runtime import A2AServer
from .transport import ChannelIdentity, synthetic_fingerprint

__all__ = ["status_for_error", "channel_from_request", "create_app"]

_BAD_REQUEST_CODES = frozenset(
    {RPC_PARSE_ERROR, RPC_INVALID_ENVELOPE, RPC_UNKNOWN_METHOD, RPC_SCHEMA_VIOLATION}
)


def status_for_error(error_code: Optional[int]) -> int:
    """JSON-RPC application errors ride HTTP 200; protocol-shape and
    guard rejections get the matching HTTP status so plain HTTP clients
    and proxies behave sensibly."""
    if error_code is None:
        return 200
    if error_code == RPC_AUTH_REJECTED:
        return 401
    if error_code == RPC_FORBIDDEN:
        return 403
    if error_code == RPC_RATE_LIMITED:
        return 429
    if error_code in _BAD_REQUEST_CODES:
        return 400
    return 200


def channel_from_request(request: Request, assume_secure: bool) -> ChannelIdentity:
    client = request.client
    material = f"{client.host}" if client else "unknown-peer"
    secure = assume_secure or request.url.scheme == "https"
    return ChannelIdentity(
        fingerprint=synthetic_fingerprint(material), secure=secure
    )


def create_app(server: A2AServer, *, assume_secure: bool = True) -> FastAPI:
    server.self_check()
    app = FastAPI(
        title=server.config.card.name,
        version=server.config.card.version,
        docs_url="/docs",
    )
    rpc_path = urlsplit(server.config.card.a2a_endpoint_url).path or "/a2a"

    @app.get("/.well-known/agent.json")
    def agent_card(request: Request) -> Response:
        channel = channel_from_request(request, assume_secure)
        try:
            body, headers = server.serve_card(channel)
        except A2AError as exc:
            return _error_response(None, exc)
        return Response(content=body, headers=headers, media_type="application/json")

    @app.post(
        rpc_path,
        responses={200: {"model": RpcResponse}},
        openapi_extra={
            "requestBody": {
                "required": True,
                "content": {
                    "application/json": {
                        "schema": RequestEnvelope.model_json_schema()
                    }
                },
            }
        },
    )
    async def rpc(request: Request) -> Response:
        channel = channel_from_request(request, assume_secure)
        raw = await request.body()
        outcome = server.handle_request(raw, channel)
        if outcome.stream is not None:
            session = outcome.stream
            return StreamingResponse(
                session.frames(server._clock),
                media_type="text/event-stream",
                headers={"Cache-Control": "no-store", "X-Accel-Buffering": "no"},
            )
        headers = {}
        if outcome.retry_after is not None:
            headers["Retry-After"] = str(math.ceil(outcome.retry_after))
        return Response(
            content=outcome.body,
            status_code=status_for_error(outcome.error_code),
            media_type="application/json",
            headers=headers,
        )

    return app


def _error_response(request_id: object, exc: A2AError) -> Response:
    body = canonical_bytes(
        {"jsonrpc": "2.0", "id": request_id, "error": error_payload(exc)}
    )
    headers = {}
    retry_after = exc.data.get("retry_after")
    if retry_after is not None:
        headers["Retry-After"] = str(math.ceil(retry_after))
    return Response(
        content=body,
        status_code=status_for_error(exc.code),
        media_type="application/json",
        headers=headers,
    )
