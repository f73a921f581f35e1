"""Channel identities and the two transport backends.

The in-memory network gives tests and the adversarial harness a fully
deterministic wire: endpoints keyed by host name, resolver overrides to
model DNS manipulation, and request/response taps to model on-path
capture and tampering. The HTTP backend speaks the same contract over
httpx so the CLI client talks to real deployments.

A ChannelIdentity stands in for transport-layer authentication: over
real TLS it is the SHA-256 of the peer certificate; in-memory endpoints
mint one at registration. Pinning compares these fingerprints.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional, Protocol, Union
from urllib.parse import urlsplit

import httpx

from .errors import CardNotFound, TransportError
from .streams import SseSession, parse_sse_bytes

__all__ = [
    "ChannelIdentity",
    "synthetic_fingerprint",
    "RpcOutcome",
    "SubscribeResult",
    "Connection",
    "ClientTransport",
    "InMemoryEndpoint",
    "InMemoryNetwork",
    "InMemoryClientTransport",
    "HttpClientTransport",
]


@dataclass(frozen=True)
class ChannelIdentity:
    """What the transport can prove about the far end of a connection."""

    fingerprint: str
    secure: bool = True


def synthetic_fingerprint(material: str) -> str:
    return hashlib.sha256(f"channel:{material}".encode("utf-8")).hexdigest()


@dataclass
class RpcOutcome:
    """Server-side result of one request: a JSON body or an open stream,
    plus routing hints the HTTP layer maps onto status codes."""

    body: Optional[bytes] = None
    stream: Optional[SseSession] = None
    error_code: Optional[int] = None
    retry_after: Optional[float] = None


@dataclass
class SubscribeResult:
    """Client-side result of a subscribe call: either an event iterator or
    the JSON error body the server answered instead."""

    events: Optional[Iterator[tuple[str, dict[str, Any]]]] = None
    body: Optional[bytes] = None


class Connection(Protocol):
    identity: ChannelIdentity

    def send(self, raw: bytes) -> bytes: ...

    def subscribe(self, raw: bytes) -> SubscribeResult: ...


class ClientTransport(Protocol):
    def fetch_card(self, host: str) -> tuple[ChannelIdentity, bytes]: ...

    def connect(self, url: str) -> Connection: ...


# --- in-memory backend ------------------------------------------------------


@dataclass
class InMemoryEndpoint:
    host: str
    identity: ChannelIdentity
    card_provider: Callable[[ChannelIdentity], bytes]
    rpc_handler: Callable[[bytes, ChannelIdentity], RpcOutcome]
    # The server's clock. Stream consumption must tick in the same time
    # domain the server pushes in, or idle accounting is meaningless.
    clock: Callable[[], float] = field(default=None)  # type: ignore[assignment]


class InMemoryNetwork:
    """Deterministic wire between in-process clients and servers.

    ``resolve_overrides`` redirect a looked-up host to another endpoint
    (a stand-in for DNS hijacking). ``request_taps`` observe every raw
    request; ``response_taps`` may rewrite response bytes in flight.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._endpoints: dict[str, InMemoryEndpoint] = {}
        self.resolve_overrides: dict[str, str] = {}
        self.request_taps: list[Callable[[str, bytes], None]] = []
        self.response_taps: list[Callable[[str, bytes], bytes]] = []

    def register(self, endpoint: InMemoryEndpoint) -> None:
        with self._lock:
            self._endpoints[endpoint.host] = endpoint

    def _resolve(self, host: str) -> InMemoryEndpoint:
        with self._lock:
            actual = self.resolve_overrides.get(host, host)
            endpoint = self._endpoints.get(actual)
        if endpoint is None:
            raise CardNotFound(f"no endpoint registered for host {host!r}")
        return endpoint

    def fetch_card(
        self, host: str, client: ChannelIdentity
    ) -> tuple[ChannelIdentity, bytes]:
        endpoint = self._resolve(host)
        return endpoint.identity, endpoint.card_provider(client)

    def exchange(
        self, url: str, raw: bytes, client: ChannelIdentity
    ) -> tuple[ChannelIdentity, RpcOutcome]:
        host = urlsplit(url).hostname or url
        endpoint = self._resolve(host)
        for tap in self.request_taps:
            tap(endpoint.host, raw)
        outcome = endpoint.rpc_handler(raw, client)
        if outcome.body is not None:
            body = outcome.body
            for tap in self.response_taps:
                body = tap(endpoint.host, body)
            outcome = RpcOutcome(
                body=body,
                stream=outcome.stream,
                error_code=outcome.error_code,
                retry_after=outcome.retry_after,
            )
        return endpoint.identity, outcome


class _InMemoryConnection:
    def __init__(
        self, network: InMemoryNetwork, url: str, client: ChannelIdentity
    ) -> None:
        self._network = network
        self._url = url
        self._client = client
        self.identity, _ = self._probe()

    def _probe(self) -> tuple[ChannelIdentity, None]:
        host = urlsplit(self._url).hostname or self._url
        endpoint = self._network._resolve(host)
        return endpoint.identity, None

    def send(self, raw: bytes) -> bytes:
        _, outcome = self._network.exchange(self._url, raw, self._client)
        if outcome.body is None:
            raise TransportError("plain send answered with a stream")
        return outcome.body

    def subscribe(self, raw: bytes) -> SubscribeResult:
        host = urlsplit(self._url).hostname or self._url
        endpoint = self._network._resolve(host)
        _, outcome = self._network.exchange(self._url, raw, self._client)
        if outcome.stream is not None:
            session = outcome.stream
            clock = endpoint.clock or time.time
            return SubscribeResult(events=parse_sse_bytes(session.frames(clock)))
        return SubscribeResult(body=outcome.body)


class InMemoryClientTransport:
    def __init__(self, network: InMemoryNetwork, identity: ChannelIdentity) -> None:
        self.network = network
        self.identity = identity

    def fetch_card(self, host: str) -> tuple[ChannelIdentity, bytes]:
        return self.network.fetch_card(host, self.identity)

    def connect(self, url: str) -> Connection:
        return _InMemoryConnection(self.network, url, self.identity)


# --- HTTP backend --------------------------------------------------------------


def _peer_identity(response: httpx.Response, url: str) -> ChannelIdentity:
    """Fingerprint the TLS peer certificate when the stack exposes it;
    otherwise derive a synthetic identity from the URL. Plain http is
    marked insecure so policies can refuse it."""
    scheme = urlsplit(url).scheme
    host = urlsplit(url).hostname or url
    stream = response.extensions.get("network_stream")
    if stream is not None:
        try:
            ssl_object = stream.get_extra_info("ssl_object")
        except Exception:
            ssl_object = None
        if ssl_object is not None:
            der = ssl_object.getpeercert(binary_form=True)
            if der:
                return ChannelIdentity(
                    fingerprint=hashlib.sha256(der).hexdigest(), secure=True
                )
    return ChannelIdentity(
        fingerprint=synthetic_fingerprint(f"{scheme}://{host}"),
        secure=scheme == "https",
    )


class _HttpConnection:
    def __init__(self, client: httpx.Client, url: str) -> None:
        self._client = client
        self._url = url
        try:
            probe = client.head(url)
        except httpx.HTTPError as exc:
            raise TransportError(f"cannot reach {url!r}: {exc}") from None
        self.identity = _peer_identity(probe, url)

    def send(self, raw: bytes) -> bytes:
        try:
            response = self._client.post(
                self._url, content=raw, headers={"content-type": "application/json"}
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"request to {self._url!r} failed: {exc}") from None
        return response.content

    def subscribe(self, raw: bytes) -> SubscribeResult:
        try:
            request = self._client.build_request(
                "POST",
                self._url,
                content=raw,
                headers={
                    "content-type": "application/json",
                    "accept": "text/event-stream",
                },
            )
            response = self._client.send(request, stream=True)
        except httpx.HTTPError as exc:
            raise TransportError(f"subscribe to {self._url!r} failed: {exc}") from None
        content_type = response.headers.get("content-type", "")
        if not content_type.startswith("text/event-stream"):
            body = response.read()
            response.close()
            return SubscribeResult(body=body)

        def events() -> Iterator[tuple[str, dict[str, Any]]]:
            try:
                yield from parse_sse_bytes(response.iter_bytes())
            finally:
                response.close()

        return SubscribeResult(events=events())


class HttpClientTransport:
    """httpx-backed transport. Tests inject a client wired to an ASGI app;
    the CLI builds a real one. ``card_scheme="http"`` exists for local
    demos where no TLS terminator fronts the agent."""

    def __init__(
        self, client: Optional[httpx.Client] = None, *, card_scheme: str = "https"
    ) -> None:
        self._client = client or httpx.Client(timeout=30.0)
        self._card_scheme = card_scheme

    def fetch_card(self, host: str) -> tuple[ChannelIdentity, bytes]:
        url = f"{self._card_scheme}://{host}/.well-known/agent.json"
        try:
            response = self._client.get(url)
        except httpx.HTTPError as exc:
            raise CardNotFound(f"card fetch from {host!r} failed: {exc}") from None
        if response.status_code == 404:
            raise CardNotFound(f"host {host!r} serves no card")
        if response.status_code >= 400:
            raise CardNotFound(
                f"card fetch from {host!r} answered {response.status_code}"
            )
        return _peer_identity(response, url), response.content

    def connect(self, url: str) -> Connection:
        return _HttpConnection(self._client, url)
