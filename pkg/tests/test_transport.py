"""Transports: in-memory network taps and the httpx backend."""

import httpx
import pytest

from a2aguard.canonical import canonical_bytes
from a2aguard.errors import CardNotFound, TransportError
from a2aguard.streams import SseConfig, SseSession, StreamEvent, frame
from a2aguard.transport import (
    ChannelIdentity,
    HttpClientTransport,
    InMemoryClientTransport,
    InMemoryEndpoint,
    InMemoryNetwork,
    RpcOutcome,
    synthetic_fingerprint,
)

CLIENT = ChannelIdentity(fingerprint=synthetic_fingerprint("test-client"), secure=True)


def make_endpoint(host="echo.example", body=b'{"ok":true}', card=b'{"card":1}',
                  handler=None, identity=None):
    return InMemoryEndpoint(
        host=host,
        identity=identity
        or ChannelIdentity(fingerprint=synthetic_fingerprint(host), secure=True),
        card_provider=lambda client: card,
        rpc_handler=handler or (lambda raw, client: RpcOutcome(body=body)),
        clock=lambda: 0.0,
    )


# --- fingerprints ---------------------------------------------------------------


def test_synthetic_fingerprints_are_stable_and_distinct():
    a = synthetic_fingerprint("alpha")
    assert a == synthetic_fingerprint("alpha")
    assert len(a) == 64 and all(c in "0123456789abcdef" for c in a)
    assert a != synthetic_fingerprint("beta")


# --- in-memory network ------------------------------------------------------------


def test_fetch_card_returns_endpoint_identity_and_bytes():
    network = InMemoryNetwork()
    endpoint = make_endpoint()
    network.register(endpoint)
    identity, body = network.fetch_card("echo.example", CLIENT)
    assert identity == endpoint.identity
    assert body == b'{"card":1}'


def test_unknown_host_raises_card_not_found():
    network = InMemoryNetwork()
    with pytest.raises(CardNotFound):
        network.fetch_card("nowhere.example", CLIENT)
    transport = InMemoryClientTransport(network, CLIENT)
    with pytest.raises(CardNotFound):
        transport.connect("https://nowhere.example/a2a")


def test_resolve_override_redirects_lookups_to_another_endpoint():
    network = InMemoryNetwork()
    network.register(make_endpoint(host="real.example", card=b'{"who":"real"}'))
    network.register(make_endpoint(host="evil.example", card=b'{"who":"evil"}'))
    network.resolve_overrides["real.example"] = "evil.example"
    identity, body = network.fetch_card("real.example", CLIENT)
    assert body == b'{"who":"evil"}'
    assert identity.fingerprint == synthetic_fingerprint("evil.example")


def test_request_taps_see_raw_bytes_and_resolved_host():
    network = InMemoryNetwork()
    network.register(make_endpoint())
    seen = []
    network.request_taps.append(lambda host, raw: seen.append((host, raw)))
    network.exchange("https://echo.example/a2a", b'{"method":"x"}', CLIENT)
    assert seen == [("echo.example", b'{"method":"x"}')]


def test_response_taps_rewrite_exchange_bodies_but_not_cards():
    network = InMemoryNetwork()
    network.register(make_endpoint(body=b'{"sum":150.0}', card=b'{"sum":150.0}'))
    network.response_taps.append(
        lambda host, body: body.replace(b"150.0", b"999.0")
    )
    _, outcome = network.exchange("https://echo.example/a2a", b"{}", CLIENT)
    assert outcome.body == b'{"sum":999.0}'
    # Card fetches are not an RPC exchange; the tap must not touch them.
    _, card = network.fetch_card("echo.example", CLIENT)
    assert card == b'{"sum":150.0}'


# --- in-memory connections -----------------------------------------------------


def test_connection_send_round_trip_and_identity():
    network = InMemoryNetwork()
    network.register(make_endpoint())
    connection = InMemoryClientTransport(network, CLIENT).connect(
        "https://echo.example/a2a"
    )
    assert connection.identity.fingerprint == synthetic_fingerprint("echo.example")
    assert connection.send(b"{}") == b'{"ok":true}'


def test_send_refuses_a_streaming_answer():
    session_config = SseConfig()
    session = SseSession("s", "alice", "t", session_config, opened_at=0.0)
    network = InMemoryNetwork()
    network.register(
        make_endpoint(handler=lambda raw, client: RpcOutcome(stream=session))
    )
    connection = InMemoryClientTransport(network, CLIENT).connect(
        "https://echo.example/a2a"
    )
    with pytest.raises(TransportError):
        connection.send(b"{}")


def test_subscribe_yields_parsed_events_from_the_stream():
    session = SseSession("s", "alice", "t", SseConfig(), opened_at=0.0)
    session.push(StreamEvent(name="task-progress", payload={"seq": 1}), now=0.0)
    session.push(
        StreamEvent(name="task-status-update", payload={"final": True}, final=True),
        now=0.0,
    )
    network = InMemoryNetwork()
    network.register(
        make_endpoint(handler=lambda raw, client: RpcOutcome(stream=session))
    )
    connection = InMemoryClientTransport(network, CLIENT).connect(
        "https://echo.example/a2a"
    )
    result = connection.subscribe(b"{}")
    assert result.body is None
    assert list(result.events) == [
        ("task-progress", {"seq": 1}),
        ("task-status-update", {"final": True}),
    ]


def test_subscribe_falls_back_to_the_error_body():
    network = InMemoryNetwork()
    network.register(make_endpoint(body=b'{"error":{"code":-32000}}'))
    connection = InMemoryClientTransport(network, CLIENT).connect(
        "https://echo.example/a2a"
    )
    result = connection.subscribe(b"{}")
    assert result.events is None
    assert b"-32000" in result.body


# --- httpx backend ---------------------------------------------------------------


def mock_client(handler) -> httpx.Client:
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_http_fetch_card_builds_a_well_known_url():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["url"] = str(request.url)
        return httpx.Response(200, content=b'{"name":"x"}')

    transport = HttpClientTransport(mock_client(handler))
    identity, body = transport.fetch_card("agent.example")
    assert seen["url"] == "https://agent.example/.well-known/agent.json"
    assert body == b'{"name":"x"}'
    assert identity.secure
    assert identity.fingerprint == synthetic_fingerprint("https://agent.example")


def test_http_card_scheme_override_marks_the_channel_insecure():
    def handler(request: httpx.Request) -> httpx.Response:
        assert str(request.url).startswith("http://")
        return httpx.Response(200, content=b"{}")

    transport = HttpClientTransport(mock_client(handler), card_scheme="http")
    identity, _ = transport.fetch_card("agent.example")
    assert not identity.secure


@pytest.mark.parametrize("status", [404, 500])
def test_http_card_errors_become_card_not_found(status):
    transport = HttpClientTransport(
        mock_client(lambda request: httpx.Response(status))
    )
    with pytest.raises(CardNotFound):
        transport.fetch_card("agent.example")


def test_http_network_failure_becomes_card_not_found():
    def handler(request: httpx.Request) -> httpx.Response:
        raise httpx.ConnectError("refused")

    with pytest.raises(CardNotFound):
        HttpClientTransport(mock_client(handler)).fetch_card("agent.example")


def test_http_connect_probes_then_posts_json():
    calls = []

    def handler(request: httpx.Request) -> httpx.Response:
        calls.append((request.method, request.headers.get("content-type")))
        return httpx.Response(200, content=b'{"ok":1}')

    connection = HttpClientTransport(mock_client(handler)).connect(
        "https://agent.example/a2a"
    )
    assert connection.send(b"{}") == b'{"ok":1}'
    assert calls[0][0] == "HEAD"
    assert calls[1] == ("POST", "application/json")


def test_http_connect_failure_is_a_transport_error():
    def handler(request: httpx.Request) -> httpx.Response:
        raise httpx.ConnectError("refused")

    with pytest.raises(TransportError):
        HttpClientTransport(mock_client(handler)).connect("https://agent.example/a2a")


def test_http_subscribe_parses_event_stream_responses():
    body = frame(StreamEvent(name="task-progress", payload={"seq": 9}))

    def handler(request: httpx.Request) -> httpx.Response:
        if request.method == "HEAD":
            return httpx.Response(200)
        return httpx.Response(
            200, content=body, headers={"content-type": "text/event-stream"}
        )

    connection = HttpClientTransport(mock_client(handler)).connect(
        "https://agent.example/a2a"
    )
    result = connection.subscribe(b"{}")
    assert list(result.events) == [("task-progress", {"seq": 9})]


def test_http_subscribe_returns_json_error_bodies_verbatim():
    error_body = canonical_bytes({"error": {"code": -32000, "message": "no"}})

    def handler(request: httpx.Request) -> httpx.Response:
        if request.method == "HEAD":
            return httpx.Response(200)
        return httpx.Response(
            403, content=error_body, headers={"content-type": "application/json"}
        )

    connection = HttpClientTransport(mock_client(handler)).connect(
        "https://agent.example/a2a"
    )
    result = connection.subscribe(b"{}")
    assert result.events is None
    assert result.body == error_body
