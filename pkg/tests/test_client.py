"""Client-side defenses: discovery, response checking, reconciliation."""

import json
from dataclasses import dataclass
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from conftest import FIXTURES, build_rig, make_card

from a2aguard.audit import AuditLog
from a2aguard.canonical import canonical_bytes
from a2aguard.cards import ResolvePolicy
from a2aguard.client import A2AClient, ClientConfig, user_message, verify_webhook
from a2aguard.errors import (
    CardBlockedByScan,
    ClientRpcError,
    NoCompatibleAuth,
    PinMismatch,
    StreamClosedWithoutTerminal,
    TransportError,
    Unsigned,
)
from a2aguard.harness.world import (
    ATTACKER_HOST,
    SCRIBE_HOST,
    World,
    build_world,
    fake_completion_handler,
)
from a2aguard.model import AgentCard, StatusUpdateEvent, TaskStatus, wire
from a2aguard.service import create_app
from a2aguard.transport import (
    ChannelIdentity,
    HttpClientTransport,
    InMemoryEndpoint,
    SubscribeResult,
    synthetic_fingerprint,
)


def register_unsigned_clone(world: World) -> None:
    # A copy of the scribe card, signature stripped, endpoint repointed.
    doc = json.loads(world.card_bytes[SCRIBE_HOST])
    doc.pop("signature", None)
    doc["a2a_endpoint_url"] = f"https://{ATTACKER_HOST}/a2a"
    counterfeit = canonical_bytes(doc)
    world.network.register(
        InMemoryEndpoint(
            host=ATTACKER_HOST,
            identity=ChannelIdentity(
                synthetic_fingerprint(ATTACKER_HOST), secure=True
            ),
            card_provider=lambda _client: counterfeit,
            rpc_handler=fake_completion_handler(world, "unit-test"),
            clock=world.clock,
        )
    )


def last_reject(client: A2AClient) -> dict:
    rejects = [e for e in client.audit.entries() if e.event_kind == "guard_reject"]
    assert rejects, "expected a client-side rejection entry"
    return rejects[-1].detail


# --- discovery against the in-memory world --------------------------------------


def test_discovery_returns_a_verified_agent():
    world = build_world(True)
    client = world.make_client("alice")
    agent = client.discover(SCRIBE_HOST)
    assert agent.host == SCRIBE_HOST
    assert agent.channel_fingerprint == world.fingerprints[SCRIBE_HOST]
    assert agent.card.signature is not None
    assert agent.scan is not None and agent.scan.verdict == "clean"
    assert agent.auth_scheme == "http-bearer"


def test_unsigned_cards_fail_hardened_discovery():
    world = build_world(True)
    register_unsigned_clone(world)
    client = world.make_client("alice")
    with pytest.raises(Unsigned):
        client.discover(ATTACKER_HOST)
    assert last_reject(client)["control"] == "card-trust"


def test_wrong_pin_fails_discovery():
    world = build_world(True)
    client = world.make_client("alice")
    client.config.policy = ResolvePolicy(
        require_signature=True,
        require_secure_channel=True,
        pins={SCRIBE_HOST: "00" * 32},
    )
    with pytest.raises(PinMismatch):
        client.discover(SCRIBE_HOST)


def test_baseline_clients_swallow_unsigned_cards():
    world = build_world(False)
    register_unsigned_clone(world)
    client = world.make_client("alice")
    agent = client.discover(ATTACKER_HOST)
    assert agent.card.signature is None


def test_no_compatible_auth_when_credentials_are_missing():
    world = build_world(True)
    client = world.make_client("alice")
    client.config.bearer_token = None
    with pytest.raises(NoCompatibleAuth):
        client.discover(SCRIBE_HOST)


# --- card scanning ------------------------------------------------------------------


def test_poisoned_card_is_blocked_by_the_scanner():
    doc = json.loads((FIXTURES / "cards" / "poisoned_01.json").read_text())
    card_bytes = canonical_bytes(doc)

    transport = ScriptedTransport(card_bytes, responder=lambda raw: b"{}")
    client = A2AClient(
        transport,
        ClientConfig(
            policy=ResolvePolicy(require_signature=False),
            api_key="k",
            verify_artifacts=False,
        ),
        audit=AuditLog(None, chained=False, clock=lambda: 0.0),
    )
    with pytest.raises(CardBlockedByScan) as exc:
        client.discover("summarizer.example")
    assert exc.value.payload()["findings"]
    assert last_reject(client)["control"] == "card-scan"


# --- scripted transport for response-shape checks ---------------------------------


@dataclass
class ScriptedConnection:
    identity: ChannelIdentity
    responder: object

    def send(self, raw: bytes) -> bytes:
        return self.responder(raw)

    def subscribe(self, raw: bytes) -> SubscribeResult:
        return self.responder(raw)


class ScriptedTransport:
    def __init__(self, card_bytes: bytes, responder):
        self.card_bytes = card_bytes
        self.responder = responder
        self.identity = ChannelIdentity(
            fingerprint=synthetic_fingerprint("scripted"), secure=True
        )

    def fetch_card(self, host: str):
        return self.identity, self.card_bytes

    def connect(self, url: str):
        return ScriptedConnection(identity=self.identity, responder=self.responder)


def scripted_client(responder, **config_overrides):
    card_bytes = canonical_bytes(wire(make_card()))
    config = ClientConfig(
        policy=ResolvePolicy(require_signature=False),
        api_key="k",
        verify_artifacts=False,
        scan_cards=False,
        **config_overrides,
    )
    client = A2AClient(
        ScriptedTransport(card_bytes, responder),
        config,
        audit=AuditLog(None, chained=False, clock=lambda: 0.0),
    )
    return client, client.discover("echo.example")


def rpc_result(request_id, result) -> bytes:
    return canonical_bytes({"jsonrpc": "2.0", "id": request_id, "result": result})


def test_response_id_splicing_is_refused():
    client, agent = scripted_client(lambda raw: rpc_result(999, {"task": {}}))
    with pytest.raises(TransportError) as exc:
        client.get_task(agent, "t-1")
    assert "id" in str(exc.value)


def test_non_json_responses_are_transport_errors():
    client, agent = scripted_client(lambda raw: b"<html>proxy error</html>")
    with pytest.raises(TransportError):
        client.get_task(agent, "t-1")


def test_results_without_a_task_object_are_refused():
    def responder(raw):
        request_id = json.loads(raw)["id"]
        return rpc_result(request_id, {"something": "else"})

    client, agent = scripted_client(responder)
    with pytest.raises(TransportError):
        client.get_task(agent, "t-1")


def test_rpc_errors_surface_with_code_and_data():
    def responder(raw):
        request_id = json.loads(raw)["id"]
        return canonical_bytes(
            {
                "jsonrpc": "2.0",
                "id": request_id,
                "error": {
                    "code": -32004,
                    "message": "nope",
                    "data": {"type": "Forbidden", "control": "authorization"},
                },
            }
        )

    client, agent = scripted_client(responder)
    with pytest.raises(ClientRpcError) as exc:
        client.get_task(agent, "t-1")
    assert exc.value.code == -32004
    assert exc.value.data["control"] == "authorization"


# --- stream reconciliation ----------------------------------------------------------


def completed_task_doc(task_id="t-1"):
    return {
        "task_id": task_id,
        "skill_id": "echo",
        "status": "completed",
        "history": [],
        "artifacts": [],
        "created_at": 1.0,
        "updated_at": 2.0,
        "owner_principal": "alice",
    }


def test_dead_stream_reconciles_against_terminal_task_state():
    def responder(raw):
        doc = json.loads(raw)
        if doc["method"] == "tasks/sendSubscribe":
            return SubscribeResult(events=iter([]))  # stream dies instantly
        return rpc_result(doc["id"], {"task": completed_task_doc()})

    client, agent = scripted_client(responder)
    events = list(client.subscribe_task(agent, "t-1", "echo", [user_message("hi")]))
    assert len(events) == 1
    final = events[0]
    assert isinstance(final, StatusUpdateEvent)
    assert final.final and final.status is TaskStatus.COMPLETED


def test_dead_stream_with_live_task_raises_and_audits():
    def responder(raw):
        doc = json.loads(raw)
        if doc["method"] == "tasks/sendSubscribe":
            return SubscribeResult(events=iter([]))
        working = dict(completed_task_doc(), status="working")
        return rpc_result(doc["id"], {"task": working})

    client, agent = scripted_client(responder)
    with pytest.raises(StreamClosedWithoutTerminal):
        list(client.subscribe_task(agent, "t-1", "echo", [user_message("hi")]))
    assert last_reject(client)["control"] == "stream-reconciliation"


def test_reconciliation_can_be_disabled():
    def responder(raw):
        doc = json.loads(raw)
        if doc["method"] == "tasks/sendSubscribe":
            return SubscribeResult(events=iter([]))
        return rpc_result(doc["id"], {"task": completed_task_doc()})

    client, agent = scripted_client(responder, poll_after_stream=False)
    with pytest.raises(StreamClosedWithoutTerminal):
        list(client.subscribe_task(agent, "t-1", "echo", [user_message("hi")]))


def test_unknown_stream_events_are_transport_errors():
    def responder(raw):
        doc = json.loads(raw)
        if doc["method"] == "tasks/sendSubscribe":
            return SubscribeResult(events=iter([("surprise-event", {"x": 1})]))
        return rpc_result(doc["id"], {"task": completed_task_doc()})

    client, agent = scripted_client(responder)
    with pytest.raises(TransportError):
        list(client.subscribe_task(agent, "t-1", "echo", [user_message("hi")]))


# --- full stack over HTTP -----------------------------------------------------------
#
# A2AClient -> httpx -> ASGI -> FastAPI -> A2AServer, with signature
# verification, scanning, and artifact checks all on.


def http_client_for(rig, **overrides):
    app = create_app(rig.server, assume_secure=True)
    http = TestClient(app, base_url="https://unit.example")
    config = ClientConfig(
        registry=rig.registry,
        policy=ResolvePolicy(require_signature=True, require_secure_channel=False),
        api_key=rig.api_key,
        verify_artifacts=True,
        scan_cards=True,
        bind_channel=False,
        **overrides,
    )
    return A2AClient(HttpClientTransport(http), config, clock=rig.clock)


def test_http_discover_send_and_verify_artifacts():
    rig = build_rig()
    client = http_client_for(rig)
    agent = client.discover("unit.example")
    assert agent.auth_scheme == "api-key"
    task = client.send_task(agent, "t-http-1", "echo", [user_message("end to end")])
    assert task.status is TaskStatus.COMPLETED
    assert task.artifacts and task.artifacts[0].signature is not None


def test_http_subscribe_streams_and_resumes_with_input():
    rig = build_rig()
    client = http_client_for(rig)
    agent = client.discover("unit.example")
    events = []
    # The stream stays open across the input-required pause; the reply
    # goes out on a second request while this one keeps consuming.
    for event in client.subscribe_task(
        agent, "t-http-2", "review-document", [user_message("draft words here")]
    ):
        events.append(event)
        if (
            isinstance(event, StatusUpdateEvent)
            and event.status is TaskStatus.INPUT_REQUIRED
        ):
            client.send_task(
                agent, "t-http-2", "review-document", [user_message("accuracy")]
            )
    assert events[-1].final
    assert events[-1].status is TaskStatus.COMPLETED
    statuses = [e.status for e in events if isinstance(e, StatusUpdateEvent)]
    assert TaskStatus.INPUT_REQUIRED in statuses
    rig.server.drain_workers()


def test_http_push_registration_round_trip():
    rig = build_rig()
    client = http_client_for(rig)
    agent = client.discover("unit.example")
    client.send_task(agent, "t-http-3", "review-document", [user_message("draft")])
    secret = client.set_push_notification(
        agent, "t-http-3", "https://hooks.example/cb"
    )
    client.send_task(agent, "t-http-3", "review-document", [user_message("clarity")])
    rig.server.drain_workers()
    assert len(rig.webhook_posts) == 1
    url, body, headers = rig.webhook_posts[0]
    payload = verify_webhook(body, headers, secret, now=rig.clock())
    assert payload["status"] == "completed"
