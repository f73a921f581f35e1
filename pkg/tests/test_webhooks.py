"""Webhook egress guard, delivery signing, and dispatch retries."""

import pytest

from a2aguard.audit import AuditLog
from a2aguard.canonical import canonical_bytes
from a2aguard.client import verify_webhook
from a2aguard.errors import SsrfBlocked, WebhookRejected
from a2aguard.webhooks import (
    SIGNATURE_HEADER,
    TIMESTAMP_HEADER,
    WebhookConfig,
    WebhookDispatcher,
    WebhookRegistration,
    sign_delivery,
    system_resolver,
    validate_webhook_url,
)

ALLOWING = WebhookConfig(url_allow_list=["hooks.example", "*.cb.example"])


def public_resolver(host):
    # Global unicast; the guard classifies TEST-NET doc ranges as private.
    return ["8.8.8.8"]


# --- egress guard: the URL table ---------------------------------------------------
#
# Each denied case names the reason SsrfBlocked reports, so the table
# doubles as documentation of what the guard actually checks.

DENIED_URLS = [
    ("http://hooks.example/cb", "scheme"),
    ("ftp://hooks.example/cb", "scheme"),
    ("https://", "no-host"),
    ("https://user:pw@hooks.example/cb", "userinfo"),
    ("https://other.example/cb", "allow-list"),
    ("https://127.0.0.1/cb", "allow-list"),
    ("https://hooks.example.evil.example/cb", "allow-list"),
]

DENIED_ADDRESSES = [
    ("https://127.0.0.1/cb", "loopback address"),
    ("https://10.1.2.3/cb", "private address"),
    ("https://192.168.0.10/cb", "private address"),
    ("https://169.254.169.254/latest/meta-data", "link-local address"),
    ("https://224.0.0.1/cb", "multicast address"),
    ("https://0.0.0.0/cb", "unspecified address"),
    ("https://240.0.0.1/cb", "reserved address"),
    ("https://[::1]/cb", "loopback address"),
    # Integer and hex spellings of 127.0.0.1 must not slip past.
    ("https://2130706433/cb", "loopback address"),
    ("https://0x7f000001/cb", "loopback address"),
]


@pytest.mark.parametrize("url,reason", DENIED_URLS)
def test_guard_rejects_hostile_urls(url, reason):
    with pytest.raises(SsrfBlocked) as exc:
        validate_webhook_url(url, ALLOWING, resolver=public_resolver)
    assert exc.value.payload()["reason"] == reason


@pytest.mark.parametrize("url,reason", DENIED_ADDRESSES)
def test_guard_rejects_non_public_addresses(url, reason):
    # Allow-list the literal so the address check is what decides.
    host = url.split("/")[2].strip("[]")
    config = WebhookConfig(url_allow_list=[host])
    with pytest.raises(SsrfBlocked) as exc:
        validate_webhook_url(url, config, resolver=public_resolver)
    assert exc.value.payload()["reason"] == reason


def test_guard_accepts_an_allow_listed_public_host():
    validate_webhook_url("https://hooks.example/cb", ALLOWING, resolver=public_resolver)
    validate_webhook_url(
        "https://push.cb.example/cb", ALLOWING, resolver=public_resolver
    )


def test_guard_accepts_an_allow_listed_public_literal():
    config = WebhookConfig(url_allow_list=["8.8.4.4"])
    # No resolver involvement: the literal itself is checked.
    validate_webhook_url(
        "https://8.8.4.4/cb", config, resolver=lambda host: pytest.fail("resolved")
    )


def test_empty_allow_list_denies_everything():
    config = WebhookConfig()
    with pytest.raises(SsrfBlocked) as exc:
        validate_webhook_url(
            "https://hooks.example/cb", config, resolver=public_resolver
        )
    assert exc.value.payload()["reason"] == "allow-list"


def test_dns_rebinding_to_a_private_address_is_caught():
    # The name is allow-listed and looks harmless; one of its records is not.
    def resolver(host):
        return ["198.51.100.7", "10.0.0.5"]

    with pytest.raises(SsrfBlocked) as exc:
        validate_webhook_url("https://hooks.example/cb", ALLOWING, resolver=resolver)
    assert exc.value.payload()["reason"] == "private address"


def test_resolver_garbage_is_rejected_not_trusted():
    with pytest.raises(SsrfBlocked) as exc:
        validate_webhook_url(
            "https://hooks.example/cb", ALLOWING, resolver=lambda host: ["not-an-ip"]
        )
    assert exc.value.payload()["reason"] == "resolver"


def test_system_resolver_turns_nxdomain_into_a_block():
    # RFC 2606 reserves .invalid: it never resolves.
    with pytest.raises(SsrfBlocked):
        system_resolver("definitely-not-a-real-host.invalid")


def test_guard_off_accepts_anything():
    config = WebhookConfig(egress_guard_enabled=False)
    validate_webhook_url(
        "http://169.254.169.254/latest/meta-data",
        config,
        resolver=lambda host: pytest.fail("resolved"),
    )


# --- delivery signatures ------------------------------------------------------------


def test_signature_covers_both_timestamp_and_body():
    secret = b"s" * 32
    base = sign_delivery(b'{"a":1}', "100.0", secret)
    assert base == sign_delivery(b'{"a":1}', "100.0", secret)
    assert base != sign_delivery(b'{"a":2}', "100.0", secret)
    assert base != sign_delivery(b'{"a":1}', "100.1", secret)
    assert base != sign_delivery(b'{"a":1}', "100.0", b"t" * 32)


def delivery_headers(body, secret, at=1000.0):
    timestamp = repr(at)
    return {
        TIMESTAMP_HEADER: timestamp,
        SIGNATURE_HEADER: sign_delivery(body, timestamp, secret),
    }


def test_receiver_accepts_a_fresh_signed_delivery():
    secret = b"k" * 32
    body = canonical_bytes({"task_id": "t-1", "status": "completed"})
    doc = verify_webhook(body, delivery_headers(body, secret), secret, now=1010.0)
    assert doc["status"] == "completed"


def test_receiver_headers_are_case_insensitive():
    secret = b"k" * 32
    body = b'{"x":1}'
    headers = {
        key.lower(): value for key, value in delivery_headers(body, secret).items()
    }
    assert verify_webhook(body, headers, secret, now=1000.0) == {"x": 1}


def test_receiver_rejects_a_tampered_body():
    secret = b"k" * 32
    body = canonical_bytes({"amount": 100})
    headers = delivery_headers(body, secret)
    with pytest.raises(WebhookRejected):
        verify_webhook(canonical_bytes({"amount": 900}), headers, secret, now=1000.0)


def test_receiver_rejects_a_refreshed_timestamp():
    # Replaying an old body with a new timestamp must fail: the signature
    # covers the timestamp string.
    secret = b"k" * 32
    body = b'{"x":1}'
    headers = delivery_headers(body, secret, at=1000.0)
    headers[TIMESTAMP_HEADER] = repr(2000.0)
    with pytest.raises(WebhookRejected):
        verify_webhook(body, headers, secret, now=2000.0)


def test_receiver_rejects_stale_deliveries():
    secret = b"k" * 32
    body = b'{"x":1}'
    headers = delivery_headers(body, secret, at=1000.0)
    with pytest.raises(WebhookRejected) as exc:
        verify_webhook(body, headers, secret, now=1400.0, tolerance_seconds=300.0)
    assert "tolerance" in str(exc.value)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda headers: headers.pop(TIMESTAMP_HEADER),
        lambda headers: headers.pop(SIGNATURE_HEADER),
        lambda headers: headers.__setitem__(TIMESTAMP_HEADER, "yesterday"),
    ],
)
def test_receiver_rejects_missing_or_malformed_headers(mutate):
    secret = b"k" * 32
    body = b'{"x":1}'
    headers = delivery_headers(body, secret)
    mutate(headers)
    with pytest.raises(WebhookRejected):
        verify_webhook(body, headers, secret, now=1000.0)


def test_receiver_rejects_non_object_payloads():
    secret = b"k" * 32
    body = b"[1,2,3]"
    with pytest.raises(WebhookRejected):
        verify_webhook(body, delivery_headers(body, secret), secret, now=1000.0)


# --- dispatcher ---------------------------------------------------------------------


def make_registration(url="https://hooks.example/cb"):
    return WebhookRegistration(
        task_id="t-1", url=url, secret=b"w" * 32, principal_id="alice"
    )


def recording_dispatcher(responses, config=None, audit=None):
    """Dispatcher whose poster pops scripted responses: an int is a
    status, an Exception is raised. Sleeps and time are simulated."""
    posts = []
    sleeps = []
    clock = {"now": 1000.0}

    def poster(url, body, headers, timeout):
        posts.append((url, body, headers))
        action = responses.pop(0)
        if isinstance(action, Exception):
            raise action
        return action, b"{}"

    def sleeper(seconds):
        sleeps.append(seconds)
        clock["now"] += seconds

    dispatcher = WebhookDispatcher(
        config or WebhookConfig(url_allow_list=["hooks.example"]),
        poster=poster,
        sleeper=sleeper,
        clock=lambda: clock["now"],
        resolver=public_resolver,
        audit=audit,
    )
    return dispatcher, posts, sleeps


def test_first_try_delivery_is_signed_and_verifiable():
    dispatcher, posts, sleeps = recording_dispatcher([200])
    registration = make_registration()
    record = dispatcher.dispatch(registration, {"task_id": "t-1", "seq": 1})
    assert record.delivered
    assert len(record.attempts) == 1 and record.attempts[0].status == 200
    assert record.delays == [] and sleeps == []
    url, body, headers = posts[0]
    assert url == registration.url
    assert headers["Content-Type"] == "application/json"
    # The receiver-side check accepts exactly what was sent.
    payload = verify_webhook(body, headers, registration.secret, now=1000.0)
    assert payload == {"task_id": "t-1", "seq": 1}


def test_retries_back_off_exponentially_then_succeed():
    dispatcher, posts, sleeps = recording_dispatcher(
        [RuntimeError("refused"), 503, 200],
        config=WebhookConfig(
            url_allow_list=["hooks.example"], backoff_base_seconds=0.5
        ),
    )
    record = dispatcher.dispatch(make_registration(), {"seq": 1})
    assert record.delivered
    assert [a.ok for a in record.attempts] == [False, False, True]
    assert record.delays == [0.5, 1.0]
    assert sleeps == [0.5, 1.0]
    assert len(posts) == 3


def test_exhausted_retries_report_failure():
    dispatcher, posts, sleeps = recording_dispatcher(
        [500, 500, 500],
        config=WebhookConfig(
            url_allow_list=["hooks.example"],
            max_retries=3,
            backoff_base_seconds=1.0,
        ),
    )
    record = dispatcher.dispatch(make_registration(), {"seq": 1})
    assert not record.delivered
    assert len(record.attempts) == 3
    # No sleep after the final failure.
    assert record.delays == [1.0, 2.0]


def test_blocked_urls_are_never_posted_and_land_in_the_audit_log():
    audit = AuditLog(None, chained=True, clock=lambda: 1000.0)
    dispatcher, posts, _ = recording_dispatcher([200], audit=audit)
    registration = make_registration(url="https://169.254.169.254/latest")
    record = dispatcher.dispatch(registration, {"seq": 1})
    assert not record.delivered
    assert posts == []
    assert record.attempts[0].error
    rejects = [e for e in audit.entries() if e.event_kind == "guard_reject"]
    assert len(rejects) == 1
    assert rejects[0].detail["control"] == "egress-guard"


def test_successful_delivery_is_audited():
    audit = AuditLog(None, chained=True, clock=lambda: 1000.0)
    dispatcher, _, _ = recording_dispatcher([200], audit=audit)
    dispatcher.dispatch(make_registration(), {"seq": 1})
    entries = [
        e for e in audit.entries() if e.detail.get("event") == "webhook-delivery"
    ]
    assert len(entries) == 1 and entries[0].event_kind == "admin"
    assert entries[0].detail["delivered"] is True


def test_async_dispatch_completes_after_drain():
    dispatcher, posts, _ = recording_dispatcher([200])
    dispatcher.dispatch_async(make_registration(), {"seq": 1})
    dispatcher.drain()
    assert len(posts) == 1
