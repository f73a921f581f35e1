"""Shared fixtures: deterministic keys, registries, and a server rig."""

import itertools
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import pytest

from a2aguard.canonical import canonical_bytes
from a2aguard.cards import (
    RegistryEntry,
    TrustRegistry,
    public_key_hex,
    sign_card,
    signing_key_from_seed,
)
from a2aguard.guards import ApiKeyStore, GuardConfig, RateLimitSettings
from a2aguard.model import AgentCard
from a2aguard.runtime import A2AServer, ServerConfig, ServerKeys
from a2aguard.skills import builtin_handlers
from a2aguard.transport import ChannelIdentity, RpcOutcome, synthetic_fingerprint
from a2aguard.validation import strict_json_loads
from a2aguard.webhooks import WebhookConfig

FIXTURES = Path(__file__).parent / "fixtures"


def make_card(**overrides) -> AgentCard:
    doc = {
        "name": "echo-agent",
        "version": "1.0.0",
        "provider": "acme-tools",
        "a2a_endpoint_url": "https://echo.example/a2a",
        "capabilities": [{"id": "echo", "name": "Echo", "description": "Returns its input."}],
        "auth_schemes": [{"scheme": "api-key"}],
    }
    doc.update(overrides)
    return AgentCard.model_validate(doc)


def seeded_key(label: str):
    """Reproducible Ed25519 key derived from a label."""
    rng = random.Random(label)
    return signing_key_from_seed(bytes(rng.randrange(256) for _ in range(32)))


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def signer():
    return seeded_key("primary-signer")


@pytest.fixture
def registry(signer) -> TrustRegistry:
    reg = TrustRegistry()
    reg.register(
        RegistryEntry(
            key_id="acme-signing-1",
            public_key=public_key_hex(signer),
            allowed_domains=["echo.example", "*.acme.example"],
        )
    )
    return reg


@pytest.fixture
def signed_card(signer) -> AgentCard:
    return sign_card(make_card(), signer, "acme-signing-1")


# --- a controllable server rig ------------------------------------------------
#
# One host, all builtin skills, every dependency injected: manual clock,
# recording webhook poster, fixed resolver. Guard and config knobs default
# to the hardened posture; tests override per case.


class ManualClock:
    """Time only moves when a test says so."""

    def __init__(self, start: float = 1_700_000_000.0) -> None:
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> float:
        self.now += seconds
        return self.now


RIG_HOST = "unit.example"
RIG_SKILLS = tuple(builtin_handlers())
RIG_RESOURCES = {
    "weekly-roster": "ann\nbob\ncarol",
    "payroll-database": "PAYROLL: ann=91000",
}
# Generous so unrelated tests never trip the limiter; rate-limit tests
# pass their own settings.
RIG_RATE = RateLimitSettings(capacity=1000, refill_per_second=1000.0)

_UNSET = object()


def rig_card(host: str = RIG_HOST, skills=RIG_SKILLS, push: bool = True) -> AgentCard:
    return AgentCard.model_validate(
        {
            "name": "unit-agent",
            "version": "1.0.0",
            "provider": "acme-tools",
            "a2a_endpoint_url": f"https://{host}/a2a",
            "capabilities": [
                {"id": skill, "name": skill, "description": f"Runs {skill}."}
                for skill in skills
            ],
            "auth_schemes": [{"scheme": "api-key"}],
            "supports_push_notifications": push,
        }
    )


def public_resolver(host: str) -> list[str]:
    # Genuinely global unicast (the TEST-NET doc ranges classify as
    # private), so only the allow-list decides. Never actually dialed.
    return ["8.8.8.8"]


@dataclass
class ServerRig:
    server: A2AServer
    clock: ManualClock
    api_key: str
    registry: TrustRegistry
    channel: ChannelIdentity
    api_keys: Optional[ApiKeyStore] = None
    webhook_posts: list = field(default_factory=list)
    _ids: itertools.count = field(default_factory=lambda: itertools.count(1))
    _nonces: itertools.count = field(default_factory=lambda: itertools.count(1))

    def next_nonce(self) -> str:
        return f"rig-nonce-{next(self._nonces):08d}"

    def raw(
        self,
        method: str,
        params: dict,
        *,
        credential=_UNSET,
        nonce: Optional[str] = None,
        issued_at: Optional[float] = None,
        mac: Optional[str] = None,
        request_id=None,
    ) -> bytes:
        security = {
            "nonce": nonce or self.next_nonce(),
            "issued_at": self.clock() if issued_at is None else issued_at,
        }
        if credential is _UNSET:
            credential = self.api_key
        if credential is not None:
            security["credential"] = credential
        if mac is not None:
            security["mac"] = mac
        doc = {
            "jsonrpc": "2.0",
            "id": request_id if request_id is not None else f"req-{next(self._ids)}",
            "method": method,
            "params": params,
            "security": security,
        }
        return canonical_bytes(doc)

    def outcome(self, method: str, params: dict, **kw) -> RpcOutcome:
        channel = kw.pop("channel", self.channel)
        return self.server.handle_request(self.raw(method, params, **kw), channel)

    def call(self, method: str, params: dict, **kw) -> dict:
        return strict_json_loads(self.outcome(method, params, **kw).body)

    def result(self, method: str, params: dict, **kw) -> dict:
        doc = self.call(method, params, **kw)
        assert "error" not in doc, doc
        return doc["result"]

    def error(self, method: str, params: dict, **kw) -> dict:
        doc = self.call(method, params, **kw)
        assert "error" in doc, doc
        return doc["error"]

    def send_text(self, task_id: str, skill_id: str, text: str, **kw) -> dict:
        """tasks/send with a one-line user message; returns the task doc."""
        params = {
            "task_id": task_id,
            "skill_id": skill_id,
            "history": [{"role": "user", "parts": [{"type": "text", "text": text}]}],
        }
        return self.result("tasks/send", params, **kw)["task"]


def build_rig(
    *,
    hardened: bool = True,
    clock: Optional[ManualClock] = None,
    host: str = RIG_HOST,
    skills=RIG_SKILLS,
    push: bool = True,
    guard: Optional[GuardConfig] = None,
    overrides: Optional[dict] = None,
    scopes: Optional[tuple] = None,
    webhook: Optional[WebhookConfig] = None,
    poster=None,
    resolver=None,
    sleeper=None,
    audit=None,
    resources: Optional[dict] = None,
) -> ServerRig:
    clock = clock or ManualClock()
    card_key = seeded_key(f"{host}:card")
    artifact_key = seeded_key(f"{host}:artifacts")
    reg = TrustRegistry()
    reg.register(
        RegistryEntry(
            key_id=f"{host}-card-1",
            public_key=public_key_hex(card_key),
            allowed_domains=[host],
        )
    )
    reg.register(
        RegistryEntry(
            key_id=f"{host}-artifacts-1",
            public_key=public_key_hex(artifact_key),
            allowed_domains=[host],
        )
    )
    api_keys = ApiKeyStore()
    key = api_keys.issue(
        "alice", scopes if scopes is not None else tuple(f"use:{s}" for s in skills)
    )

    if guard is None:
        if hardened:
            guard = GuardConfig(
                auth_mode="api-key",
                rate_limit=RIG_RATE,
                scope_policy={skill: [f"use:{skill}"] for skill in skills},
            )
        else:
            guard = GuardConfig(
                auth_mode="none",
                replay_enabled=False,
                enforce_scopes=False,
                rate_limit=RIG_RATE,
            )
    if webhook is None:
        webhook = WebhookConfig(
            egress_guard_enabled=hardened,
            url_allow_list=["hooks.example"] if hardened else [],
            backoff_base_seconds=0.001,
        )
    config_doc = {
        "card": rig_card(host, skills, push),
        "guard": guard,
        "webhook": webhook,
        "require_secure_channel": hardened,
        "schema_enforced": hardened,
        "sandbox_enabled": hardened,
        "sign_artifacts": hardened,
        "audit_chained": hardened,
    }
    config_doc.update(overrides or {})
    config = ServerConfig.model_validate(config_doc)

    posts: list = []

    def recording_poster(url, body, headers, timeout):
        posts.append((url, body, headers))
        return 200, b"{}"

    server = A2AServer(
        config,
        keys=ServerKeys(
            card_key=card_key,
            card_key_id=f"{host}-card-1",
            artifact_key=artifact_key if config.sign_artifacts else None,
            artifact_key_id=f"{host}-artifacts-1" if config.sign_artifacts else None,
            mac_secret=b"rig-mac-secret",
        ),
        registry=reg,
        api_keys=api_keys,
        audit=audit,
        resources=resources if resources is not None else dict(RIG_RESOURCES),
        clock=clock,
        webhook_poster=poster or recording_poster,
        webhook_sleeper=sleeper or (lambda _s: None),
        webhook_resolver=resolver or public_resolver,
    )
    for skill_id, handler in builtin_handlers().items():
        if skill_id in skills:
            server.register_skill(handler)
    server.self_check()
    rig = ServerRig(
        server=server,
        clock=clock,
        api_key=key,
        registry=reg,
        channel=ChannelIdentity(
            fingerprint=synthetic_fingerprint("rig-client"), secure=True
        ),
        api_keys=api_keys,
        webhook_posts=posts,
    )
    return rig
