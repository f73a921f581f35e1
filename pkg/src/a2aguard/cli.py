"""Command line interface: a thin shell over the library.

Each subcommand maps directly onto library calls. Card tooling (lint,
sign, verify, scan), key material helpers, a demo HTTP service, a
client for live agents, and the adversarial attack matrix.
"""

from __future__ import annotations

import hashlib
import json
import secrets
import sys
from pathlib import Path
from typing import Any, Optional

import click

from . import __version__
from .audit import AuditLog
from .canonical import canonical_bytes
from .validation import strict_json_loads
from .cards import (
    RegistryEntry,
    ResolvePolicy,
    RuleSet,
    TrustRegistry,
    public_key_hex,
    scan_card,
    sign_card,
    signing_key_from_seed,
    verify_card,
)
from .client import A2AClient, ClientConfig, user_message
from .errors import A2AError, MalformedJson, VerifyError
from .guards import ApiKeyStore, GuardConfig
from .model import (
    AgentCard,
    DEFAULT_LIMITS,
    SkillDescriptor,
    AuthSchemeDescriptor,
    StatusUpdateEvent,
    TaskStatus,
    ValidationLimits,
    wire,
)
from .runtime import A2AServer, ServerConfig, ServerKeys
from .skills import builtin_handlers
from .transport import HttpClientTransport

_PATH = click.Path(exists=True, dir_okay=False, path_type=Path)
_OUT_PATH = click.Path(dir_okay=False, path_type=Path)


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    raise SystemExit(1)


def _load_card(path: Path, limits: ValidationLimits = DEFAULT_LIMITS) -> AgentCard:
    try:
        doc = strict_json_loads(path.read_bytes())
    except MalformedJson as exc:
        _fail(f"{path}: not parseable JSON: {exc.message}")
    try:
        return AgentCard.model_validate(doc, context={"limits": limits})
    except Exception as exc:  # pydantic.ValidationError
        errors = getattr(exc, "errors", None)
        if callable(errors):
            first = errors()[0]
            loc = "$" + "".join(
                f"[{seg}]" if isinstance(seg, int) else f".{seg}"
                for seg in first["loc"]
            )
            _fail(f"{path}: {loc}: {first['msg']}")
        _fail(f"{path}: {exc}")
    raise AssertionError("unreachable")


@click.group(
    context_settings={
        "auto_envvar_prefix": "A2A",
        "help_option_names": ["-h", "--help"],
    }
)
@click.version_option(version=__version__, prog_name="a2aguard")
def main() -> None:
    """Agent-to-agent task exchange with verifiable discovery and guarded RPC."""


# --- card tooling -------------------------------------------------------------


@main.group()
def card() -> None:
    """Lint, sign, verify, and scan agent cards."""


@card.command("lint")
@click.argument("card_file", type=_PATH)
@click.option(
    "--allow-http", is_flag=True, help="Accept http:// endpoint URLs (local demos)."
)
def card_lint(card_file: Path, allow_http: bool) -> None:
    """Validate card structure; nonzero exit names the offending field."""
    limits = (
        ValidationLimits(allowed_endpoint_schemes=("https", "http"))
        if allow_http
        else DEFAULT_LIMITS
    )
    loaded = _load_card(card_file, limits)
    state = "signed" if loaded.signature else "unsigned"
    click.echo(
        f"ok: {loaded.name} {loaded.version}, {len(loaded.capabilities)} skills, {state}"
    )


@card.command("sign")
@click.argument("card_file", type=_PATH)
@click.option("--key-seed", required=True, help="Ed25519 seed, 64 hex chars.")
@click.option("--key-id", required=True, help="Registry key id to cite.")
@click.option("--out", type=_OUT_PATH, default=None, help="Default: overwrite input.")
def card_sign(card_file: Path, key_seed: str, key_id: str, out: Optional[Path]) -> None:
    """Attach a detached signature covering every card field."""
    loaded = _load_card(card_file)
    try:
        key = signing_key_from_seed(bytes.fromhex(key_seed))
    except ValueError:
        _fail("--key-seed must be 64 hex chars")
        return
    try:
        signed = sign_card(loaded, key, key_id)
    except A2AError as exc:
        _fail(str(exc))
        return
    target = out or card_file
    target.write_bytes(canonical_bytes(wire(signed)) + b"\n")
    click.echo(f"signed with {key_id}: {target}")


@card.command("verify")
@click.argument("card_file", type=_PATH)
@click.option("--registry", "registry_file", type=_PATH, required=True)
def card_verify(card_file: Path, registry_file: Path) -> None:
    """Check the card signature against a trust registry."""
    registry = TrustRegistry.load(registry_file)
    loaded = _load_card(card_file)
    try:
        verify_card(loaded, registry)
    except VerifyError as exc:
        _fail(f"{type(exc).__name__}: {exc}")
        return
    assert loaded.signature is not None
    click.echo(f"ok: valid signature by {loaded.signature.key_id}")


@card.command("scan")
@click.argument("card_file", type=_PATH)
@click.option("--rules", "rules_file", type=_PATH, default=None)
@click.option("--json", "as_json", is_flag=True, help="Print the full report as JSON.")
def card_scan(card_file: Path, rules_file: Optional[Path], as_json: bool) -> None:
    """Scan card text for injection patterns; nonzero exit on a blocked verdict."""
    rules = RuleSet.load(rules_file) if rules_file else None
    report = scan_card(_load_card(card_file), rules)
    if as_json:
        click.echo(json.dumps(wire(report), indent=2, sort_keys=True))
    else:
        click.echo(f"verdict: {report.verdict} ({report.scanned_fields} fields scanned)")
        for finding in report.findings:
            click.echo(
                f"  [{finding.severity}] {finding.path}: {finding.rule_id}: "
                f"{finding.excerpt!r}"
            )
    if report.verdict == "blocked":
        raise SystemExit(1)


# --- key material ---------------------------------------------------------------


@main.group()
def key() -> None:
    """Signing seeds and trust registry entries."""


@key.command("generate")
@click.option("--key-id", required=True)
@click.option("--domains", required=True, help="Comma-separated hosts the key signs for.")
@click.option("--trust-score", default=100, type=click.IntRange(0, 100), show_default=True)
@click.option("--seed", default=None, help="64 hex chars; omit for a random seed.")
def key_generate(key_id: str, domains: str, trust_score: int, seed: Optional[str]) -> None:
    """Print a signing seed plus the registry entry for its public key."""
    raw = bytes.fromhex(seed) if seed else secrets.token_bytes(32)
    if len(raw) != 32:
        _fail("--seed must be 64 hex chars")
    entry = RegistryEntry(
        key_id=key_id,
        public_key=public_key_hex(signing_key_from_seed(raw)),
        allowed_domains=[d.strip() for d in domains.split(",") if d.strip()],
        trust_score=trust_score,
    )
    click.echo(
        json.dumps(
            {"seed": raw.hex(), "entry": entry.model_dump(mode="json")},
            indent=2,
            sort_keys=True,
        )
    )


@key.command("register")
@click.argument("registry_file", type=_OUT_PATH)
@click.option("--entry", "entry_json", required=True, help="RegistryEntry JSON.")
def key_register(registry_file: Path, entry_json: str) -> None:
    """Add or replace an entry in a registry file (created if missing)."""
    registry = (
        TrustRegistry.load(registry_file) if registry_file.exists() else TrustRegistry()
    )
    try:
        entry = RegistryEntry.model_validate(json.loads(entry_json))
    except Exception as exc:
        _fail(f"--entry is not a valid registry entry: {exc}")
        return
    registry.register(entry)
    registry.save(registry_file)
    click.echo(f"registered {entry.key_id}: {registry_file} holds {len(registry.entries())} keys")


# --- demo service ----------------------------------------------------------------


def _demo_server(
    agent_host: str,
    advertised_url: str,
    hardened: bool,
    seed_material: bytes,
    state_dir: Path,
) -> tuple[A2AServer, str]:
    """A single-host deployment built from one seed. Returns the server
    and the operator API key (the only plaintext copy)."""

    def derive(label: str) -> bytes:
        return hashlib.sha256(seed_material + b":" + label.encode()).digest()

    limits = ValidationLimits(allowed_endpoint_schemes=("https", "http"))
    handlers = builtin_handlers()
    doc: dict[str, Any] = {
        "name": agent_host.split(".")[0].title() or "Demo",
        "version": __version__,
        "provider": "a2aguard demo",
        "a2a_endpoint_url": advertised_url,
        "capabilities": [
            wire(SkillDescriptor(id=skill, name=skill, description=f"Runs {skill}."))
            for skill in sorted(handlers)
        ],
        "auth_schemes": [wire(AuthSchemeDescriptor(scheme="api-key"))],
        "supports_push_notifications": True,
    }
    card_model = AgentCard.model_validate(doc, context={"limits": limits})

    card_key = signing_key_from_seed(derive("card-key"))
    artifact_key = signing_key_from_seed(derive("artifact-key"))
    registry = TrustRegistry(
        [
            RegistryEntry(
                key_id=f"{agent_host}-card-1",
                public_key=public_key_hex(card_key),
                allowed_domains=[agent_host],
            ),
            RegistryEntry(
                key_id=f"{agent_host}-artifacts-1",
                public_key=public_key_hex(artifact_key),
                allowed_domains=[agent_host],
            ),
        ]
    )
    api_keys = ApiKeyStore()
    scopes = tuple(f"use:{skill}" for skill in handlers)
    operator_key = api_keys.issue("operator", scopes)

    if hardened:
        guard = GuardConfig(
            auth_mode="api-key",
            replay_enabled=True,
            mac_required=False,
            scope_policy={skill: [f"use:{skill}"] for skill in handlers},
            enforce_scopes=True,
        )
    else:
        guard = GuardConfig(
            auth_mode="none",
            replay_enabled=False,
            mac_required=False,
            scope_policy={},
            enforce_scopes=False,
        )
    config = ServerConfig(
        card=card_model,
        limits=limits,
        guard=guard,
        require_secure_channel=hardened,
        schema_enforced=hardened,
        sandbox_enabled=hardened,
        sign_artifacts=hardened,
        audit_chained=hardened,
    )
    keys = ServerKeys(
        card_key=card_key,
        card_key_id=f"{agent_host}-card-1",
        artifact_key=artifact_key if hardened else None,
        artifact_key_id=f"{agent_host}-artifacts-1" if hardened else None,
    )
    state_dir.mkdir(parents=True, exist_ok=True)
    audit = AuditLog(state_dir / "audit.log", chained=hardened)
    server = A2AServer(
        config,
        keys=keys,
        registry=registry,
        api_keys=api_keys,
        audit=audit,
        resources={
            "weekly-roster": "ann\nbob\ncarol\ndrew",
            "payroll-database": "PAYROLL: demo numbers, sandboxed away",
        },
    )
    for handler in handlers.values():
        server.register_skill(handler)
    server.self_check()
    registry.save(state_dir / "registry.json")
    (state_dir / "card.json").write_bytes(server.signed_card_bytes() + b"\n")
    return server, operator_key


@main.command("serve")
@click.option("--bind", default="127.0.0.1", show_default=True, help="Interface to bind.")
@click.option("--port", default=8000, show_default=True, type=int)
@click.option(
    "--agent-host",
    default="localhost",
    show_default=True,
    help="Host name the card advertises.",
)
@click.option(
    "--advertised-url",
    default=None,
    help="Endpoint URL on the card. Default: http://AGENT_HOST:PORT/a2a",
)
@click.option(
    "--state-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("a2aguard-state"),
    show_default=True,
    help="Where the signed card, registry, and audit log land.",
)
@click.option(
    "--insecure-baseline",
    is_flag=True,
    help="Run with every security control disabled. Demo use only.",
)
@click.option("--seed", default=None, help="Hex seed for deterministic key material.")
def serve(
    bind: str,
    port: int,
    agent_host: str,
    advertised_url: Optional[str],
    state_dir: Path,
    insecure_baseline: bool,
    seed: Optional[str],
) -> None:
    """Run a demo agent over HTTP.

    The process serves plain HTTP and treats every connection as if TLS
    were terminated upstream; put a real terminator in front for
    anything beyond local experiments.
    """
    import uvicorn

    from .service import create_app

    url = advertised_url or f"http://{agent_host}:{port}/a2a"
    material = bytes.fromhex(seed) if seed else secrets.token_bytes(32)
    server, operator_key = _demo_server(
        agent_host, url, not insecure_baseline, material, state_dir
    )
    app = create_app(server, assume_secure=True)
    stance = "insecure-baseline" if insecure_baseline else "hardened"
    click.echo(f"stance: {stance}")
    click.echo(f"card:   {url.rsplit('/a2a', 1)[0]}/.well-known/agent.json")
    click.echo(f"state:  {state_dir}/ (card.json, registry.json, audit.log)")
    click.echo(f"api key (not stored): {operator_key}")
    uvicorn.run(app, host=bind, port=port, log_level="info")


# --- client ----------------------------------------------------------------------


def _parse_pins(pins: tuple[str, ...]) -> dict[str, str]:
    parsed: dict[str, str] = {}
    for item in pins:
        host, sep, fingerprint = item.partition("=")
        if not sep or not host or not fingerprint:
            _fail(f"--pin wants HOST=FINGERPRINT, got {item!r}")
        parsed[host] = fingerprint
    return parsed


def _build_client(
    registry_file: Optional[Path],
    pins: tuple[str, ...],
    api_key: Optional[str],
    bearer: Optional[str],
    insecure: bool,
    plain_http: bool,
) -> A2AClient:
    registry = TrustRegistry.load(registry_file) if registry_file else None
    limits = (
        ValidationLimits(allowed_endpoint_schemes=("https", "http"))
        if plain_http
        else DEFAULT_LIMITS
    )
    policy = ResolvePolicy(
        require_signature=not insecure,
        require_secure_channel=not insecure and not plain_http,
        pins=_parse_pins(pins),
    )
    config = ClientConfig(
        registry=registry,
        policy=policy,
        limits=limits,
        api_key=api_key,
        bearer_token=bearer,
        verify_artifacts=not insecure and registry is not None,
        scan_cards=not insecure,
        bind_channel=not insecure,
    )
    transport = HttpClientTransport(card_scheme="http" if plain_http else "https")
    return A2AClient(transport, config)


def _client_options(fn):
    options = [
        click.option("--registry", "registry_file", type=_PATH, default=None,
                     help="Trust registry for card and artifact verification."),
        click.option("--pin", "pins", multiple=True,
                     help="HOST=FINGERPRINT channel pin; repeatable."),
        click.option("--api-key", default=None),
        click.option("--bearer", default=None, help="Bearer token credential."),
        click.option("--insecure", is_flag=True,
                     help="Disable signature, scan, channel, and artifact checks."),
        click.option("--plain-http", is_flag=True,
                     help="Fetch cards over http:// and accept http endpoints."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@main.group()
def client() -> None:
    """Talk to a live agent."""


def _print_task(task) -> None:
    click.echo(f"task {task.task_id}: {task.status.value} (skill {task.skill_id})")
    for message in task.history:
        for part in message.parts:
            text = getattr(part, "text", None)
            if text is not None:
                click.echo(f"  [{message.role}] {text}")
    for artifact in task.artifacts:
        click.echo(f"  artifact {artifact.artifact_id}:")
        for part in artifact.parts:
            if getattr(part, "text", None) is not None:
                click.echo(f"    text: {part.text}")
            elif getattr(part, "payload", None) is not None:
                click.echo(f"    data: {json.dumps(part.payload, sort_keys=True)}")


def _run_client(fn) -> None:
    try:
        fn()
    except A2AError as exc:
        _fail(f"{type(exc).__name__}: {exc}")


@client.command("discover")
@click.argument("host")
@_client_options
def client_discover(host: str, **kwargs: Any) -> None:
    """Resolve, verify, and scan HOST's agent card."""

    def go() -> None:
        agent = _build_client(**kwargs).discover(host)
        click.echo(f"{agent.card.name} {agent.card.version} at {agent.card.a2a_endpoint_url}")
        click.echo(f"channel fingerprint: {agent.channel_fingerprint}")
        click.echo(f"auth scheme: {agent.auth_scheme or 'none advertised'}")
        click.echo(f"scan verdict: {agent.scan.verdict if agent.scan else 'not scanned'}")
        for skill in agent.card.capabilities:
            click.echo(f"  skill {skill.id}: {skill.description}")

    _run_client(go)


@client.command("send")
@click.argument("host")
@click.argument("text")
@click.option("--task-id", required=True)
@click.option("--skill", "skill_id", required=True)
@_client_options
def client_send(host: str, text: str, task_id: str, skill_id: str, **kwargs: Any) -> None:
    """Send one text message as a task (or as input to a paused task)."""

    def go() -> None:
        a2a = _build_client(**kwargs)
        agent = a2a.discover(host)
        _print_task(a2a.send_task(agent, task_id, skill_id, [user_message(text)]))

    _run_client(go)


@client.command("get")
@click.argument("host")
@click.argument("task_id")
@_client_options
def client_get(host: str, task_id: str, **kwargs: Any) -> None:
    """Fetch a task you own."""

    def go() -> None:
        a2a = _build_client(**kwargs)
        _print_task(a2a.get_task(a2a.discover(host), task_id))

    _run_client(go)


@client.command("cancel")
@click.argument("host")
@click.argument("task_id")
@_client_options
def client_cancel(host: str, task_id: str, **kwargs: Any) -> None:
    """Cancel a non-terminal task you own."""

    def go() -> None:
        a2a = _build_client(**kwargs)
        _print_task(a2a.cancel_task(a2a.discover(host), task_id))

    _run_client(go)


@client.command("subscribe")
@click.argument("host")
@click.argument("text")
@click.option("--task-id", required=True)
@click.option("--skill", "skill_id", required=True)
@click.option("--reply", default=None,
              help="Answer to give if the task pauses for input.")
@_client_options
def client_subscribe(
    host: str,
    text: str,
    task_id: str,
    skill_id: str,
    reply: Optional[str],
    **kwargs: Any,
) -> None:
    """Stream task events; optionally answer one input request."""

    def go() -> None:
        a2a = _build_client(**kwargs)
        agent = a2a.discover(host)
        pending_reply = reply
        for event in a2a.subscribe_task(agent, task_id, skill_id, [user_message(text)]):
            click.echo(f"{event.event}: {json.dumps(wire(event), sort_keys=True)}")
            if (
                isinstance(event, StatusUpdateEvent)
                and event.status == TaskStatus.INPUT_REQUIRED
                and pending_reply is not None
            ):
                a2a.send_task(agent, task_id, skill_id, [user_message(pending_reply)])
                pending_reply = None

    _run_client(go)


# --- adversarial matrix ------------------------------------------------------------


@main.command("attack")
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--out", type=_OUT_PATH, default=None,
              help="Write the canonical JSON report here.")
@click.option("--json", "as_json", is_flag=True,
              help="Print the JSON report instead of the table.")
def attack(seed: int, out: Optional[Path], as_json: bool) -> None:
    """Run every threat against both stances.

    Exits nonzero unless every attack succeeds against the baseline
    configuration and every attack is blocked, by a named control, in
    the hardened one.
    """
    from .harness import render_json, render_text, report_ok, run_matrix

    report = run_matrix(seed)
    payload = render_json(report)
    if out is not None:
        out.write_bytes(payload)
    if as_json:
        sys.stdout.write(payload.decode("utf-8"))
    else:
        sys.stdout.write(render_text(report))
    if not report_ok(report):
        _fail("attack matrix does not match the expected outcome pattern")


if __name__ == "__main__":
    main()
