"""Push notification delivery: egress-guarded URLs, signed bodies,
bounded retries.

The URL guard runs twice per registration — once when the client
registers the webhook and again before every delivery — because DNS
answers change between those moments. All resolved addresses must be
public unicast; one internal record poisons the whole name.
"""

from __future__ import annotations

import hashlib
import hmac
import ipaddress
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional
from urllib.parse import urlsplit

import httpx
from pydantic import BaseModel, ConfigDict, Field

from .canonical import canonical_bytes
from .cards import host_matches
from .errors import SsrfBlocked

__all__ = [
    "WebhookConfig",
    "WebhookRegistration",
    "DeliveryAttempt",
    "DeliveryRecord",
    "system_resolver",
    "validate_webhook_url",
    "sign_delivery",
    "SIGNATURE_HEADER",
    "TIMESTAMP_HEADER",
    "WebhookDispatcher",
]

SIGNATURE_HEADER = "X-A2A-Signature"
TIMESTAMP_HEADER = "X-A2A-Timestamp"


class WebhookConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # Off means any URL is accepted and dispatched verbatim. Exists so an
    # unhardened stance can demonstrate what the guard prevents.
    egress_guard_enabled: bool = True
    # Empty allow-list refuses every registration: push notifications are
    # opt-in per destination host.
    url_allow_list: list[str] = Field(default_factory=list)
    allowed_schemes: tuple[str, ...] = ("https",)
    max_retries: int = Field(default=5, ge=1)
    backoff_base_seconds: float = Field(default=1.0, gt=0)
    request_timeout_seconds: float = Field(default=10.0, gt=0)


@dataclass(frozen=True)
class WebhookRegistration:
    task_id: str
    url: str
    secret: bytes
    principal_id: str


def system_resolver(host: str) -> list[str]:
    """All addresses a name currently resolves to."""
    try:
        records = socket.getaddrinfo(host, None, proto=socket.IPPROTO_TCP)
    except socket.gaierror as exc:
        raise SsrfBlocked(f"webhook host {host!r} does not resolve: {exc}") from None
    return sorted({record[4][0] for record in records})


def _decimal_or_hex_ip(host: str) -> Optional[str]:
    """Reject the classic dotted-quad bypasses: a host that is a bare
    integer ("2130706433") or hex literal ("0x7f000001") is an IP in
    disguise; normalize it so the address checks see through it."""
    try:
        value = int(host, 0)
    except ValueError:
        return None
    if 0 <= value <= 0xFFFFFFFF:
        return str(ipaddress.ip_address(value))
    return None


def _address_problem(ip: ipaddress.IPv4Address | ipaddress.IPv6Address) -> Optional[str]:
    # Most specific class first: is_private is a superset that would
    # otherwise swallow the labels for 0.0.0.0 and 240/4.
    if ip.is_unspecified:
        return "unspecified address"
    if ip.is_loopback:
        return "loopback address"
    if ip.is_link_local:
        return "link-local address"
    if ip.is_multicast:
        return "multicast address"
    if ip.is_reserved:
        return "reserved address"
    if ip.is_private:
        return "private address"
    return None


def validate_webhook_url(
    url: str,
    config: WebhookConfig,
    resolver: Callable[[str], list[str]] = system_resolver,
) -> None:
    """Raises SsrfBlocked unless the URL is allow-listed, uses an allowed
    scheme, and every address it resolves to is public unicast."""
    if not config.egress_guard_enabled:
        return
    parts = urlsplit(url)
    if parts.scheme not in config.allowed_schemes:
        raise SsrfBlocked(
            f"scheme {parts.scheme!r} not allowed for webhooks",
            reason="scheme",
            url=url,
        )
    host = parts.hostname
    if not host:
        raise SsrfBlocked("webhook URL has no host", reason="no-host", url=url)
    if parts.username or parts.password:
        raise SsrfBlocked(
            "credentials embedded in webhook URL", reason="userinfo", url=url
        )
    if not config.url_allow_list or not host_matches(host, config.url_allow_list):
        raise SsrfBlocked(
            f"host {host!r} is not on the webhook allow-list",
            reason="allow-list",
            url=url,
        )

    masked = _decimal_or_hex_ip(host)
    candidates: list[str]
    try:
        ipaddress.ip_address(masked or host)
        candidates = [masked or host]
    except ValueError:
        candidates = resolver(host)
    for address in candidates:
        try:
            ip = ipaddress.ip_address(address)
        except ValueError:
            raise SsrfBlocked(
                f"resolver returned a non-address {address!r}",
                reason="resolver",
                url=url,
            ) from None
        problem = _address_problem(ip)
        if problem is not None:
            raise SsrfBlocked(
                f"host {host!r} resolves to {address} ({problem})",
                reason=problem,
                url=url,
            )


def sign_delivery(body: bytes, timestamp: str, secret: bytes) -> str:
    """HMAC over "<timestamp>.<body>" so the freshness header is covered
    by the signature and cannot be refreshed on a replay."""
    return hmac.new(
        secret, timestamp.encode("ascii") + b"." + body, hashlib.sha256
    ).hexdigest()


@dataclass(frozen=True)
class DeliveryAttempt:
    at: float
    ok: bool
    status: Optional[int] = None
    error: Optional[str] = None


@dataclass
class DeliveryRecord:
    url: str
    task_id: str
    delivered: bool
    attempts: list[DeliveryAttempt] = field(default_factory=list)
    # Backoff actually slept between attempts, for observability.
    delays: list[float] = field(default_factory=list)


def _httpx_poster(
    url: str, body: bytes, headers: dict[str, str], timeout: float
) -> tuple[int, bytes]:
    response = httpx.post(url, content=body, headers=headers, timeout=timeout)
    return response.status_code, response.content


class WebhookDispatcher:
    """Delivers one signed JSON body per event with exponential backoff:
    base * 2^(n-1) seconds after the n-th failed attempt."""

    def __init__(
        self,
        config: WebhookConfig,
        *,
        poster: Optional[Callable[[str, bytes, dict[str, str], float], tuple[int, bytes]]] = None,
        sleeper: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.time,
        resolver: Callable[[str], list[str]] = system_resolver,
        audit=None,
    ) -> None:
        self.config = config
        self._poster = poster or _httpx_poster
        self._sleeper = sleeper
        self._clock = clock
        self._resolver = resolver
        self._audit = audit
        self._threads: list[threading.Thread] = []
        self._lock = threading.Lock()

    def dispatch(self, registration: WebhookRegistration, payload: dict) -> DeliveryRecord:
        record = DeliveryRecord(
            url=registration.url, task_id=registration.task_id, delivered=False
        )
        try:
            validate_webhook_url(registration.url, self.config, self._resolver)
        except SsrfBlocked as exc:
            record.attempts.append(
                DeliveryAttempt(at=self._clock(), ok=False, error=exc.message)
            )
            self._audit_delivery(registration, record, blocked=True)
            return record

        body = canonical_bytes(payload)
        for attempt_number in range(1, self.config.max_retries + 1):
            now = self._clock()
            timestamp = repr(now)
            headers = {
                "Content-Type": "application/json",
                TIMESTAMP_HEADER: timestamp,
                SIGNATURE_HEADER: sign_delivery(body, timestamp, registration.secret),
            }
            try:
                status, _ = self._poster(
                    registration.url, body, headers, self.config.request_timeout_seconds
                )
                ok = 200 <= status < 300
                record.attempts.append(DeliveryAttempt(at=now, ok=ok, status=status))
            except Exception as exc:
                record.attempts.append(
                    DeliveryAttempt(at=now, ok=False, error=str(exc)[:200])
                )
                ok = False
            if ok:
                record.delivered = True
                break
            if attempt_number < self.config.max_retries:
                delay = self.config.backoff_base_seconds * (2 ** (attempt_number - 1))
                record.delays.append(delay)
                self._sleeper(delay)
        self._audit_delivery(registration, record, blocked=False)
        return record

    def dispatch_async(
        self, registration: WebhookRegistration, payload: dict
    ) -> threading.Thread:
        thread = threading.Thread(
            target=self.dispatch, args=(registration, payload), daemon=True
        )
        with self._lock:
            self._threads = [t for t in self._threads if t.is_alive()]
            self._threads.append(thread)
        thread.start()
        return thread

    def drain(self, timeout: float = 30.0) -> None:
        """Wait for in-flight deliveries; tests and shutdown call this."""
        with self._lock:
            threads = list(self._threads)
        for thread in threads:
            thread.join(timeout)

    def _audit_delivery(
        self, registration: WebhookRegistration, record: DeliveryRecord, blocked: bool
    ) -> None:
        if self._audit is None:
            return
        if blocked:
            self._audit.append(
                "guard_reject",
                principal_id=registration.principal_id,
                task_id=registration.task_id,
                detail={
                    "control": "egress-guard",
                    "url": registration.url,
                    "error": record.attempts[-1].error,
                },
            )
        else:
            self._audit.append(
                "admin",
                principal_id=registration.principal_id,
                task_id=registration.task_id,
                detail={
                    "event": "webhook-delivery",
                    "url": registration.url,
                    "delivered": record.delivered,
                    "attempts": len(record.attempts),
                },
            )
