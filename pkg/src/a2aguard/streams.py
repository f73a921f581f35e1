"""Server-sent event sessions with bounded buffers and quota control.

Sessions are transport-neutral: the server pushes StreamEvents, a consumer
pulls them (directly in tests and the in-memory transport, via the SSE
frame generator over HTTP). The lag policy guarantees one invariant above
all: critical events — status transitions, artifacts, terminals — are
never dropped; only progress chatter is sacrificed to backpressure.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .canonical import canonical_bytes
from .errors import StreamQuotaExceeded

__all__ = [
    "SseConfig",
    "StreamEvent",
    "frame",
    "KEEPALIVE_FRAME",
    "parse_sse_bytes",
    "SseSession",
    "StreamRegistry",
]

KEEPALIVE_FRAME = b": keepalive\n\n"


class SseConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    max_connections_per_principal: int = Field(default=4, ge=1)
    idle_timeout_seconds: float = Field(default=60.0, gt=0)
    keepalive_interval_seconds: float = Field(default=15.0, gt=0)
    event_buffer_capacity: int = Field(default=256, ge=1)
    lag_policy: Literal["drop-noncritical", "disconnect"] = "drop-noncritical"

    @model_validator(mode="after")
    def _keepalive_beats_idle(self) -> "SseConfig":
        if self.keepalive_interval_seconds >= self.idle_timeout_seconds:
            raise ValueError(
                "keepalive_interval_seconds must be smaller than "
                "idle_timeout_seconds, otherwise idle detection can fire "
                "between keepalives on a healthy connection"
            )
        return self


@dataclass(frozen=True)
class StreamEvent:
    name: str
    payload: dict[str, Any]
    critical: bool = True
    final: bool = False


def frame(event: StreamEvent) -> bytes:
    return (
        b"event: "
        + event.name.encode("ascii")
        + b"\ndata: "
        + canonical_bytes(event.payload)
        + b"\n\n"
    )


def parse_sse_bytes(chunks: Iterator[bytes]) -> Iterator[tuple[str, dict[str, Any]]]:
    """Parse an SSE byte stream into (event_name, payload) pairs, skipping
    comment keepalives."""
    buffer = b""
    for chunk in chunks:
        buffer += chunk
        while b"\n\n" in buffer:
            block, buffer = buffer.split(b"\n\n", 1)
            name = None
            data_lines = []
            for line in block.split(b"\n"):
                if line.startswith(b":"):
                    continue
                if line.startswith(b"event:"):
                    name = line[len(b"event:"):].strip().decode("utf-8")
                elif line.startswith(b"data:"):
                    data_lines.append(line[len(b"data:"):].strip())
            if name and data_lines:
                yield name, json.loads(b"\n".join(data_lines))


class SseSession:
    """One subscriber's bounded event queue.

    Push side: the task runtime. Pull side: exactly one consumer. ``now``
    is always passed in, never read from a clock, so backpressure and
    idle behavior are reproducible in tests.
    """

    def __init__(
        self,
        session_id: str,
        principal_id: str,
        task_id: str,
        config: SseConfig,
        opened_at: float,
        on_close: Optional[Callable[["SseSession"], None]] = None,
    ) -> None:
        self.session_id = session_id
        self.principal_id = principal_id
        self.task_id = task_id
        self.config = config
        self.opened_at = opened_at
        self.dropped_noncritical = 0
        self.close_reason: Optional[str] = None
        self._events: deque[StreamEvent] = deque()
        self._cond = threading.Condition()
        self._closed = False
        self._draining = False  # final event queued; close once drained
        self._last_consumed_at = opened_at
        self._on_close = on_close

    # -- push side -------------------------------------------------------

    def push(self, event: StreamEvent, now: float) -> bool:
        """Queue an event. Returns False when the session is (or just
        became) closed and the event was not queued."""
        # closed_now is tracked separately from callback: _close_locked
        # returns None both when there is no on_close hook and when the
        # session was already closed, so it cannot signal "just closed".
        callback = None
        closed_now = False
        with self._cond:
            if self._closed or self._draining:
                return False
            if now - self._last_consumed_at >= self.config.idle_timeout_seconds:
                callback = self._close_locked("idle-timeout")
                closed_now = True
            else:
                if len(self._events) >= self.config.event_buffer_capacity:
                    if self.config.lag_policy == "disconnect":
                        callback = self._close_locked("lagging")
                        closed_now = True
                    elif not event.critical:
                        # The one sanctioned loss: progress chatter under
                        # backpressure. Criticals below append regardless
                        # of capacity.
                        self.dropped_noncritical += 1
                        return True
                if not closed_now:
                    self._events.append(event)
                    if event.final:
                        self._draining = True
                    self._cond.notify_all()
        if callback is not None:
            callback(self)
        return not closed_now

    # -- pull side -------------------------------------------------------

    def pull(self, now: float, timeout: Optional[float] = 0.0) -> Optional[StreamEvent]:
        """Next event, or None if the session is closed and drained.
        ``timeout`` 0 polls; a positive value blocks up to that long."""
        callback = None
        event: Optional[StreamEvent] = None
        with self._cond:
            self._last_consumed_at = now
            if not self._events and not self._closed and timeout:
                self._cond.wait(timeout)
            if self._events:
                event = self._events.popleft()
                if event.final or (self._draining and not self._events):
                    callback = self._close_locked("terminal-delivered")
            elif self._draining and not self._closed:
                callback = self._close_locked("terminal-delivered")
        if callback is not None:
            callback(self)
        return event

    def drain(self, now: float) -> list[StreamEvent]:
        """Every queued event, closing the session if it was draining."""
        out = []
        while True:
            event = self.pull(now, timeout=0.0)
            if event is None:
                return out
            out.append(event)

    # -- lifecycle --------------------------------------------------------

    def _close_locked(self, reason: str) -> Optional[Callable[["SseSession"], None]]:
        if self._closed:
            return None
        self._closed = True
        self.close_reason = reason
        self._cond.notify_all()
        callback, self._on_close = self._on_close, None
        return callback

    def close(self, reason: str) -> None:
        with self._cond:
            callback = self._close_locked(reason)
        if callback is not None:
            callback(self)

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed

    def idle_deadline(self) -> float:
        with self._cond:
            return self._last_consumed_at + self.config.idle_timeout_seconds

    # -- HTTP adapter ------------------------------------------------------

    def frames(self, clock: Callable[[], float]) -> Iterator[bytes]:
        """Live SSE byte frames: events as they arrive, keepalive comments
        during quiet stretches, ending when the session closes."""
        interval = self.config.keepalive_interval_seconds
        try:
            while True:
                now = clock()
                event = self.pull(now, timeout=interval)
                if event is not None:
                    yield frame(event)
                    continue
                with self._cond:
                    closed_and_drained = self._closed and not self._events
                if closed_and_drained:
                    return
                if clock() - now >= interval * 0.5:
                    yield KEEPALIVE_FRAME
        except GeneratorExit:
            self.close("client-disconnect")
            raise


class StreamRegistry:
    """Per-principal session quota and idle sweeping."""

    def __init__(self, config: SseConfig) -> None:
        self._config = config
        self._lock = threading.Lock()
        self._sessions: dict[str, SseSession] = {}
        self._counter = 0

    def open(
        self,
        principal_id: str,
        task_id: str,
        now: float,
        on_close: Optional[Callable[[SseSession], None]] = None,
    ) -> SseSession:
        with self._lock:
            live = [
                s
                for s in self._sessions.values()
                if s.principal_id == principal_id and not s.closed
            ]
            if len(live) >= self._config.max_connections_per_principal:
                raise StreamQuotaExceeded(
                    f"principal {principal_id!r} already holds "
                    f"{len(live)} open streams",
                    limit=self._config.max_connections_per_principal,
                )
            self._counter += 1
            session_id = f"sse-{self._counter}"

            def _cleanup(session: SseSession, _outer=on_close) -> None:
                with self._lock:
                    self._sessions.pop(session.session_id, None)
                if _outer is not None:
                    _outer(session)

            session = SseSession(
                session_id=session_id,
                principal_id=principal_id,
                task_id=task_id,
                config=self._config,
                opened_at=now,
                on_close=_cleanup,
            )
            self._sessions[session_id] = session
            return session

    def live_count(self, principal_id: Optional[str] = None) -> int:
        with self._lock:
            sessions = list(self._sessions.values())
        return sum(
            1
            for s in sessions
            if not s.closed and (principal_id is None or s.principal_id == principal_id)
        )

    def sweep(self, now: float) -> int:
        """Close sessions whose consumer has gone quiet. Returns how many."""
        with self._lock:
            sessions = list(self._sessions.values())
        closed = 0
        for session in sessions:
            if not session.closed and now >= session.idle_deadline():
                session.close("idle-timeout")
                closed += 1
        return closed
