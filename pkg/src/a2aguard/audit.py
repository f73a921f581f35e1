"""Hash-chained, append-only audit log.

Entries are NDJSON lines whose ``entry_hash`` covers the canonical entry
(minus the hash itself) and whose ``prev_hash`` names the previous line's
hash, so any single edit, deletion, or insertion breaks the chain at a
verifiable position. The log is the only durable record the harness
accepts as evidence that a control fired.
"""

from __future__ import annotations

import threading
import time
from pathlib import Path
from typing import Any, Callable, Iterable, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .canonical import canonical_bytes, sha256_hex
from .errors import LogSealed, MalformedJson
from .validation import strict_json_loads

__all__ = ["EVENT_KINDS", "GENESIS_PREV_HASH", "AuditEntry", "AuditLog"]

EVENT_KINDS = ("auth", "transition", "guard_reject", "artifact", "admin")
GENESIS_PREV_HASH = "0" * 64


class AuditEntry(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seq: int = Field(ge=0)
    timestamp: float = Field(ge=0)
    event_kind: Literal["auth", "transition", "guard_reject", "artifact", "admin"]
    principal_id: str = ""
    task_id: Optional[str] = None
    detail: dict[str, Any] = Field(default_factory=dict)
    # Empty strings mean the log was written with chaining disabled.
    prev_hash: str = Field(pattern=r"^([0-9a-f]{64})?$")
    entry_hash: str = Field(pattern=r"^([0-9a-f]{64})?$")

    def digest(self) -> str:
        doc = self.model_dump(mode="json", exclude_none=True)
        doc.pop("entry_hash", None)
        return sha256_hex(canonical_bytes(doc))

    def line(self) -> bytes:
        return canonical_bytes(self.model_dump(mode="json", exclude_none=True)) + b"\n"


class AuditLog:
    """Append-only log with an in-memory mirror and optional file backing.

    ``chained=False`` produces a plain log whose verification is vacuous;
    it exists so the harness can demonstrate what its absence costs.
    """

    def __init__(
        self,
        path: Optional[Path] = None,
        *,
        chained: bool = True,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self._lock = threading.Lock()
        self._path = path
        self._chained = chained
        self._clock = clock
        self._sealed = False
        self._entries: list[AuditEntry] = []
        self._fh = path.open("a", encoding="utf-8") if path else None
        self._append_locked(
            event_kind="admin", detail={"event": "genesis", "chained": chained}
        )

    # -- writing ------------------------------------------------------------

    def _append_locked(
        self,
        event_kind: str,
        principal_id: str = "",
        task_id: Optional[str] = None,
        detail: Optional[dict[str, Any]] = None,
        now: Optional[float] = None,
    ) -> AuditEntry:
        seq = len(self._entries)
        if self._chained:
            prev = self._entries[-1].entry_hash if self._entries else GENESIS_PREV_HASH
        else:
            prev = ""
        entry = AuditEntry(
            seq=seq,
            timestamp=self._clock() if now is None else now,
            event_kind=event_kind,  # type: ignore[arg-type]
            principal_id=principal_id,
            task_id=task_id,
            detail=detail or {},
            prev_hash=prev,
            entry_hash="",
        )
        if self._chained:
            entry = entry.model_copy(update={"entry_hash": entry.digest()})
        self._entries.append(entry)
        if self._fh is not None:
            self._fh.write(entry.line().decode("utf-8"))
            self._fh.flush()
        return entry

    def append(
        self,
        event_kind: str,
        *,
        principal_id: str = "",
        task_id: Optional[str] = None,
        detail: Optional[dict[str, Any]] = None,
        now: Optional[float] = None,
    ) -> AuditEntry:
        with self._lock:
            if self._sealed:
                raise LogSealed("audit log is sealed; rotate produced a successor")
            return self._append_locked(event_kind, principal_id, task_id, detail, now)

    def seal(self, next_genesis_hash: Optional[str] = None) -> AuditEntry:
        """Terminal entry; after this the log refuses appends."""
        with self._lock:
            if self._sealed:
                raise LogSealed("audit log is already sealed")
            detail: dict[str, Any] = {"event": "seal"}
            if next_genesis_hash:
                detail["next_genesis_hash"] = next_genesis_hash
            entry = self._append_locked(event_kind="admin", detail=detail)
            self._sealed = True
            if self._fh is not None:
                self._fh.close()
                self._fh = None
            return entry

    def rotate(self, new_path: Optional[Path] = None) -> "AuditLog":
        """Start a successor log and seal this one with a pointer to the
        successor's genesis hash, so verification can walk across files."""
        successor = AuditLog(new_path, chained=self._chained, clock=self._clock)
        self.seal(next_genesis_hash=successor.entries()[0].entry_hash or None)
        return successor

    # -- reading ------------------------------------------------------------

    def entries(self) -> tuple[AuditEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def tail_seq(self) -> int:
        with self._lock:
            return len(self._entries) - 1

    def entries_between(self, first_seq: int, last_seq: int) -> tuple[AuditEntry, ...]:
        with self._lock:
            return tuple(
                e for e in self._entries if first_seq <= e.seq <= last_seq
            )

    # -- verification --------------------------------------------------------

    @staticmethod
    def verify_entries(
        entries: Iterable[AuditEntry],
    ) -> tuple[bool, Optional[int]]:
        """(True, None) if the chain is intact, else (False, first_bad_seq).

        A log written without chaining (hash fields empty) verifies
        vacuously: there is nothing to check, which is exactly the
        weakness the chained mode exists to close.
        """
        prev_hash = GENESIS_PREV_HASH
        checked_any = False
        for index, entry in enumerate(entries):
            checked_any = True
            if entry.seq != index:
                return False, index
            if entry.prev_hash == "" and entry.entry_hash == "":
                prev_hash = ""
                continue
            if entry.prev_hash != prev_hash:
                return False, index
            if entry.digest() != entry.entry_hash:
                return False, index
            prev_hash = entry.entry_hash
        if not checked_any:
            return False, 0
        return True, None

    @staticmethod
    def verify_lines(lines: Iterable[bytes]) -> tuple[bool, Optional[int]]:
        entries: list[AuditEntry] = []
        for index, line in enumerate(lines):
            try:
                entries.append(AuditEntry.model_validate(strict_json_loads(line)))
            except (MalformedJson, ValidationError):
                return False, index
        return AuditLog.verify_entries(entries)

    @classmethod
    def verify_file(cls, path: Path) -> tuple[bool, Optional[int]]:
        raw = path.read_bytes()
        lines = [line for line in raw.split(b"\n") if line.strip()]
        return cls.verify_lines(lines)

    def verify(self) -> tuple[bool, Optional[int]]:
        return self.verify_entries(self.entries())
