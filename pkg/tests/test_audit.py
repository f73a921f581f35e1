"""Audit log chain integrity and tamper localization."""

import json
import threading

import pytest

from a2aguard.audit import GENESIS_PREV_HASH, AuditEntry, AuditLog
from a2aguard.errors import LogSealed


class StepClock:
    def __init__(self, start=1_000_000.0, step=0.001):
        self.now = start
        self.step = step

    def __call__(self):
        self.now += self.step
        return self.now


def build_log(tmp_path, n=20, chained=True, name="audit.ndjson"):
    path = tmp_path / name
    log = AuditLog(path, chained=chained, clock=StepClock())
    for i in range(n):
        log.append(
            "transition" if i % 3 else "auth",
            principal_id=f"client-{i % 4}",
            task_id=f"t-{i}",
            detail={"step": i},
        )
    return log, path


def test_genesis_entry_shape(tmp_path):
    log, path = build_log(tmp_path, n=0)
    genesis = log.entries()[0]
    assert genesis.seq == 0
    assert genesis.prev_hash == GENESIS_PREV_HASH
    assert genesis.detail["event"] == "genesis"
    assert genesis.entry_hash == genesis.digest()


def test_chain_links_every_entry(tmp_path):
    log, _ = build_log(tmp_path, n=10)
    entries = log.entries()
    for prev, entry in zip(entries, entries[1:]):
        assert entry.prev_hash == prev.entry_hash
        assert entry.seq == prev.seq + 1
        assert entry.entry_hash == entry.digest()


def test_verify_intact_in_memory_and_from_file(tmp_path):
    log, path = build_log(tmp_path, n=25)
    assert log.verify() == (True, None)
    assert AuditLog.verify_file(path) == (True, None)


def _lines(path):
    return [line for line in path.read_bytes().split(b"\n") if line.strip()]


def test_single_line_edit_detected_at_that_seq(tmp_path):
    _, path = build_log(tmp_path, n=30)
    lines = _lines(path)
    doc = json.loads(lines[7])
    doc["principal_id"] = "client-mallory"
    lines[7] = json.dumps(doc).encode()
    intact, first_bad = AuditLog.verify_lines(lines)
    assert intact is False
    assert first_bad == 7


def test_single_line_deletion_detected(tmp_path):
    _, path = build_log(tmp_path, n=30)
    lines = _lines(path)
    del lines[7]
    intact, first_bad = AuditLog.verify_lines(lines)
    assert intact is False
    assert first_bad == 7


def test_single_line_insertion_detected(tmp_path):
    _, path = build_log(tmp_path, n=30)
    lines = _lines(path)
    lines.insert(8, lines[7])
    intact, first_bad = AuditLog.verify_lines(lines)
    assert intact is False
    assert first_bad == 8


def test_truncation_from_head_detected(tmp_path):
    _, path = build_log(tmp_path, n=10)
    lines = _lines(path)[1:]
    intact, first_bad = AuditLog.verify_lines(lines)
    assert intact is False
    assert first_bad == 0


def test_garbage_line_detected(tmp_path):
    _, path = build_log(tmp_path, n=5)
    lines = _lines(path)
    lines[3] = b"not json at all"
    assert AuditLog.verify_lines(lines) == (False, 3)


def test_unchained_log_verifies_vacuously_after_tamper(tmp_path):
    # The downgrade the hardened config exists to prevent: a plain log
    # accepts any rewrite.
    _, path = build_log(tmp_path, n=10, chained=False)
    lines = _lines(path)
    doc = json.loads(lines[4])
    doc["principal_id"] = "client-mallory"
    lines[4] = json.dumps(doc).encode()
    assert AuditLog.verify_lines(lines) == (True, None)


def test_seal_blocks_appends_and_rotation_links_files(tmp_path):
    log, path = build_log(tmp_path, n=3)
    successor = log.rotate(tmp_path / "audit-2.ndjson")
    with pytest.raises(LogSealed):
        log.append("auth")
    seal = log.entries()[-1]
    assert seal.detail["event"] == "seal"
    assert seal.detail["next_genesis_hash"] == successor.entries()[0].entry_hash
    assert AuditLog.verify_file(path) == (True, None)
    successor.append("auth", principal_id="client-1")
    assert successor.verify() == (True, None)


def test_concurrent_appends_keep_chain_intact(tmp_path):
    log = AuditLog(tmp_path / "c.ndjson", clock=StepClock())

    def worker(k):
        for i in range(50):
            log.append("auth", principal_id=f"w{k}", detail={"i": i})

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(log.entries()) == 1 + 8 * 50
    assert log.verify() == (True, None)
    assert AuditLog.verify_file(tmp_path / "c.ndjson") == (True, None)


def test_in_memory_log_without_file(tmp_path):
    log = AuditLog(None, clock=StepClock())
    log.append("guard_reject", principal_id="x", detail={"control": "mac"})
    assert log.verify() == (True, None)


def test_entries_between():
    log = AuditLog(None, clock=StepClock())
    for i in range(10):
        log.append("auth", detail={"i": i})
    window = log.entries_between(3, 6)
    assert [e.seq for e in window] == [3, 4, 5, 6]


def test_timestamps_are_monotone_from_clock(tmp_path):
    log, _ = build_log(tmp_path, n=10)
    stamps = [e.timestamp for e in log.entries()]
    assert stamps == sorted(stamps)
    assert len(set(stamps)) == len(stamps)
