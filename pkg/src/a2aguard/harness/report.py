"""Attack matrix: every scenario, run against both stances.

The report is a deterministic function of the seed. Each scenario gets
a fresh pair of worlds, so runs never contaminate each other and the
serialized output is byte-identical across invocations.
"""

from __future__ import annotations

from typing import Any

from ..canonical import canonical_bytes
from .scenarios import SCENARIOS, Outcome, Scenario
from .world import build_world

__all__ = ["run_scenario", "run_matrix", "report_ok", "render_json", "render_text"]

REPORT_VERSION = 1


def run_scenario(scenario: Scenario, hardened: bool, seed: int = 7) -> Outcome:
    world = build_world(hardened, seed=seed)
    try:
        return scenario.run(world)
    finally:
        for server in world.servers.values():
            server.drain_workers()


def run_matrix(seed: int = 7) -> dict[str, Any]:
    rows: list[dict[str, Any]] = []
    for scenario in SCENARIOS:
        for hardened in (False, True):
            outcome = run_scenario(scenario, hardened, seed)
            rows.append(
                {
                    "threat_id": scenario.threat_id,
                    "name": scenario.name,
                    "description": scenario.description,
                    "maestro_layers": list(scenario.maestro_layers),
                    "topology": scenario.topology,
                    "config": "hardened" if hardened else "baseline",
                    "outcome": "succeeded" if outcome.succeeded else "blocked",
                    "blocking_control": outcome.blocking_control,
                    "audit_evidence": list(outcome.audit_seqs),
                    "evidence": outcome.evidence,
                }
            )
    baseline = [r for r in rows if r["config"] == "baseline"]
    hardened_rows = [r for r in rows if r["config"] == "hardened"]
    return {
        "version": REPORT_VERSION,
        "seed": seed,
        "rows": rows,
        "summary": {
            "threats": len(SCENARIOS),
            "baseline_succeeded": sum(
                1 for r in baseline if r["outcome"] == "succeeded"
            ),
            "hardened_blocked": sum(
                1 for r in hardened_rows if r["outcome"] == "blocked"
            ),
        },
    }


def report_ok(report: dict[str, Any]) -> bool:
    """Every attack must succeed against the baseline and be blocked,
    with a named control, by the hardened stance."""
    rows = report.get("rows", [])
    baseline = [r for r in rows if r["config"] == "baseline"]
    hardened = [r for r in rows if r["config"] == "hardened"]
    return (
        len(baseline) == len(SCENARIOS)
        and len(hardened) == len(SCENARIOS)
        and all(r["outcome"] == "succeeded" for r in baseline)
        and all(
            r["outcome"] == "blocked" and r["blocking_control"] for r in hardened
        )
    )


def render_json(report: dict[str, Any]) -> bytes:
    return canonical_bytes(report) + b"\n"


def render_text(report: dict[str, Any]) -> str:
    lines = [f"attack matrix  seed={report['seed']}"]
    for row in report["rows"]:
        layers = ",".join(str(n) for n in row["maestro_layers"])
        head = (
            f"{row['threat_id']:>3}  {row['name']:<26} "
            f"L{layers:<8} {row['config']:<8} {row['outcome']}"
        )
        if row["outcome"] == "blocked":
            seqs = ",".join(str(s) for s in row["audit_evidence"]) or "-"
            head += f" by {row['blocking_control']} (audit seq {seqs})"
        lines.append(head)
    s = report["summary"]
    lines.append(
        f"summary: {s['baseline_succeeded']}/{s['threats']} succeeded against "
        f"baseline, {s['hardened_blocked']}/{s['threats']} blocked by hardened"
    )
    return "\n".join(lines) + "\n"
