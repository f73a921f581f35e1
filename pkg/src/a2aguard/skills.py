"""Builtin skill executors.

Executors are deliberately dull: deterministic transforms with no model
calls, so every task outcome in tests and demos is reproducible. Each is
a generator following the runtime contract — yield Progress,
EmitArtifact, RequireInput, or Complete; raise to fail the task.
"""

from __future__ import annotations

import statistics
from typing import Generator, Optional

from .model import DataPart, Message, Part, TextPart
from .runtime import (
    Complete,
    EmitArtifact,
    Progress,
    RequireInput,
    SkillContext,
    SkillEvent,
    SkillHandler,
)

__all__ = [
    "message_text",
    "echo",
    "summarize_document",
    "review_document",
    "aggregate_data",
    "roster_brief",
    "noisy_progress",
    "builtin_handlers",
]


def message_text(message: Message) -> str:
    return " ".join(
        part.text for part in message.parts if isinstance(part, TextPart)
    ).strip()


def _agent_says(text: str) -> Message:
    return Message(role="agent", parts=[TextPart(text=text)])


def echo(
    context: SkillContext, message: Message
) -> Generator[SkillEvent, Optional[Message], None]:
    text = message_text(message)
    yield EmitArtifact([TextPart(text=text)])
    yield Complete(_agent_says(f"echoed {len(text)} characters"))


def summarize_document(
    context: SkillContext, message: Message
) -> Generator[SkillEvent, Optional[Message], None]:
    text = message_text(message)
    words = text.split()
    yield Progress(note="reading")
    # "Summary" = first 12 words; the point is a stable, checkable output.
    head = " ".join(words[:12])
    summary = head + (" ..." if len(words) > 12 else "")
    yield Progress(note="condensing")
    yield EmitArtifact(
        [
            TextPart(text=summary or "(empty document)"),
            DataPart(payload={"words": len(words), "characters": len(text)}),
        ]
    )
    yield Complete(_agent_says(f"summarized {len(words)} words"))


def review_document(
    context: SkillContext, message: Message
) -> Generator[SkillEvent, Optional[Message], None]:
    document = message_text(message)
    reply = yield RequireInput(
        _agent_says("Which aspect should the review focus on: clarity or accuracy?")
    )
    focus = message_text(reply).lower() if reply else ""
    if focus not in ("clarity", "accuracy"):
        focus = "clarity"
    words = document.split()
    long_words = [w for w in words if len(w) > 12]
    findings = {
        "focus": focus,
        "words": len(words),
        "long_words": sorted(set(long_words))[:10],
        "verdict": "acceptable" if len(words) >= 5 else "too short to review",
    }
    yield EmitArtifact(
        [
            TextPart(text=f"review complete: {findings['verdict']} ({focus})"),
            DataPart(payload=findings),
        ]
    )
    yield Complete(_agent_says("review delivered"))


def aggregate_data(
    context: SkillContext, message: Message
) -> Generator[SkillEvent, Optional[Message], None]:
    series: list[float] = []
    for part in message.parts:
        if isinstance(part, DataPart):
            values = part.payload.get("series", [])
            if isinstance(values, list):
                series.extend(
                    float(v) for v in values if isinstance(v, (int, float))
                )
    if not series:
        raise ValueError("aggregate-data needs a data part with a numeric series")
    yield Progress(note=f"aggregating {len(series)} points")
    yield EmitArtifact(
        [
            DataPart(
                payload={
                    "count": len(series),
                    "sum": sum(series),
                    "mean": statistics.fmean(series),
                    "min": min(series),
                    "max": max(series),
                }
            )
        ]
    )
    yield Complete(_agent_says(f"aggregated {len(series)} points"))


def roster_brief(
    context: SkillContext, message: Message
) -> Generator[SkillEvent, Optional[Message], None]:
    """Reads the one resource it declared. The sandbox test swaps in an
    executor that reaches for an undeclared one."""
    roster = context.read_resource("weekly-roster")
    names = [line.strip() for line in roster.splitlines() if line.strip()]
    yield EmitArtifact(
        [
            TextPart(text=f"{len(names)} people on the roster"),
            DataPart(payload={"headcount": len(names)}),
        ]
    )
    yield Complete(_agent_says("roster brief ready"))


def noisy_progress(
    context: SkillContext, message: Message
) -> Generator[SkillEvent, Optional[Message], None]:
    """Emits as many progress events as the message asks for (default
    300). Exists to exercise stream backpressure."""
    text = message_text(message)
    try:
        count = int(text)
    except ValueError:
        count = 300
    count = max(1, min(count, 10_000))
    for i in range(count):
        yield Progress(note=f"step {i + 1}")
    yield EmitArtifact([TextPart(text=f"emitted {count} progress events")])
    yield Complete(_agent_says("done being noisy"))


def builtin_handlers() -> dict[str, SkillHandler]:
    handlers = [
        SkillHandler(skill_id="echo", executor=echo),
        SkillHandler(skill_id="summarize-document", executor=summarize_document),
        SkillHandler(skill_id="review-document", executor=review_document),
        SkillHandler(skill_id="aggregate-data", executor=aggregate_data),
        SkillHandler(
            skill_id="roster-brief",
            executor=roster_brief,
            capabilities=frozenset({"resource:weekly-roster"}),
        ),
        SkillHandler(skill_id="noisy-progress", executor=noisy_progress),
    ]
    return {handler.skill_id: handler for handler in handlers}
