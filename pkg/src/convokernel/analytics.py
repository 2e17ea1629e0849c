"""Batch metrics over conversation logs, plus scripted persona drives.

Three aggregators answer "how did each topic module perform": turn-
weighted ratings, entry-method distributions, and proposal acceptance
rates.  A persona runner replays a scripted user against a live engine
to produce logs (and transcripts) deterministically for tests.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

from .content import ConversationLog, read_conversation_log
from .engine import Engine, TurnEvent, TurnResponse
from .errors import ConvoKernelError, ProtocolError

__all__ = [
    "ModuleStats",
    "AcceptanceStats",
    "PersonaTurn",
    "PersonaScript",
    "PersonaMismatch",
    "PersonaResult",
    "round_half_up",
    "rating_per_turn",
    "entry_distribution",
    "acceptance_rate",
    "run_persona",
    "format_report",
]


def round_half_up(value: float, places: int = 2) -> float:
    """Decimal rounding where .5 always rounds away from zero."""
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


# ---------------------------------------------------------------------------
# Ratings weighted by turn share.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModuleStats:
    """Per-module share of traffic and turn-weighted rating."""

    module_id: str
    total_turns: int
    conversations: int
    avg_turns_per_conversation: float
    avg_rating: float | None


def rating_per_turn(logs: Sequence[ConversationLog]) -> dict[str, ModuleStats]:
    """Turn counts and turn-weighted average rating per module.

    Every turn of a conversation carries that conversation's rating
    equally, so a module's average is the rating-weighted mean over the
    turns it served in rated conversations.  Unrated conversations still
    count toward turn totals, never toward the average.  The
    per-conversation turn average divides by conversations that touched
    the module, not all conversations.
    """
    total_turns: dict[str, int] = {}
    touched: dict[str, set[str]] = {}
    weighted: dict[str, float] = {}
    rated_turns: dict[str, int] = {}

    for log in logs:
        for record in log.turns:
            module = record.module_id
            total_turns[module] = total_turns.get(module, 0) + 1
            touched.setdefault(module, set()).add(log.conversation_id)
            if log.rating is not None:
                weighted[module] = weighted.get(module, 0.0) + log.rating
                rated_turns[module] = rated_turns.get(module, 0) + 1

    stats: dict[str, ModuleStats] = {}
    for module in sorted(total_turns):
        conversations = len(touched[module])
        rated = rated_turns.get(module, 0)
        stats[module] = ModuleStats(
            module_id=module,
            total_turns=total_turns[module],
            conversations=conversations,
            avg_turns_per_conversation=total_turns[module] / conversations,
            avg_rating=(weighted[module] / rated) if rated else None,
        )
    return stats


# ---------------------------------------------------------------------------
# Entry-method distribution.
# ---------------------------------------------------------------------------

def entry_distribution(logs: Sequence[ConversationLog]) -> dict[str, dict[str, int]]:
    """How conversations arrive at each module.

    An entry is the first turn of each contiguous run of one module
    within a conversation; re-entering the module later in the same
    conversation counts again.
    """
    counts: dict[str, dict[str, int]] = {}
    for log in logs:
        previous_module = None
        for record in sorted(log.turns, key=lambda r: r.turn_index):
            if record.module_id != previous_module:
                per_method = counts.setdefault(record.module_id, {})
                method = record.entry_method.value
                per_method[method] = per_method.get(method, 0) + 1
            previous_module = record.module_id
    return counts


# ---------------------------------------------------------------------------
# Proposal acceptance.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AcceptanceStats:
    topic: str
    accepts: int
    proposals: int

    @property
    def rate(self) -> float:
        return self.accepts / self.proposals

    @property
    def rate_2dp(self) -> float:
        return round_half_up(self.rate, 2)


def acceptance_rate(logs: Sequence[ConversationLog]) -> dict[str, AcceptanceStats]:
    """Accepts and proposals per topic, from recorded proposal events.

    Topics never proposed do not appear, so a rate is never computed
    over zero proposals.
    """
    accepts: dict[str, int] = {}
    proposals: dict[str, int] = {}
    for log in logs:
        for record in log.turns:
            event = record.proposal_event
            if not event:
                continue
            topic = event["topic"]
            proposals[topic] = proposals.get(topic, 0) + 1
            if event.get("accepted"):
                accepts[topic] = accepts.get(topic, 0) + 1
    return {
        topic: AcceptanceStats(
            topic=topic, accepts=accepts.get(topic, 0), proposals=count
        )
        for topic, count in sorted(proposals.items())
    }


# ---------------------------------------------------------------------------
# Report formatting.
# ---------------------------------------------------------------------------

def format_report(rows: Sequence[Mapping], fmt: str = "table") -> str:
    """Render report rows as an aligned table, JSON, or CSV."""
    rows = [dict(row) for row in rows]
    if fmt == "json":
        return json.dumps(rows, indent=2, ensure_ascii=False)
    if not rows:
        return ""
    headers = list(rows[0].keys())
    cells = [[_cell(row.get(h)) for h in headers] for row in rows]
    if fmt == "csv":
        lines = [",".join(headers)]
        lines += [",".join(line) for line in cells]
        return "\n".join(lines)
    if fmt == "table":
        widths = [
            max(len(headers[i]), *(len(line[i]) for line in cells)) if cells else len(headers[i])
            for i in range(len(headers))
        ]
        out = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
        out += ["  ".join(line[i].ljust(widths[i]) for i in range(len(headers))) for line in cells]
        return "\n".join(out)
    raise ValueError(f"unknown report format {fmt!r}")


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def ratings_report(logs: Sequence[ConversationLog]) -> list[dict]:
    stats = rating_per_turn(logs)
    ordered = sorted(stats.values(), key=lambda s: -s.total_turns)
    return [
        {
            "module": s.module_id,
            "total_turns": s.total_turns,
            "avg_turns_per_conversation": round_half_up(s.avg_turns_per_conversation, 2),
            "avg_rating": None if s.avg_rating is None else round_half_up(s.avg_rating, 2),
        }
        for s in ordered
    ]


def entries_report(logs: Sequence[ConversationLog]) -> list[dict]:
    distribution = entry_distribution(logs)
    return [
        {
            "module": module,
            "OPEN_QUESTION": methods.get("OPEN_QUESTION", 0),
            "TOPIC_PROPOSAL": methods.get("TOPIC_PROPOSAL", 0),
            "OTHER": methods.get("OTHER", 0),
        }
        for module, methods in sorted(distribution.items())
    ]


def acceptance_report(logs: Sequence[ConversationLog]) -> list[dict]:
    stats = acceptance_rate(logs)
    ordered = sorted(stats.values(), key=lambda s: -s.rate)
    return [
        {
            "topic": s.topic,
            "accepts": s.accepts,
            "proposals": s.proposals,
            "rate": s.rate_2dp,
        }
        for s in ordered
    ]


# ---------------------------------------------------------------------------
# Persona simulation.
# ---------------------------------------------------------------------------

class PersonaMismatch(ConvoKernelError):
    """A scripted expectation failed; carries the offending turn index."""

    def __init__(self, turn_index: int, expected: str, actual: str):
        super().__init__(
            f"turn {turn_index}: bot response {actual!r} does not match"
            f" expected pattern {expected!r}"
        )
        self.turn_index = turn_index
        self.expected = expected
        self.actual = actual


@dataclass(frozen=True)
class PersonaTurn:
    utterance: str
    asr_confidence: float = 0.95
    expect: str | None = None  # regex checked against the PREVIOUS bot response


@dataclass(frozen=True)
class PersonaScript:
    """A deterministic scripted user."""

    name: str
    turns: tuple[PersonaTurn, ...]
    rating: int | None = None
    user_id: str = "persona-user"

    def __post_init__(self):
        if not self.turns:
            raise ValueError("persona script needs at least one turn")
        if self.turns[0].expect is not None:
            raise ValueError("the first scripted turn has no prior bot response")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "PersonaScript":
        turns = tuple(
            PersonaTurn(
                utterance=t["utterance"],
                asr_confidence=t.get("asr_confidence", 0.95),
                expect=t.get("expect"),
            )
            for t in raw["turns"]
        )
        return cls(
            name=raw.get("name", "persona"),
            turns=turns,
            rating=raw.get("rating"),
            user_id=raw.get("user_id", "persona-user"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "PersonaScript":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class PersonaResult:
    script_name: str
    conversation_id: str
    transcript: tuple[dict, ...]       # {"speaker", "text"} in spoken order
    responses: tuple[TurnResponse, ...]
    log: ConversationLog

    @property
    def transcript_text(self) -> str:
        return "\n".join(f"{t['speaker']}: {t['text']}" for t in self.transcript)


def run_persona(
    script: PersonaScript,
    engine: Engine,
    conversation_id: str | None = None,
) -> PersonaResult:
    """Drive *engine* through one scripted conversation.

    Each line may declare an expected pattern for the bot's previous
    response; the first mismatch aborts with the turn index.  The
    engine's own log file for the conversation is parsed back into the
    result, so metrics computed from persona runs use the identical
    records a live deployment would produce.
    """
    conversation_id = conversation_id or f"persona-{script.name}"
    transcript: list[dict] = []
    responses: list[TurnResponse] = []

    for index, turn in enumerate(script.turns):
        if turn.expect is not None:
            previous = responses[-1].text if responses else ""
            if re.search(turn.expect, previous) is None:
                raise PersonaMismatch(index, turn.expect, previous)
        response = engine.handle_turn(
            TurnEvent(
                conversation_id=conversation_id,
                user_id=script.user_id,
                utterance=turn.utterance,
                asr_confidence=turn.asr_confidence,
            )
        )
        transcript.append({"speaker": "user", "text": turn.utterance})
        transcript.append({"speaker": "bot", "text": response.text})
        responses.append(response)

    if script.rating is not None:
        engine.rate(conversation_id, script.rating)

    log_path = Path(engine.data_dir) / "logs" / f"{conversation_id}.jsonl"
    log = read_conversation_log(log_path)
    return PersonaResult(
        script_name=script.name,
        conversation_id=conversation_id,
        transcript=tuple(transcript),
        responses=tuple(responses),
        log=log,
    )
