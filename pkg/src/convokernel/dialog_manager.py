"""High-level dialog control.

Classifies user turns into a small intent taxonomy (functional, strong
topic, moderate topic), then picks which module should respond by a
fixed priority protocol over the modules' published states.  Also owns
the cross-module proposal handshake (propose_topic / propose_keywords)
and the error-handling fallbacks.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

from . import nlu
from .adaptation import TopicOrderTable, UserProfile, default_topic_order
from .lexicons import Lexicons, normalize

# Sentiment magnitude below which a topic mention is not a preference.
PREFERENCE_SENTIMENT_THRESHOLD = 0.2

ANS_LIKE_FALLBACK = "Awesome, I like that too. I guess we have similar tastes"
SYSTEM_FALLBACK = (
    "My bad, I lost my train of thought. Do you want to try again, "
    "or would you rather talk about something else?"
)
REPROMPT_TEXT = (
    "Thanks for sharing, Your thoughts are really interesting, "
    "but I'm struggling to keep up. Can you explain that again more simply for me?"
)


class ModuleState(str, enum.Enum):
    CONTINUE = "CONTINUE"
    UNCLEAR = "UNCLEAR"
    STOP = "STOP"


class SelectReason(str, enum.Enum):
    STRONG_INTENT = "STRONG_INTENT"
    CONTINUE_PREVIOUS = "CONTINUE_PREVIOUS"
    ACCEPT_PROPOSAL = "ACCEPT_PROPOSAL"
    PROPOSE_NEW = "PROPOSE_NEW"
    FUNCTIONAL = "FUNCTIONAL"
    ERROR_FALLBACK = "ERROR_FALLBACK"


class FailureScope(str, enum.Enum):
    MODULE = "MODULE"
    SYSTEM = "SYSTEM"


# ---------------------------------------------------------------------------
# Intent taxonomy.
# ---------------------------------------------------------------------------

class Intent:
    """Marker base for all intents."""


class FunctionalIntent(Intent):
    """Marker base: utterance is about the interaction, not a topic."""


class StrongTopicIntent(Intent):
    """Marker base: an explicit demand about what to talk about."""


class ModerateTopicIntent(Intent):
    """Marker base: a softer topical signal."""


@dataclass(frozen=True)
class IncompleteOrHesitant(FunctionalIntent):
    pass


@dataclass(frozen=True)
class Clarification(FunctionalIntent):
    pass


@dataclass(frozen=True)
class DeviceRequest(FunctionalIntent):
    task: str
    topic: str | None = None       # registered topic found inside the request
    keywords: str | None = None    # the entity phrase, for a follow-up proposal


@dataclass(frozen=True)
class TopicSwitch(StrongTopicIntent):
    away_from: str | None = None   # topic the user is done with, when named


@dataclass(frozen=True)
class TopicRequest(StrongTopicIntent):
    topic: str


@dataclass(frozen=True)
class TopicPreference(ModerateTopicIntent):
    topic: str
    polarity: float


@dataclass(frozen=True)
class TopicIntent(ModerateTopicIntent):
    candidates: tuple[nlu.TopicCandidate, ...]


# ---------------------------------------------------------------------------
# Global attributes: the cross-module proposal handshake.
# ---------------------------------------------------------------------------

@dataclass
class GlobalAttributes:
    propose_topic: str | None = None
    propose_keywords: str | Sequence[str] | None = None

    def __post_init__(self) -> None:
        if self.propose_keywords is not None and self.propose_topic is None:
            raise ValueError("propose_keywords requires propose_topic")

    @property
    def pending(self) -> bool:
        return self.propose_topic is not None

    def set_proposal(self, topic: str, keywords: str | Sequence[str] | None = None) -> None:
        self.propose_topic = topic
        self.propose_keywords = keywords

    def clear(self) -> None:
        self.propose_topic = None
        self.propose_keywords = None

    def snapshot(self) -> "GlobalAttributes":
        return GlobalAttributes(self.propose_topic, self.propose_keywords)

    def to_dict(self) -> dict:
        return {
            "propose_topic": self.propose_topic,
            "propose_keywords": self.propose_keywords,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "GlobalAttributes":
        return cls(raw.get("propose_topic"), raw.get("propose_keywords"))


# ---------------------------------------------------------------------------
# Intent classification.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntentContext:
    """What classification needs to know about the conversation."""

    registered_topics: frozenset[str] = frozenset()
    pending_topic: str | None = None


class _Patterns:
    def __init__(self, raw: Mapping[str, Sequence[str]]):
        self.clarification = [re.compile(p) for p in raw["clarification"]]
        self.device = [re.compile(p) for p in raw["device"]]
        self.topic_switch = [re.compile(p) for p in raw["topic_switch"]]
        self.topic_request = [re.compile(p) for p in raw["topic_request"]]


_PATTERNS: _Patterns | None = None


def load_intent_patterns(path=None) -> _Patterns:
    if path is None:
        raw = json.loads(
            resources.files("convokernel")
            .joinpath("data/lexicons/intent_patterns.json")
            .read_text(encoding="utf-8")
        )
    else:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    return _Patterns(raw)


def _patterns() -> _Patterns:
    global _PATTERNS
    if _PATTERNS is None:
        _PATTERNS = load_intent_patterns()
    return _PATTERNS


def _resolve_topics_ordered(
    phrase: str, lex: Lexicons, registered: frozenset[str]
) -> list[str]:
    """Registered topics named in *phrase*, distinct, in mention order."""
    segment = nlu.Segment(text=normalize(phrase), index=0)
    cands = nlu.detect_topics(segment, lex, registered_topics=registered or None)
    seen: list[str] = []
    for cand in cands:
        if cand.topic not in seen:
            seen.append(cand.topic)
    return seen


def _resolve_topic(phrase: str, lex: Lexicons, registered: frozenset[str]) -> str | None:
    """Map a free-text phrase to a registered topic module, if any."""
    segment = nlu.Segment(text=normalize(phrase), index=0)
    cands = nlu.detect_topics(segment, lex, registered_topics=registered or None)
    if not cands:
        return None
    best = max(c.confidence for c in cands)
    return next(c.topic for c in cands if c.confidence == best)


def classify_intents(
    result: nlu.NluResult,
    lex: Lexicons,
    context: IntentContext | None = None,
) -> list[Intent]:
    """Map NLU annotations to the intent taxonomy.

    A single utterance may carry several intents at once (for example a
    device request that also names an artist).  Topics consumed by
    stronger intents — requests, switch targets, rejected proposals —
    are withheld from the residual TopicIntent so the selector cannot
    route right back to them.
    """
    ctx = context or IntentContext()
    pats = _patterns()
    intents: list[Intent] = []
    consumed_topics: set[str] = set()
    fine_grains = set(result.fine_grains)

    if any(a.incomplete for a in result.annotations) or nlu.FineGrainIntent.HESITANT in fine_grains:
        intents.append(IncompleteOrHesitant())

    full = normalize(result.utterance)
    if any(p.search(full) for p in pats.clarification):
        intents.append(Clarification())

    for annotation in result.annotations:
        seg_text = normalize(annotation.segment.text)
        if not seg_text:
            continue

        for pattern in pats.device:
            match = pattern.match(seg_text)
            if not match:
                continue
            entity = (match.groupdict() or {}).get("entity")
            topic = keywords = None
            if entity:
                topic = _resolve_topic(entity, lex, ctx.registered_topics)
                keywords = entity if topic else None
            intents.append(DeviceRequest(task=seg_text, topic=topic, keywords=keywords))
            break

        request_zone = seg_text
        for pattern in pats.topic_switch:
            match = pattern.search(seg_text)
            if not match:
                continue
            away = (match.groupdict() or {}).get("topic")
            away_topic = _resolve_topic(away, lex, ctx.registered_topics) if away else None
            intents.append(TopicSwitch(away_from=away_topic))
            if away_topic:
                consumed_topics.add(away_topic)
            # A request may still follow the switch ("... anymore, let's
            # talk about games"); only the part after the switch counts.
            request_zone = seg_text[match.end():]
            break

        for pattern in pats.topic_request:
            match = pattern.search(request_zone)
            if not match:
                continue
            tail = (match.groupdict() or {}).get("topic", "")
            topics = _resolve_topics_ordered(tail, lex, ctx.registered_topics) if tail else []
            for topic in topics:
                intents.append(TopicRequest(topic=topic))
                consumed_topics.add(topic)
            break

    # Preference about the currently proposed topic.
    if ctx.pending_topic:
        pending = ctx.pending_topic
        polarity: float | None = None
        if fine_grains & {nlu.FineGrainIntent.ANS_NO, nlu.FineGrainIntent.ANS_DISLIKE}:
            polarity = -1.0
        elif fine_grains & {nlu.FineGrainIntent.ANS_YES, nlu.FineGrainIntent.ANS_LIKE}:
            polarity = 1.0
        else:
            for annotation in result.annotations:
                if any(c.topic == pending for c in annotation.topic_candidates) and (
                    abs(annotation.sentiment) > PREFERENCE_SENTIMENT_THRESHOLD
                ):
                    polarity = annotation.sentiment
                    break
        if polarity is not None:
            intents.append(TopicPreference(topic=pending, polarity=polarity))
            if polarity <= 0:
                consumed_topics.add(pending)

    # Residual topic mentions.
    best: dict[str, nlu.TopicCandidate] = {}
    order: list[str] = []
    for cand in result.topic_candidates:
        if cand.topic in consumed_topics:
            continue
        if ctx.registered_topics and cand.topic not in ctx.registered_topics:
            continue
        if cand.topic not in best or cand.confidence > best[cand.topic].confidence:
            if cand.topic not in best:
                order.append(cand.topic)
            best[cand.topic] = cand
    if best:
        ranked = sorted(order, key=lambda t: (-best[t].confidence, order.index(t)))
        intents.append(TopicIntent(candidates=tuple(best[t] for t in ranked)))

    return intents


# ---------------------------------------------------------------------------
# Module selection.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegistryView:
    """The selector's view of what modules exist."""

    topic_modules: frozenset[str]
    other_modules: frozenset[str] = frozenset()
    functional_module: str = "functional"
    transition_module: str = "transition"
    fallback_module: str = "fallback"
    greeting_module: str = "greeting"

    @property
    def modules(self) -> frozenset[str]:
        return (
            self.topic_modules
            | self.other_modules
            | frozenset(
                {
                    self.functional_module,
                    self.transition_module,
                    self.fallback_module,
                    self.greeting_module,
                }
            )
        )


@dataclass(frozen=True)
class SelectorDecision:
    selected_module: str
    reason: SelectReason
    handoff: GlobalAttributes


def _rank_candidates(
    topics: Sequence[str],
    profile: UserProfile,
    order_table: TopicOrderTable,
) -> str:
    """Best topic by adaptation ordering: stated preferences first, then
    the gender-keyed personal order, then mention order."""
    personal = list(order_table.order_for(profile.predicted_gender))

    def rank(topic: str) -> tuple:
        if topic in profile.preferred_topics:
            return (0, profile.preferred_topics.index(topic))
        if topic in personal:
            return (1, personal.index(topic))
        return (2, topics.index(topic))

    return min(topics, key=rank)


def select_module(
    intents: Sequence[Intent],
    previous: tuple[str, ModuleState] | None,
    attrs: GlobalAttributes,
    profile: UserProfile,
    registry: RegistryView,
    order_table: TopicOrderTable | None = None,
) -> SelectorDecision:
    """Decide which module answers this turn.

    Priority: functional intents, then explicit topic demands, then
    continuing a module that asked to continue, then the user's topic
    mentions (preferring the previous topic while it is clarifying,
    never one that said stop), then proposal acceptance, and finally a
    fresh proposal.
    """
    snap = attrs.snapshot()

    def decide(module: str, reason: SelectReason) -> SelectorDecision:
        return SelectorDecision(selected_module=module, reason=reason, handoff=snap)

    if not registry.topic_modules:
        return decide(registry.fallback_module, SelectReason.ERROR_FALLBACK)

    table = order_table if order_table is not None else default_topic_order()

    # (1) Functional intents interrupt everything.
    if any(isinstance(i, FunctionalIntent) for i in intents):
        return decide(registry.functional_module, SelectReason.FUNCTIONAL)

    # (2) Strong topic intents override module states entirely.
    requests = [
        i for i in intents
        if isinstance(i, TopicRequest) and i.topic in registry.topic_modules
    ]
    if requests:
        # Last-mentioned request wins.
        return decide(requests[-1].topic, SelectReason.STRONG_INTENT)
    if any(isinstance(i, TopicSwitch) for i in intents):
        return decide(registry.transition_module, SelectReason.STRONG_INTENT)

    prev_module, prev_state = previous if previous is not None else (None, None)

    # (3) A module that asked to continue keeps the floor.
    if prev_state is ModuleState.CONTINUE and prev_module in registry.modules:
        return decide(prev_module, SelectReason.CONTINUE_PREVIOUS)

    pending = attrs.propose_topic if attrs.propose_topic in registry.topic_modules else None

    # (4) Topic mentions while the previous module is unsure or done.
    topic_intent = next((i for i in intents if isinstance(i, TopicIntent)), None)
    candidate_topics = [
        c.topic for c in (topic_intent.candidates if topic_intent else ())
        if c.topic in registry.topic_modules
    ]
    if candidate_topics:
        if pending and pending in candidate_topics:
            return decide(pending, SelectReason.ACCEPT_PROPOSAL)
        if prev_state is ModuleState.UNCLEAR and prev_module in candidate_topics:
            return decide(prev_module, SelectReason.CONTINUE_PREVIOUS)
        eligible = [
            t for t in candidate_topics
            if not (prev_state is ModuleState.STOP and t == prev_module)
        ]
        if eligible:
            return decide(_rank_candidates(eligible, profile, table), SelectReason.PROPOSE_NEW)

    # (5) Resolution of a pending proposal.
    if pending:
        pref = next(
            (i for i in intents if isinstance(i, TopicPreference) and i.topic == pending),
            None,
        )
        if pref is not None and pref.polarity > 0:
            return decide(pending, SelectReason.ACCEPT_PROPOSAL)
        # Anything else is a rejection; fall through to a fresh proposal.
        return decide(registry.transition_module, SelectReason.PROPOSE_NEW)

    # A clarifying module with no counter-signal gets another chance.
    if prev_state is ModuleState.UNCLEAR and prev_module in registry.modules:
        return decide(prev_module, SelectReason.CONTINUE_PREVIOUS)

    # (6) Nothing else applies: move the conversation along.
    return decide(registry.transition_module, SelectReason.PROPOSE_NEW)


def resolve_proposal(
    decision: SelectorDecision,
    attrs: GlobalAttributes,
) -> str | None:
    """How this turn's decision settles a pending proposal.

    Returns "accepted", "rejected", or None (nothing pending, or a
    functional interruption that leaves the proposal open).
    """
    if not attrs.pending:
        return None
    if decision.reason is SelectReason.FUNCTIONAL:
        return None
    if (
        decision.reason is SelectReason.ACCEPT_PROPOSAL
        and decision.selected_module == attrs.propose_topic
    ):
        return "accepted"
    return "rejected"


def propose_transition(
    attrs: GlobalAttributes,
    topic: str,
    keywords: str | Sequence[str] | None,
    registry: RegistryView,
) -> bool:
    """Arm the proposal handshake; returns False if the topic is unknown."""
    if topic not in registry.topic_modules:
        return False
    attrs.set_proposal(topic, keywords)
    return True


# ---------------------------------------------------------------------------
# Error handling.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FallbackResponse:
    text: str
    reprompt: str


_MODULE_FALLBACKS: dict[str, str] = {
    "ans_like": ANS_LIKE_FALLBACK,
}


def error_fallback(
    fine_grain: "nlu.FineGrainIntent | str | None",
    failure_scope: FailureScope | str = FailureScope.SYSTEM,
) -> FallbackResponse:
    """Response for a failed turn; this path must never raise."""
    try:
        scope = (
            failure_scope
            if isinstance(failure_scope, FailureScope)
            else FailureScope(str(failure_scope).upper())
        )
        value = (
            fine_grain.value
            if isinstance(fine_grain, nlu.FineGrainIntent)
            else (str(fine_grain) if fine_grain is not None else "")
        )
        if scope is FailureScope.MODULE and value in _MODULE_FALLBACKS:
            return FallbackResponse(text=_MODULE_FALLBACKS[value], reprompt=REPROMPT_TEXT)
        return FallbackResponse(text=SYSTEM_FALLBACK, reprompt=REPROMPT_TEXT)
    except Exception:
        return FallbackResponse(text=SYSTEM_FALLBACK, reprompt=REPROMPT_TEXT)
