"""Turn orchestration: safety gates, ASR repair, selection, flows, speech markup.

The engine owns everything that happens between receiving a user turn
and returning a spoken response: input validation, the low-confidence
and profanity gates, phonetic ASR correction, language understanding,
module selection, flow execution, persistence, logging, and SSML
post-processing.  Each conversation is strictly serialized and draws
all randomness from one seeded generator, so a conversation replayed
against the same build and seed reproduces its outputs exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from . import adaptation, fsm, nlg, nlu, phonetics, topics
from .content import (
    EntryMethod,
    FileStore,
    LogWriter,
    Namespace,
    PackManager,
    TurnRecord,
    profile_load,
    profile_save,
)
from .dialog_manager import (
    REPROMPT_TEXT,
    FailureScope,
    FunctionalIntent,
    GlobalAttributes,
    IntentContext,
    ModuleState,
    SelectorDecision,
    SelectReason,
    classify_intents,
    error_fallback,
    propose_transition,
    resolve_proposal,
    select_module,
)
from .errors import ConvoKernelError, FlowError, PackValidationError, ProtocolError
from .lexicons import Lexicons
from .nlg import BagSet, ProsodyConfig, strip_ssml

log = logging.getLogger(__name__)

DEFAULT_ASR_THRESHOLD = 0.30

# Whole-utterance commands that end the conversation immediately.
END_SESSION_UTTERANCES = frozenset(
    {"stop", "exit", "quit", "goodbye", "good bye", "bye", "bye bye",
     "turn off", "shut down", "cancel", "end conversation", "stop talking"}
)

_SAFETY_MODULE = "safety"
_WORD_RE = re.compile(r"[A-Za-z']+")


def _lexicon_text(name: str) -> str:
    return (
        resources.files("convokernel")
        .joinpath(f"data/lexicons/{name}")
        .read_text(encoding="utf-8")
    )


# ---------------------------------------------------------------------------
# Turn protocol types.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TurnEvent:
    """One user turn arriving at the engine."""

    conversation_id: str
    user_id: str
    utterance: str
    asr_confidence: float = 1.0
    timestamp_ms: int = 0

    def __post_init__(self):
        if not isinstance(self.conversation_id, str) or not self.conversation_id:
            raise ProtocolError("conversation_id must be a non-empty string")
        if not isinstance(self.user_id, str) or not self.user_id:
            raise ProtocolError("user_id must be a non-empty string")
        if not isinstance(self.utterance, str):
            raise ProtocolError("utterance must be a string")
        if isinstance(self.asr_confidence, bool) or not isinstance(
            self.asr_confidence, (int, float)
        ):
            raise ProtocolError("asr_confidence must be a number")
        if not 0.0 <= float(self.asr_confidence) <= 1.0:
            raise ProtocolError("asr_confidence must be within [0, 1]")
        if isinstance(self.timestamp_ms, bool) or not isinstance(self.timestamp_ms, int):
            raise ProtocolError("timestamp_ms must be an integer")


@dataclass(frozen=True)
class DebugTrace:
    """Per-turn diagnostic record exposed over the trace endpoint."""

    detected_intents: tuple[str, ...]
    selected_module: str
    fsm_path: tuple[str, ...]
    nlu_summary: tuple[dict, ...]
    gate: str = ""
    template_keys: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "detected_intents": list(self.detected_intents),
            "selected_module": self.selected_module,
            "fsm_path": list(self.fsm_path),
            "nlu_summary": [dict(s) for s in self.nlu_summary],
            "gate": self.gate,
            "template_keys": list(self.template_keys),
        }


@dataclass(frozen=True)
class TurnResponse:
    """What the engine hands back for one turn."""

    text: str
    ssml: str
    reprompt_ssml: str
    end_session: bool
    trace: DebugTrace

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "ssml": self.ssml,
            "reprompt_ssml": self.reprompt_ssml,
            "end_session": self.end_session,
            "trace": self.trace.to_dict(),
        }


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable front-door behavior of the turn pipeline."""

    asr_confidence_threshold: float = DEFAULT_ASR_THRESHOLD
    profanity_lexicon_path: str | None = None
    correction_enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.asr_confidence_threshold <= 1.0:
            raise ValueError("asr_confidence_threshold must be within [0, 1]")


# ---------------------------------------------------------------------------
# ASR confidence gate.
# ---------------------------------------------------------------------------

def check_asr_gate(confidence: float, threshold: float = DEFAULT_ASR_THRESHOLD) -> str:
    """Return ``"clarify"`` when confidence falls below the threshold.

    A confidence exactly at the threshold passes.
    """
    if not 0.0 <= confidence <= 1.0:
        raise ValueError("confidence must be within [0, 1]")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be within [0, 1]")
    return "clarify" if confidence < threshold else "pass"


# ---------------------------------------------------------------------------
# Profanity gate.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfanityResult:
    status: str  # "clean" | "flagged"
    matched_span: tuple[int, int] | None = None
    matched_text: str | None = None


class ProfanityLexicon:
    """Compiled deny-list; every entry is anchored at word boundaries.

    Patterns are compiled once at load time, so an invalid entry fails
    ingestion and can never raise during a live scan.
    """

    def __init__(self, terms: Sequence[str]):
        compiled = []
        for raw in terms:
            if not isinstance(raw, str) or not raw:
                raise PackValidationError(
                    "profanity", [f"entry must be a non-empty string: {raw!r}"]
                )
            try:
                compiled.append(re.compile(rf"\b(?:{raw})\b", re.IGNORECASE))
            except re.error as err:
                raise PackValidationError(
                    "profanity", [f"invalid pattern {raw!r}: {err}"]
                ) from err
        self._patterns: tuple[re.Pattern, ...] = tuple(compiled)

    def __len__(self) -> int:
        return len(self._patterns)

    def first_match(self, text: str) -> re.Match | None:
        best: re.Match | None = None
        for pattern in self._patterns:
            found = pattern.search(text)
            if found and (best is None or found.start() < best.start()):
                best = found
        return best

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ProfanityLexicon":
        if path is None:
            raw = json.loads(_lexicon_text("profanity.json"))
        else:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        return cls(raw["terms"])


def profanity_scan(text: str, lexicon: ProfanityLexicon) -> ProfanityResult:
    """Check *text* against the deny-list; only whole words count.

    "grass" stays clean against an entry for "ass": every entry must
    match at word boundaries, never inside a longer word.
    """
    found = lexicon.first_match(text)
    if found is None:
        return ProfanityResult(status="clean")
    return ProfanityResult(
        status="flagged",
        matched_span=(found.start(), found.end()),
        matched_text=found.group(0),
    )


# ---------------------------------------------------------------------------
# Phonetic encoding and ASR correction.
# ---------------------------------------------------------------------------

def phonetic_encode(token: str) -> tuple[str, str]:
    """Primary and secondary phonetic codes for one word."""
    return phonetics.double_metaphone(token)


@dataclass(frozen=True)
class CorrectionRule:
    pattern: re.Pattern
    replace: str


def load_correction_table(path: str | Path | None = None) -> tuple[CorrectionRule, ...]:
    """Curated regex replacements for recurring transcription errors."""
    if path is None:
        raw = json.loads(_lexicon_text("correction_table.json"))
    else:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    rules = []
    for entry in raw["replacements"]:
        try:
            rules.append(
                CorrectionRule(
                    pattern=re.compile(entry["pattern"], re.IGNORECASE),
                    replace=entry["replace"],
                )
            )
        except re.error as err:
            raise PackValidationError(
                "correction_table",
                [f"invalid pattern {entry.get('pattern')!r}: {err}"],
            ) from err
    return tuple(rules)


_DEFAULT_TABLE: tuple[CorrectionRule, ...] | None = None


def default_correction_table() -> tuple[CorrectionRule, ...]:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = load_correction_table()
    return _DEFAULT_TABLE


def _phrase_tokens(phrase: str) -> list[str]:
    return [t.lower() for t in _WORD_RE.findall(phrase)]


def asr_correct(
    utterance: str,
    domain_vocabulary: Sequence[str],
    table: Sequence[CorrectionRule] | None = None,
    lex: Lexicons | None = None,
) -> str:
    """Repair likely mis-transcriptions in *utterance*.

    Two stages: the curated replacement table runs first, then token
    spans whose phonetic code matches a vocabulary phrase are replaced
    by that phrase when the surface form differs.  Spans equal to a
    vocabulary phrase are left untouched, which keeps the operation
    idempotent.  Secondary codes are consulted only when no primary
    match exists anywhere in the utterance.
    """
    corrected = utterance
    for rule in table if table is not None else default_correction_table():
        corrected = rule.pattern.sub(rule.replace, corrected)

    vocab: list[tuple[int, str, str, str, str]] = []
    for phrase in domain_vocabulary:
        words = _phrase_tokens(phrase)
        if not words:
            continue
        vocab.append(
            (
                len(words),
                " ".join(words),
                phonetics.phrase_code(phrase),
                phonetics.phrase_code_secondary(phrase),
                phrase,
            )
        )
    if not vocab:
        return corrected
    vocab.sort(key=lambda v: (-v[0], v[1]))

    matches = list(_WORD_RE.finditer(corrected))
    token_texts = [m.group(0).lower() for m in matches]
    used = [False] * len(matches)

    # Protect exact occurrences of vocabulary phrases so repeated
    # correction never drifts.
    for n, joined, _p, _s, _phrase in vocab:
        for i in range(len(matches) - n + 1):
            if any(used[i : i + n]):
                continue
            if " ".join(token_texts[i : i + n]) == joined:
                for j in range(i, i + n):
                    used[j] = True

    replacements: list[tuple[int, int, str]] = []

    def scan(use_secondary: bool) -> None:
        for n, joined, primary, secondary, phrase in vocab:
            code = secondary if use_secondary else primary
            if not code:
                continue
            for i in range(len(matches) - n + 1):
                if any(used[i : i + n]):
                    continue
                window = token_texts[i : i + n]
                if " ".join(window) == joined:
                    continue
                if lex is not None and all(lex.is_stop(w) for w in window):
                    continue
                span_text = " ".join(window)
                span_code = (
                    phonetics.phrase_code_secondary(span_text)
                    if use_secondary
                    else phonetics.phrase_code(span_text)
                )
                if span_code == code:
                    replacements.append(
                        (matches[i].start(), matches[i + n - 1].end(), phrase)
                    )
                    for j in range(i, i + n):
                        used[j] = True

    scan(use_secondary=False)
    if not replacements:
        scan(use_secondary=True)

    for start, end, phrase in sorted(replacements, reverse=True):
        corrected = corrected[:start] + phrase + corrected[end:]
    return corrected


# ---------------------------------------------------------------------------
# Conversation sessions.
# ---------------------------------------------------------------------------

def _seed_rng(seed: int | str, conversation_id: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{conversation_id}".encode("utf-8")).hexdigest()
    return random.Random(int(digest, 16))


def _rng_state_to_json(rng: random.Random) -> list:
    version, internal, gauss = rng.getstate()
    return [version, list(internal), gauss]


def _rng_state_from_json(raw: Sequence) -> random.Random:
    rng = random.Random()
    rng.setstate((raw[0], tuple(raw[1]), raw[2]))
    return rng


@dataclass
class ConversationSession:
    """Everything one conversation carries between turns."""

    conversation_id: str
    user_id: str
    rng: random.Random
    turn_index: int = 0
    previous_module: str = "greeting"
    previous_state: ModuleState = ModuleState.CONTINUE
    scope: dict = field(default_factory=dict)
    attrs: GlobalAttributes = field(default_factory=GlobalAttributes)
    bags: BagSet = field(default_factory=BagSet)
    ended: bool = False
    last_trace: dict | None = None

    @classmethod
    def create(cls, conversation_id: str, user_id: str, seed: int | str) -> "ConversationSession":
        return cls(
            conversation_id=conversation_id,
            user_id=user_id,
            rng=_seed_rng(seed, conversation_id),
        )

    def to_dict(self) -> dict:
        return {
            "conversation_id": self.conversation_id,
            "user_id": self.user_id,
            "turn_index": self.turn_index,
            "previous_module": self.previous_module,
            "previous_state": self.previous_state.value,
            "scope": self.scope,
            "attrs": self.attrs.to_dict(),
            "bags": self.bags.to_state(),
            "rng_state": _rng_state_to_json(self.rng),
            "ended": self.ended,
            "last_trace": self.last_trace,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ConversationSession":
        return cls(
            conversation_id=raw["conversation_id"],
            user_id=raw["user_id"],
            rng=_rng_state_from_json(raw["rng_state"]),
            turn_index=raw["turn_index"],
            previous_module=raw["previous_module"],
            previous_state=ModuleState(raw["previous_state"]),
            scope=dict(raw["scope"]),
            attrs=GlobalAttributes.from_dict(raw["attrs"]),
            bags=BagSet(raw["bags"]),
            ended=raw.get("ended", False),
            last_trace=raw.get("last_trace"),
        )


# ---------------------------------------------------------------------------
# The engine.
# ---------------------------------------------------------------------------

def _normalize_command(utterance: str) -> str:
    return " ".join(_WORD_RE.findall(utterance.lower()))


def _intent_label(intent) -> str:
    name = type(intent).__name__
    topic = getattr(intent, "topic", None)
    if topic:
        return f"{name}:{topic}"
    return name


class Engine:
    """Single-process conversation engine over a file-backed store."""

    def __init__(
        self,
        data_dir: str | Path,
        config: PipelineConfig | None = None,
        seed: int | str = 0,
        generator=None,
    ):
        self.data_dir = Path(data_dir)
        self.config = config or PipelineConfig()
        self.seed = seed
        self._generator = generator
        self.store = FileStore(self.data_dir)
        self.packs = PackManager(self.data_dir)
        self.registry, self.handlers = topics.build_registry(
            packs=self.packs, generator=generator
        )
        self.packs.flow_registry = self.handlers
        self.view = self.registry.registry_view()
        self.lex: Lexicons = self.registry.lexicons
        self.order_table = self.registry.order_table
        self.log_writer = LogWriter(self.data_dir)
        self.profanity = ProfanityLexicon.load(self.config.profanity_lexicon_path)
        self.correction_table = load_correction_table()
        self._sessions: dict[str, ConversationSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    # -- session plumbing ---------------------------------------------------

    def _lock_for(self, conversation_id: str) -> threading.Lock:
        with self._locks_guard:
            lock = self._locks.get(conversation_id)
            if lock is None:
                lock = threading.Lock()
                self._locks[conversation_id] = lock
            return lock

    def _peek_session(self, conversation_id: str) -> ConversationSession | None:
        session = self._sessions.get(conversation_id)
        if session is not None:
            return session
        raw = self.store.get(Namespace.SESSION, conversation_id)
        if raw is None:
            return None
        session = ConversationSession.from_dict(raw)
        self._sessions[conversation_id] = session
        return session

    def _load_session(self, conversation_id: str, user_id: str) -> ConversationSession:
        session = self._peek_session(conversation_id)
        if session is None:
            session = ConversationSession.create(conversation_id, user_id, self.seed)
            self._sessions[conversation_id] = session
        elif session.user_id != user_id:
            raise ProtocolError(
                f"conversation {conversation_id!r} belongs to another user"
            )
        return session

    def _save(self, session: ConversationSession, profile) -> None:
        self.store.put(Namespace.SESSION, session.conversation_id, session.to_dict())
        profile_save(self.store, profile)

    # -- public API -----------------------------------------------------------

    def handle_turn(self, event: TurnEvent) -> TurnResponse:
        if not isinstance(event, TurnEvent):
            raise ProtocolError("handle_turn requires a TurnEvent")
        with self._lock_for(event.conversation_id):
            return self._handle_locked(event)

    def rate(self, conversation_id: str, rating: int) -> None:
        if isinstance(rating, bool) or not isinstance(rating, int):
            raise ProtocolError("rating must be an integer")
        if not 1 <= rating <= 5:
            raise ProtocolError("rating must be in 1..5")
        if self._peek_session(conversation_id) is None:
            raise ProtocolError(f"unknown conversation {conversation_id!r}")
        self.log_writer.append_rating(conversation_id, rating)

    def trace_for(self, conversation_id: str) -> dict:
        session = self._peek_session(conversation_id)
        if session is None or session.last_trace is None:
            raise ProtocolError(f"no trace recorded for {conversation_id!r}")
        return session.last_trace

    def has_conversation(self, conversation_id: str) -> bool:
        return self._peek_session(conversation_id) is not None

    def reload_flows(self) -> None:
        """Rebuild flows, templates, and catalogs from the active packs.

        The new registry is built completely before any engine state is
        swapped, so a failed reload leaves the running configuration
        untouched.
        """
        registry, handlers = topics.build_registry(
            packs=self.packs, generator=self._generator
        )
        self.registry = registry
        self.handlers = handlers
        self.packs.flow_registry = handlers
        self.view = registry.registry_view()
        self.lex = registry.lexicons
        self.order_table = registry.order_table

    # -- turn pipeline ----------------------------------------------------------

    def _handle_locked(self, event: TurnEvent) -> TurnResponse:
        session = self._load_session(event.conversation_id, event.user_id)
        session.ended = False
        profile = profile_load(self.store, event.user_id)

        # Explicit end-of-session commands short-circuit everything.
        if _normalize_command(event.utterance) in END_SESSION_UTTERANCES:
            text = self._render_common(session, "common.farewell")
            return self._finish_safety(
                session, profile, text, gate="end_session", end_session=True
            )

        # Low-confidence transcripts are never interpreted, only re-asked.
        if (
            check_asr_gate(event.asr_confidence, self.config.asr_confidence_threshold)
            == "clarify"
        ):
            text = self._render_common(session, "common.clarify_asr")
            return self._finish_safety(session, profile, text, gate="low_asr")

        # Profane turns get redirected to a fresh topic proposal.
        scan = profanity_scan(event.utterance, self.profanity)
        if scan.status == "flagged":
            topic = adaptation.select_next_topic(profile, self.order_table)
            propose_transition(session.attrs, topic, None, self.view)
            text = self._render_common(
                session,
                "common.profanity_redirect",
                {"topic": self.registry.display_name(topic)},
            )
            return self._finish_safety(
                session, profile, text, gate="profanity", set_unclear=True,
                extra={"matched": scan.matched_text or ""},
            )

        return self._handle_content_turn(session, profile, event)

    def _render_common(
        self, session: ConversationSession, key: str, slots: Mapping | None = None
    ) -> str:
        return self.registry.templates.render(
            key, slots=dict(slots or {}), bags=session.bags, rng=session.rng
        )

    def _finish_safety(
        self,
        session: ConversationSession,
        profile,
        text: str,
        gate: str,
        end_session: bool = False,
        set_unclear: bool = False,
        extra: dict | None = None,
    ) -> TurnResponse:
        trace = DebugTrace(
            detected_intents=(),
            selected_module=_SAFETY_MODULE,
            fsm_path=(),
            nlu_summary=(),
            gate=gate,
        )
        self.log_writer.append_turn(
            TurnRecord(
                conversation_id=session.conversation_id,
                turn_index=session.turn_index,
                module_id=_SAFETY_MODULE,
                entry_method=EntryMethod.OTHER,
                extra={"gate": gate, **(extra or {})},
            )
        )
        if set_unclear:
            session.previous_state = ModuleState.UNCLEAR
        session.scope["_last_response"] = text
        session.turn_index += 1
        session.ended = end_session
        session.last_trace = trace.to_dict()
        response = self._package(session, text, REPROMPT_TEXT, end_session, trace, "")
        self._save(session, profile)
        return response

    def _package(
        self,
        session: ConversationSession,
        text: str,
        reprompt_text: str,
        end_session: bool,
        trace: DebugTrace,
        template_key: str,
    ) -> TurnResponse:
        prosody = ProsodyConfig()
        spoken = nlg.ssml_postprocess(
            text, prosody, rng=session.rng, template_key=template_key
        )
        reprompt = nlg.ssml_postprocess(reprompt_text, prosody, rng=None)
        return TurnResponse(
            text=strip_ssml(spoken.ssml),
            ssml=spoken.ssml,
            reprompt_ssml=reprompt.ssml,
            end_session=end_session,
            trace=trace,
        )

    def _handle_content_turn(
        self, session: ConversationSession, profile, event: TurnEvent
    ) -> TurnResponse:
        utterance = event.utterance
        if self.config.correction_enabled:
            vocabulary = self.registry.domain_vocabulary(session.previous_module)
            utterance = asr_correct(
                utterance, vocabulary, table=self.correction_table, lex=self.lex
            )

        last_response = session.scope.get("_last_response", "")
        result = nlu.annotate_utterance(
            utterance,
            self.lex,
            known_phrases=self.registry.domain_vocabulary(session.previous_module),
            previous_bot_question=last_response,
            registered_topics=self.view.topic_modules,
        )
        context = IntentContext(
            registered_topics=self.view.topic_modules,
            pending_topic=session.attrs.propose_topic,
        )
        intents = classify_intents(result, self.lex, context)

        # A pending open question means this turn is its answer: mine it
        # for preferences before deciding where to route.
        open_pending = bool(session.scope.get("_open_question.pending"))
        if open_pending:
            adaptation.record_open_answer(result, profile, self.view.topic_modules)
            session.scope.pop("_open_question.pending", None)

        decision = select_module(
            intents,
            (session.previous_module, session.previous_state),
            session.attrs,
            profile,
            self.view,
            self.order_table,
        )

        # Distress outranks topic routing: switch to the comfort flow
        # unless it is already running or the turn is functional.
        if (
            nlu.FineGrainIntent.NEG_FEELING in result.fine_grains
            and "comfort" in self.registry.descriptors
            and decision.reason is not SelectReason.FUNCTIONAL
            and session.previous_module != "comfort"
            and decision.selected_module != "comfort"
        ):
            decision = SelectorDecision(
                selected_module="comfort",
                reason=SelectReason.STRONG_INTENT,
                handoff=session.attrs.snapshot(),
            )

        pending_topic = session.attrs.propose_topic
        resolution = resolve_proposal(decision, session.attrs)
        proposal_event = None
        if resolution is not None and pending_topic is not None:
            proposal_event = {
                "topic": pending_topic,
                "accepted": resolution == "accepted",
            }
            profile.mark_topic_used(pending_topic)
            session.attrs.clear()

        selected = decision.selected_module
        routed_open = (
            open_pending
            and selected in self.view.topic_modules
            and selected != session.previous_module
            and decision.reason is SelectReason.PROPOSE_NEW
        )
        if decision.reason is SelectReason.ACCEPT_PROPOSAL:
            entry = "proposal_entry"
            entry_method = EntryMethod.TOPIC_PROPOSAL
        elif routed_open:
            entry = "open_question_entry"
            entry_method = EntryMethod.OPEN_QUESTION
        elif selected == session.previous_module:
            entry = None
            entry_method = EntryMethod.OTHER
        else:
            entry = "other_entry"
            entry_method = EntryMethod.OTHER

        tracker = fsm.Tracker(
            conversation_scope=session.scope,
            nlu=result,
            profile=profile,
            attrs=session.attrs,
            templates=self.registry.templates,
            bags=session.bags,
            rng=session.rng,
            lexicons=self.lex,
        )
        if resolution == "accepted":
            keywords = decision.handoff.propose_keywords
            if keywords:
                if isinstance(keywords, str):
                    keywords = [keywords]
                tracker.set(fsm.Scope.TURN, "_handoff_keywords", list(keywords))
        if decision.reason is SelectReason.FUNCTIONAL:
            tracker.set(fsm.Scope.TURN, "_functional_intents", list(intents))

        texts: list[str] = []
        paths: list[str] = []
        published = ModuleState.UNCLEAR
        ran_module = selected
        gate = ""
        reprompt_text = REPROMPT_TEXT
        try:
            first = fsm.run_turn(self.registry.flow_for(selected), tracker, entry=entry)
            texts.append(first.text)
            paths.extend(first.path)
            published = first.published
            if published is ModuleState.STOP and selected not in (
                "transition", "functional", "fallback"
            ):
                follow = fsm.run_turn(
                    self.registry.flow_for("transition"), tracker, entry="other_entry"
                )
                texts.append(follow.text)
                paths.extend(follow.path)
                published = follow.published
                ran_module = "transition"
        except Exception as err:  # noqa: BLE001 - a broken module must never sink a turn
            log.exception(
                "module %s failed on turn %d of %s",
                selected, session.turn_index, session.conversation_id,
            )
            scope = (
                FailureScope.SYSTEM
                if isinstance(err, (FlowError, ConvoKernelError))
                else FailureScope.MODULE
            )
            grains = [g for g in result.fine_grains if g is not nlu.FineGrainIntent.NONE]
            fallback = error_fallback(
                grains[0].value if grains else None, scope
            )
            texts = [fallback.text]
            paths = []
            published = ModuleState.UNCLEAR
            ran_module = selected
            reprompt_text = fallback.reprompt
            gate = "error_fallback"

        text = " ".join(t for t in texts if t).strip()
        if not text:
            fallback = error_fallback(None, FailureScope.SYSTEM)
            text = fallback.text
            reprompt_text = fallback.reprompt
            gate = gate or "error_fallback"

        if decision.reason is not SelectReason.FUNCTIONAL:
            session.previous_module = ran_module
            session.previous_state = (
                ModuleState.UNCLEAR if session.attrs.pending else published
            )

        adaptation.update_dominance(profile, result.dialog_acts)
        session.scope["_last_response"] = text

        rendered = tracker.get(fsm.Scope.TURN, "_rendered_keys")
        template_keys = tuple(rendered) if rendered is not fsm.ABSENT else ()

        trace = DebugTrace(
            detected_intents=tuple(_intent_label(i) for i in intents),
            selected_module=selected,
            fsm_path=tuple(paths),
            nlu_summary=tuple(result.summary()),
            gate=gate,
            template_keys=template_keys,
        )
        self.log_writer.append_turn(
            TurnRecord(
                conversation_id=session.conversation_id,
                turn_index=session.turn_index,
                module_id=selected,
                entry_method=entry_method,
                proposal_event=proposal_event,
            )
        )
        session.turn_index += 1
        session.last_trace = trace.to_dict()
        # Package first: the markup stage draws from the conversation
        # generator, and that draw must be part of the persisted state.
        response = self._package(
            session,
            text,
            reprompt_text,
            False,
            trace,
            template_keys[-1] if template_keys else "",
        )
        self._save(session, profile)
        return response
