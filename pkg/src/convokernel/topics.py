"""Topic modules: catalogs, the module registry, shared question handling,
and the domain handler kinds that shipped dialog flows are written in.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import acknowledgment, adaptation, fsm, nlu
from .dialog_manager import RegistryView, propose_transition
from .errors import PackValidationError
from .lexicons import Lexicons, normalize, stem_phrase, stems, tokenize
from .nlg import TemplateStore

PACK_DIR = Path(__file__).parent / "data" / "packs"

OPINION_QUESTION_FALLBACK = "Good question, I haven't thought about that before."

FOOD_SUBTOPICS = (
    "favorite-dish",
    "cooking",
    "cuisines",
    "growing-a-garden",
    "healthy-eating",
)

FASHION_DISMISSAL_THRESHOLD = 2

CORONA_KEYWORDS = frozenset({"corona virus", "coronavirus", "covid"})


# ---------------------------------------------------------------------------
# Catalog records.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MovieEntry:
    movie_id: str
    title: str
    keywords: frozenset[str]
    popularity: int


@dataclass(frozen=True)
class GameEntry:
    game_id: str
    title: str
    facts: tuple[str, ...]
    recommended: bool = False


@dataclass(frozen=True)
class NewsItem:
    item_id: str
    topic_keywords: tuple[str, ...]
    sentence_chunks: tuple[str, ...]
    debate_ref: str | None = None

    def __post_init__(self):
        if not self.sentence_chunks:
            raise ValueError("a news item needs at least one sentence chunk")

    @property
    def is_special_flow(self) -> bool:
        return any(k in CORONA_KEYWORDS for k in self.topic_keywords)


@dataclass(frozen=True)
class BackstoryEntry:
    patterns: tuple[re.Pattern, ...]
    answer: str


@dataclass(frozen=True)
class DebateTopic:
    topic_id: str
    topic: str
    pro: tuple[str, ...]
    con: tuple[str, ...]


@dataclass
class ContentLibrary:
    """All ingested catalog content, parsed into typed records."""

    movies: list[MovieEntry] = field(default_factory=list)
    games: list[GameEntry] = field(default_factory=list)
    news: list[NewsItem] = field(default_factory=list)
    paa: dict[str, list[dict]] = field(default_factory=dict)
    debates: dict[str, DebateTopic] = field(default_factory=dict)
    backstory: list[BackstoryEntry] = field(default_factory=list)
    facts: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_payloads(
        cls,
        movies: dict | None = None,
        games: dict | None = None,
        news: dict | None = None,
        paa: dict | None = None,
        debates: dict | None = None,
        backstory: dict | None = None,
        facts: dict | None = None,
    ) -> "ContentLibrary":
        lib = cls()
        if movies:
            lib.movies = [
                MovieEntry(
                    movie_id=m["id"],
                    title=m["title"],
                    keywords=frozenset(m["keywords"]),
                    popularity=m["popularity"],
                )
                for m in movies["movies"]
            ]
        if games:
            lib.games = [
                GameEntry(
                    game_id=g["id"],
                    title=g["title"],
                    facts=tuple(g.get("facts", ())),
                    recommended=bool(g.get("recommended", False)),
                )
                for g in games["games"]
            ]
        if news:
            lib.news = [
                NewsItem(
                    item_id=n["id"],
                    topic_keywords=tuple(n["topic_keywords"]),
                    sentence_chunks=tuple(n["chunks"]),
                    debate_ref=n.get("debate_ref"),
                )
                for n in news["items"]
            ]
        if paa:
            lib.paa = {word: list(entries) for word, entries in paa["topics"].items()}
        if debates:
            lib.debates = {
                topic_id: DebateTopic(
                    topic_id=topic_id,
                    topic=entry["topic"],
                    pro=tuple(entry["pro"]),
                    con=tuple(entry["con"]),
                )
                for topic_id, entry in debates["topics"].items()
            }
        if backstory:
            lib.backstory = [
                BackstoryEntry(
                    patterns=tuple(
                        re.compile(p, re.IGNORECASE) for p in entry["patterns"]
                    ),
                    answer=entry["answer"],
                )
                for entry in backstory["entries"]
            ]
        if facts:
            lib.facts = dict(facts["facts"])
        return lib

    @classmethod
    def load(cls, packs=None) -> "ContentLibrary":
        """Active pack versions win; the shipped package data is the default."""

        def payload(kind_value: str, filename: str) -> dict | None:
            if packs is not None:
                from .content import PackKind

                doc = packs.load_active(PackKind(kind_value))
                if doc is not None:
                    return doc
            path = PACK_DIR / filename
            if path.is_file():
                return json.loads(path.read_text(encoding="utf-8"))
            return None

        return cls.from_payloads(
            movies=payload("movie_catalog", "movies.json"),
            games=payload("game_catalog", "games.json"),
            news=payload("news", "news.json"),
            paa=payload("paa", "paa.json"),
            debates=payload("debate", "debates.json"),
            backstory=payload("backstory", "backstory.json"),
            facts=payload("facts", "facts.json"),
        )


# ---------------------------------------------------------------------------
# Catalog matching helpers.
# ---------------------------------------------------------------------------

def _phrase_in_text(phrase: str, text_stems: list[str]) -> bool:
    needle = stems(tokenize(phrase))
    if not needle:
        return False
    n = len(needle)
    return any(text_stems[i : i + n] == needle for i in range(len(text_stems) - n + 1))


def movie_in_text(text: str, catalog: Sequence[MovieEntry]) -> MovieEntry | None:
    """Longest catalog title mentioned in the text, if any."""
    text_stems = stems(tokenize(text))
    best: MovieEntry | None = None
    best_len = 0
    for movie in catalog:
        title_len = len(tokenize(movie.title))
        if title_len > best_len and _phrase_in_text(movie.title, text_stems):
            best, best_len = movie, title_len
    return best


def game_in_text(text: str, catalog: Sequence[GameEntry]) -> GameEntry | None:
    text_stems = stems(tokenize(text))
    best: GameEntry | None = None
    best_len = 0
    for game in catalog:
        title_len = len(tokenize(game.title))
        if title_len > best_len and _phrase_in_text(game.title, text_stems):
            best, best_len = game, title_len
    return best


# ---------------------------------------------------------------------------
# Movie logic.
# ---------------------------------------------------------------------------

def similar_movie(
    current: str | None,
    catalog: Sequence[MovieEntry],
    discussed: frozenset[str] | set[str] = frozenset(),
) -> MovieEntry | None:
    """Most keyword-similar undiscussed movie; popularity then id break ties.

    With no keyword overlap anywhere (or no current movie) the most
    popular undiscussed movie wins. Returns None when the catalog is
    exhausted.
    """
    current_keywords: frozenset[str] = frozenset()
    for movie in catalog:
        if movie.movie_id == current:
            current_keywords = movie.keywords
            break
    candidates = [
        m for m in catalog if m.movie_id != current and m.movie_id not in discussed
    ]
    if not candidates:
        return None
    return sorted(
        candidates,
        key=lambda m: (-len(m.keywords & current_keywords), -m.popularity, m.movie_id),
    )[0]


def movie_next_action(tracker: fsm.Tracker, catalog: Sequence[MovieEntry]):
    """Alternate between asking for a movie and proposing one.

    Returns ("ASK_USER", None) or ("PROPOSE", movie). The first movie
    turn and every turn after a proposal ask; every turn after an ask
    proposes — similar to the user's last movie when one is known,
    otherwise the most popular undiscussed title. An empty or exhausted
    catalog always asks.
    """
    if not catalog:
        return ("ASK_USER", None)
    last = tracker.get(fsm.Scope.CONVERSATION, "movie.last_action")
    if last is fsm.ABSENT or last == "propose":
        return ("ASK_USER", None)
    discussed = set(tracker.get(fsm.Scope.CONVERSATION, "movie.discussed") or [])
    current = tracker.get(fsm.Scope.CONVERSATION, "movie.current")
    current_id = None if current is fsm.ABSENT else current
    movie = similar_movie(current_id, catalog, frozenset(discussed))
    if movie is None:
        return ("ASK_USER", None)
    return ("PROPOSE", movie)


# ---------------------------------------------------------------------------
# Game logic.
# ---------------------------------------------------------------------------

def game_decision(
    result: nlu.NluResult | None,
    catalog: Sequence[GameEntry],
    tracker: fsm.Tracker,
    blocked_stems: frozenset[str] | set[str] = frozenset(),
):
    """Decide the games move for this turn.

    ("IN_DEPTH", game) when a catalog game is mentioned, ("ELICIT",
    phrase) for an unknown title worth hearing about, ("RECOMMEND",
    game-or-None) otherwise. `blocked_stems` suppresses phrases that are
    really topic words (e.g. "books"), which must never be elicited as
    game titles.
    """
    text = result.utterance if result else ""
    known = game_in_text(text, catalog)
    if known is not None:
        return ("IN_DEPTH", known)

    described = set(tracker.get(fsm.Scope.CONVERSATION, "game.described") or [])
    no_elicit = tracker.get(fsm.Scope.TURN, "_game.no_elicit") is not fsm.ABSENT
    fine_grains = set(result.fine_grains) if result else set()
    gave_nothing = fine_grains & {
        nlu.FineGrainIntent.ANS_UNKNOWN,
        nlu.FineGrainIntent.ANS_NO,
        nlu.FineGrainIntent.ANS_DISLIKE,
    }
    if result and not gave_nothing and not no_elicit:
        for phrase in result.key_phrases:
            key = stem_phrase(phrase)
            if not key or key in blocked_stems or key in described:
                continue
            # A phrase that merely wraps a registered topic word
            # ("mostly books") is topical chatter, not a game title.
            if any(word in blocked_stems for word in key.split()):
                continue
            return ("ELICIT", phrase)

    recommended_used = set(
        tracker.get(fsm.Scope.CONVERSATION, "game.recommended_used") or []
    )
    for game in catalog:
        if game.recommended and game.game_id not in recommended_used:
            return ("RECOMMEND", game)
    return ("RECOMMEND", None)


# ---------------------------------------------------------------------------
# Food logic.
# ---------------------------------------------------------------------------

def food_subtopic_order(
    discussed: set[str] | frozenset[str],
    order: Sequence[str] = FOOD_SUBTOPICS,
) -> str | None:
    """First undiscussed subtopic in fixed interest order; None when spent."""
    for subtopic in order:
        if subtopic not in discussed:
            return subtopic
    return None


# ---------------------------------------------------------------------------
# News logic.
# ---------------------------------------------------------------------------

def _chunk_key_phrase(chunk: str, lex: Lexicons) -> str:
    phrases = nlu.extract_key_phrases(nlu.Segment(normalize(chunk), 0), lex)
    if phrases:
        return phrases[0]
    content = [t for t in tokenize(chunk) if not lex.is_stop(t)]
    return " ".join(content[:2]) if content else "it"


def news_next_chunk(
    item: NewsItem,
    position: int,
    lex: Lexicons,
    debates: Mapping[str, DebateTopic] | None = None,
) -> tuple[str, str]:
    """Chunk at `position` plus the question that bridges to what follows.

    Mid-article the question teases the next chunk's key phrase; the
    final chunk asks for the user's take, quoting one pro and one con
    opinion when a debate topic is attached.
    """
    if not 0 <= position < len(item.sentence_chunks):
        raise ValueError("position out of range")
    chunk = item.sentence_chunks[position]
    if position + 1 < len(item.sentence_chunks):
        key_phrase = _chunk_key_phrase(item.sentence_chunks[position + 1], lex)
        return chunk, f"Do you want to hear about {key_phrase}?"
    debate = debates.get(item.debate_ref) if (debates and item.debate_ref) else None
    if debate is not None:
        question = (
            f"Some people say {debate.pro[0]}, while others say "
            f"{debate.con[0]}. What do you think?"
        )
        return chunk, question
    return chunk, "That's the gist of it. Pretty interesting, right?"


# ---------------------------------------------------------------------------
# Fashion logic.
# ---------------------------------------------------------------------------

def _is_dismissive(result: nlu.NluResult | None) -> bool:
    if result is None:
        return False
    grains = set(result.fine_grains)
    if grains & {nlu.FineGrainIntent.ANS_NO, nlu.FineGrainIntent.ANS_DISLIKE}:
        return True
    return any(a.sentiment <= -0.2 for a in result.annotations)


def fashion_group_tracker(
    tracker: fsm.Tracker,
    result: nlu.NluResult | None,
    threshold: int = FASHION_DISMISSAL_THRESHOLD,
) -> str:
    """STAY or SWITCH_GROUP after `threshold` consecutive dismissals."""
    streak = tracker.get(fsm.Scope.CONVERSATION, "fashion.neg_streak")
    streak = 0 if streak is fsm.ABSENT else streak
    if _is_dismissive(result):
        streak += 1
        if streak >= threshold:
            tracker.set(fsm.Scope.CONVERSATION, "fashion.neg_streak", 0)
            return "SWITCH_GROUP"
    else:
        streak = 0
    tracker.set(fsm.Scope.CONVERSATION, "fashion.neg_streak", streak)
    return "STAY"


# ---------------------------------------------------------------------------
# Question handling.
# ---------------------------------------------------------------------------

def question_handler(
    question: str,
    dialog_act: nlu.DialogAct,
    library: ContentLibrary,
    lex: Lexicons,
) -> str:
    """Answer a user question through a four-stage cascade, never empty.

    Persona backstory patterns answer personal questions; the local
    fact table answers factual ones; everything else becomes an honest
    "I don't know …" rewrite — except opinion questions, which get a
    reflective fallback line.
    """
    text = normalize(question)
    for entry in library.backstory:
        if any(p.search(text) for p in entry.patterns):
            return entry.answer
    question_stems = " ".join(stems(tokenize(text)))
    for key, answer in library.facts.items():
        key_stems = stem_phrase(key)
        if key_stems and key_stems in question_stems:
            return answer
    if dialog_act is nlu.DialogAct.OPEN_QUESTION_OPINION:
        return OPINION_QUESTION_FALLBACK
    return acknowledgment.acknowledge_unanswerable_question(question, lex)


# ---------------------------------------------------------------------------
# Name capture (greeting).
# ---------------------------------------------------------------------------

_NAME_PATTERNS = [
    re.compile(r"\bmy name is ([a-z]+)"),
    re.compile(r"\bname's ([a-z]+)"),
    re.compile(r"\bcall me ([a-z]+)"),
    re.compile(r"\bi am ([a-z]+)"),
    re.compile(r"\bi'm ([a-z]+)"),
    re.compile(r"\bit's ([a-z]+)"),
    re.compile(r"\bit is ([a-z]+)"),
    re.compile(r"\bthis is ([a-z]+)"),
]

_NOT_NAMES = frozenset({
    "not", "no", "yes", "good", "fine", "okay", "ok", "sorry", "here",
    "me", "nobody", "gonna", "also", "still", "just", "really",
})


def extract_name(text: str, lex: Lexicons, name_db: Mapping[str, Any]) -> str | None:
    """Best-effort first-name extraction; None when nothing name-like."""
    text = normalize(text)
    for pattern in _NAME_PATTERNS:
        match = pattern.search(text)
        if match and match.group(1) not in _NOT_NAMES:
            return match.group(1)
    tokens = tokenize(text)
    if len(tokens) == 1 and tokens[0] not in _NOT_NAMES and not lex.is_stop(tokens[0]):
        return tokens[0]
    for token in tokens:
        if token in name_db and token not in _NOT_NAMES and not lex.is_stop(token):
            return token
    return None


# ---------------------------------------------------------------------------
# Module registry.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TopicModuleDescriptor:
    module_id: str
    display_name: str
    flow: fsm.FlowDefinition
    first_level_phrases: tuple[str, ...] = ()
    domain_vocabulary: tuple[str, ...] = ()
    subtopic_groups: Mapping[str, tuple[str, ...]] | None = None
    proposable: bool = True


# Per-module wiring that is behavior, not content: display names for
# proposal phrasing, proposability, related-topic handoffs, and extra
# topic-detector phrases beyond the shipped lexicon.
MODULE_CONFIG: dict[str, dict] = {
    "movie": {"display": "movies"},
    "music": {"display": "music"},
    "game": {"display": "video games"},
    "food": {"display": "food"},
    "news": {"display": "the news"},
    "sport": {"display": "sports"},
    "animal": {"display": "animals"},
    "fashion": {"display": "fashion"},
    "travel": {"display": "traveling"},
    "book": {"display": "books"},
    "tech": {"display": "technology"},
    "daily_life": {
        "display": "your day",
        "proposable": False,
        "extra_phrases": [
            "work", "school", "homework", "my day", "chores", "weekend plans",
            "outside", "outdoors", "walk", "walking", "park", "weather",
        ],
        "related": ["travel", "sport", "food"],
    },
    "comfort": {"display": "how you're feeling", "proposable": False},
    "greeting": {"display": "saying hi", "proposable": False},
    "transition": {"display": "something new", "proposable": False},
    "functional": {"display": "practical things", "proposable": False},
    "fallback": {"display": "anything", "proposable": False},
}


class TopicRegistry:
    """Owns the loaded topic modules and the shared content they draw on."""

    def __init__(
        self,
        library: ContentLibrary,
        templates: TemplateStore,
        lexicons: Lexicons,
        name_db: Mapping[str, Any] | None = None,
        open_question_banks=None,
        order_table: adaptation.TopicOrderTable | None = None,
        generator: Callable[[str], acknowledgment.GeneratorResponse | None] | None = None,
    ):
        self.library = library
        self.templates = templates
        self.lexicons = lexicons
        self.name_db = name_db if name_db is not None else adaptation.load_name_db()
        self.open_question_banks = (
            open_question_banks
            if open_question_banks is not None
            else adaptation.load_open_question_banks()
        )
        self.order_table = order_table or adaptation.default_topic_order()
        self.generator = generator
        self.descriptors: dict[str, TopicModuleDescriptor] = {}

    def register(self, descriptor: TopicModuleDescriptor) -> None:
        if descriptor.module_id in self.descriptors:
            raise ValueError(f"duplicate module id {descriptor.module_id!r}")
        self.descriptors[descriptor.module_id] = descriptor

    def descriptor(self, module_id: str) -> TopicModuleDescriptor:
        return self.descriptors[module_id]

    def flow_for(self, module_id: str) -> fsm.FlowDefinition:
        return self.descriptors[module_id].flow

    def display_name(self, module_id: str) -> str:
        if module_id in self.descriptors:
            return self.descriptors[module_id].display_name
        return MODULE_CONFIG.get(module_id, {}).get("display", module_id)

    def domain_vocabulary(self, module_id: str) -> tuple[str, ...]:
        descriptor = self.descriptors.get(module_id)
        return descriptor.domain_vocabulary if descriptor else ()

    def registry_view(self) -> RegistryView:
        named = {"greeting", "transition", "functional", "fallback"}
        topic_ids = set()
        other_ids = set()
        for module_id, descriptor in self.descriptors.items():
            if module_id in named:
                continue
            # Modules the selector may route topic mentions to: the
            # proposable rotation plus daily-life (reachable by phrase
            # only, never proposed).
            if descriptor.proposable or module_id == "daily_life":
                topic_ids.add(module_id)
            else:
                other_ids.add(module_id)
        return RegistryView(
            topic_modules=frozenset(topic_ids),
            other_modules=frozenset(other_ids),
        )

    def proposable_topics(self) -> frozenset[str]:
        return frozenset(
            module_id
            for module_id, descriptor in self.descriptors.items()
            if descriptor.proposable
        )

    def apply_first_level(self) -> None:
        """Merge each module's declared phrases into the topic detector."""
        for descriptor in self.descriptors.values():
            for phrase in descriptor.first_level_phrases:
                key = stem_phrase(phrase)
                if key and key not in self.lexicons.first_level:
                    self.lexicons.first_level[key] = descriptor.module_id


def _invert_first_level(lex: Lexicons) -> dict[str, list[str]]:
    by_topic: dict[str, list[str]] = {}
    for phrase_stem, topic in lex.first_level.items():
        by_topic.setdefault(topic, []).append(phrase_stem)
    return by_topic


def build_registry(
    packs=None,
    lex: Lexicons | None = None,
    generator=None,
) -> tuple[TopicRegistry, fsm.HandlerRegistry]:
    """Load templates, catalogs, and every shipped flow into a registry.

    Active pack versions (when a pack manager is given) override the
    package-data defaults. Raises PackValidationError if any shipped or
    ingested flow fails static validation.
    """
    lex = lex or Lexicons.load()
    library = ContentLibrary.load(packs)

    templates = TemplateStore()
    templates_payload = None
    if packs is not None:
        from .content import PackKind

        templates_payload = packs.load_active(PackKind.TEMPLATES)
    if templates_payload is None:
        templates_payload = json.loads(
            (PACK_DIR / "templates.json").read_text(encoding="utf-8")
        )
    templates.add_document(templates_payload["templates"], source="templates pack")

    registry = TopicRegistry(
        library=library, templates=templates, lexicons=lex, generator=generator
    )
    handlers = fsm.register_core_handlers(fsm.HandlerRegistry())
    register_domain_handlers(handlers, registry)

    flows_payload = None
    if packs is not None:
        from .content import PackKind

        flows_payload = packs.load_active(PackKind.FLOWS)
    if flows_payload is None:
        flows_payload = json.loads((PACK_DIR / "flows.json").read_text(encoding="utf-8"))

    phrase_map = _invert_first_level(lex)
    problems: list[str] = []
    for doc in flows_payload["flows"]:
        module_id = doc["module"]
        flow, defects = fsm.load_flow(doc, handlers)
        for defect in defects:
            problems.append(f"{module_id}: {defect.kind.value}: {defect.detail}")
        if defects:
            continue
        config = MODULE_CONFIG.get(module_id, {})
        vocabulary: tuple[str, ...] = ()
        if module_id == "movie":
            vocabulary = tuple(m.title for m in library.movies)
        elif module_id == "game":
            vocabulary = tuple(g.title for g in library.games)
        registry.register(
            TopicModuleDescriptor(
                module_id=module_id,
                display_name=config.get("display", module_id),
                flow=flow,
                first_level_phrases=tuple(
                    phrase_map.get(module_id, []) + list(config.get("extra_phrases", []))
                ),
                domain_vocabulary=vocabulary,
                subtopic_groups=None,
                proposable=config.get("proposable", True),
            )
        )
    if problems:
        raise PackValidationError("flows", problems)
    registry.apply_first_level()
    return registry, handlers


# ---------------------------------------------------------------------------
# Flow handler natives.
# ---------------------------------------------------------------------------

def _first_statement(result: nlu.NluResult | None) -> nlu.Annotation | None:
    if result is None:
        return None
    for annotation in result.annotations:
        if annotation.dialog_act in (
            nlu.DialogAct.STATEMENT,
            nlu.DialogAct.OPINION,
            nlu.DialogAct.ANSWER,
        ):
            return annotation
    return None


def _first_question(result: nlu.NluResult | None) -> nlu.Annotation | None:
    if result is None:
        return None
    for annotation in result.annotations:
        if annotation.dialog_act in (
            nlu.DialogAct.QUESTION,
            nlu.DialogAct.OPEN_QUESTION_OPINION,
        ):
            return annotation
    return None


def _ack_fragment(tracker: fsm.Tracker, registry: TopicRegistry, opener=None) -> str:
    """Shared statement-acknowledgment logic used by several natives."""
    annotation = _first_statement(tracker.nlu)
    if annotation is None:
        return ""
    templated = acknowledgment.templated_ack(annotation.fine_grain, annotation.segment.text)
    if templated is not None:
        return templated
    last_response = tracker.get(fsm.Scope.CONVERSATION, "_last_response")
    previous_question = "" if last_response is fsm.ABSENT else str(last_response)
    rule_text = acknowledgment.acknowledge_statement(
        annotation.segment.text,
        registry.lexicons,
        previous_bot_question=previous_question,
        opener=opener,
    )
    generated = registry.generator(annotation.segment.text) if registry.generator else None
    _, text = acknowledgment.topicality_select(
        rule_text, generated, annotation.segment.text, registry.lexicons
    )
    return text


def _tx(target: str, current_turn: bool = True) -> fsm.Transition:
    timing = (
        fsm.TransitionTiming.CURRENT_TURN
        if current_turn
        else fsm.TransitionTiming.NEXT_TURN
    )
    return fsm.Transition(target, timing)


def _counter_bump(tracker: fsm.Tracker, key: str) -> int:
    count = tracker.get(fsm.Scope.CONVERSATION, key)
    count = 0 if count is fsm.ABSENT else count
    tracker.set(fsm.Scope.CONVERSATION, key, count + 1)
    return count


def _conv_list(tracker: fsm.Tracker, key: str) -> list:
    value = tracker.get(fsm.Scope.CONVERSATION, key)
    if value is fsm.ABSENT:
        value = []
        tracker.set(fsm.Scope.CONVERSATION, key, value)
    return value


def register_domain_handlers(
    handlers: fsm.HandlerRegistry, registry: TopicRegistry
) -> fsm.HandlerRegistry:
    """Register every domain handler kind the shipped flows reference."""

    lex = registry.lexicons
    library = registry.library

    # -- acknowledgment / question answering ------------------------------

    def make_ack_statement(args):
        transition = args.get("_transitions", ())
        next_transition = transition[0] if transition else None

        def handler(tracker: fsm.Tracker):
            return _ack_fragment(tracker, registry, opener=args.get("opener")), next_transition

        return handler

    def make_answer_question(args):
        transition = args.get("_transitions", ())
        next_transition = transition[0] if transition else None

        def handler(tracker: fsm.Tracker):
            annotation = _first_question(tracker.nlu)
            if annotation is None:
                return "", next_transition
            answer = question_handler(
                annotation.segment.text, annotation.dialog_act, library, lex
            )
            return answer, next_transition

        return handler

    # -- proposals and open questions --------------------------------------

    def make_propose_topic(args):
        def handler(tracker: fsm.Tracker):
            topic = fsm.resolve_slot_value(tracker, args["topic"])
            view = registry.registry_view()
            armed = propose_transition(
                tracker.attrs,
                topic,
                keywords=list(registry.descriptor(topic).first_level_phrases)
                if topic in registry.descriptors
                else [],
                registry=view,
            )
            if not armed:
                return "", None
            text = tracker.render(
                args.get("template", "transition.propose"),
                {"topic": registry.display_name(topic)},
            )
            return text, None

        return handler

    def make_open_question(args):
        transition = args.get("_transitions", ())
        next_transition = transition[0] if transition else None

        def handler(tracker: fsm.Tracker):
            if args.get("template"):
                text = tracker.render(args["template"])
                category = "custom"
            else:
                cat, text = adaptation.select_open_question(
                    tracker.profile,
                    registry.open_question_banks,
                    bags=tracker.bags,
                    rng=tracker.rng,
                )
                category = cat.value
            tracker.set(fsm.Scope.CONVERSATION, "_open_question.pending", category)
            return text, next_transition

        return handler

    def make_transition_turn(args):
        def handler(tracker: fsm.Tracker):
            profile = tracker.profile
            strategy = adaptation.transition_strategy(profile)
            if strategy is adaptation.TransitionStrategy.OPEN_QUESTION:
                category, text = adaptation.select_open_question(
                    profile,
                    registry.open_question_banks,
                    bags=tracker.bags,
                    rng=tracker.rng,
                )
                tracker.set(
                    fsm.Scope.CONVERSATION, "_open_question.pending", category.value
                )
                return text, None
            topic = adaptation.select_next_topic(profile, registry.order_table)
            view = registry.registry_view()
            propose_transition(
                tracker.attrs,
                topic,
                keywords=list(registry.descriptor(topic).first_level_phrases)
                if topic in registry.descriptors
                else [],
                registry=view,
            )
            text = tracker.render(
                "transition.propose", {"topic": registry.display_name(topic)}
            )
            return text, None

        return handler

    def make_propose_related(args):
        def handler(tracker: fsm.Tracker):
            profile = tracker.profile
            related = args.get("related", [])
            topic = next(
                (
                    t
                    for t in related
                    if t in registry.descriptors and t not in profile.used_topics
                ),
                None,
            )
            if topic is None:
                topic = adaptation.select_next_topic(profile, registry.order_table)
            propose_transition(
                tracker.attrs,
                topic,
                keywords=list(registry.descriptor(topic).first_level_phrases)
                if topic in registry.descriptors
                else [],
                registry=registry.registry_view(),
            )
            text = tracker.render(
                "transition.propose_related", {"topic": registry.display_name(topic)}
            )
            return text, None

        return handler

    # -- greeting ----------------------------------------------------------

    def make_greeting_open(args):
        def handler(tracker: fsm.Tracker):
            profile = tracker.profile
            if profile is not None and profile.returning and profile.name:
                text = tracker.render(
                    "greeting.welcome_back", {"name": profile.name.capitalize()}
                )
                return text, _tx(args["confirm"], current_turn=False)
            text = tracker.render("greeting.ask_name")
            return text, _tx(args["capture"], current_turn=False)

        return handler

    def make_greeting_capture(args):
        def handler(tracker: fsm.Tracker):
            profile = tracker.profile
            name = extract_name(tracker.user_text, lex, registry.name_db)
            if name is None:
                return "", _tx(args["next"])
            if profile is not None:
                profile.name = name
                profile.predicted_gender = adaptation.predict_gender(
                    name, registry.name_db
                )
            text = tracker.render("greeting.nice_meet", {"name": name.capitalize()})
            return text, _tx(args["next"])

        return handler

    # -- generic question banks and PAA -------------------------------------

    def make_topic_question(args):
        def handler(tracker: fsm.Tracker):
            template = args["template"]
            asked = tracker.get(fsm.Scope.CONVERSATION, f"_asked.{template}")
            asked = 0 if asked is fsm.ABSENT else asked
            if asked >= registry.templates.surface_count(template):
                return "", _tx(args["wrap"])
            tracker.set(fsm.Scope.CONVERSATION, f"_asked.{template}", asked + 1)
            return tracker.render(template), _tx(args["react"], current_turn=False)

        return handler

    def make_paa_offer(args):
        def handler(tracker: fsm.Tracker):
            result = tracker.nlu
            used = _conv_list(tracker, "_paa.used")
            candidates: list[str] = []
            if result is not None:
                candidates.extend(result.key_phrases)
                candidates.extend(tokenize(result.utterance))
            for candidate in candidates:
                key = stem_phrase(candidate)
                for word, entries in library.paa.items():
                    if stem_phrase(word) == key and word not in used and entries:
                        used.append(word)
                        entry = entries[0]
                        tracker.set(fsm.Scope.CONVERSATION, "_paa.answer", entry["a"])
                        text = tracker.render(
                            "common.paa_offer", {"question": entry["q"]}
                        )
                        return text, _tx(args["branch"], current_turn=False)
            return "", _tx(args["skip"])

        return handler

    def make_paa_answer(args):
        def handler(tracker: fsm.Tracker):
            answer = tracker.get(fsm.Scope.CONVERSATION, "_paa.answer")
            tracker.set(fsm.Scope.CONVERSATION, "_paa.answer", "")
            fragment = str(answer) if answer and answer is not fsm.ABSENT else ""
            return fragment, _tx(args["next"])

        return handler

    # -- movie ---------------------------------------------------------------

    def make_movie_turn(args):
        def handler(tracker: fsm.Tracker):
            rounds = _counter_bump(tracker, "movie.rounds")
            if rounds >= args.get("max_rounds", 5):
                return "", _tx(args["wrap"])
            action, movie = movie_next_action(tracker, library.movies)
            if action == "PROPOSE" and movie is not None:
                tracker.set(fsm.Scope.CONVERSATION, "movie.last_action", "propose")
                tracker.set(fsm.Scope.CONVERSATION, "movie.current", movie.movie_id)
                discussed = _conv_list(tracker, "movie.discussed")
                discussed.append(movie.movie_id)
                keyword = sorted(movie.keywords)[0] if movie.keywords else "its story"
                text = tracker.render(
                    "movie.propose", {"title": movie.title, "keyword": keyword}
                )
                return text, _tx(args["react"], current_turn=False)
            tracker.set(fsm.Scope.CONVERSATION, "movie.last_action", "ask")
            return tracker.render("movie.ask"), _tx(args["react"], current_turn=False)

        return handler

    def make_movie_react(args):
        def handler(tracker: fsm.Tracker):
            named = movie_in_text(tracker.user_text, library.movies)
            if named is not None:
                tracker.set(fsm.Scope.CONVERSATION, "movie.current", named.movie_id)
                discussed = _conv_list(tracker, "movie.discussed")
                if named.movie_id not in discussed:
                    discussed.append(named.movie_id)
                text = tracker.render("movie.react_known", {"title": named.title})
                return text, _tx(args["next"])
            return _ack_fragment(tracker, registry), _tx(args["next"])

        return handler

    # -- games ----------------------------------------------------------------

    def make_game_turn(args):
        def handler(tracker: fsm.Tracker):
            rounds = _counter_bump(tracker, "game.rounds")
            if rounds >= args.get("max_rounds", 6):
                return "", _tx(args["wrap"])
            blocked = frozenset(lex.first_level.keys())
            decision, payload = game_decision(
                tracker.nlu, library.games, tracker, blocked
            )
            if decision == "IN_DEPTH":
                game = payload
                fact_key = f"game.facts.{game.game_id}"
                index = tracker.get(fsm.Scope.CONVERSATION, fact_key)
                index = 0 if index is fsm.ABSENT else index
                if game.facts and index < len(game.facts):
                    tracker.set(fsm.Scope.CONVERSATION, fact_key, index + 1)
                    text = tracker.render(
                        "game.in_depth",
                        {"title": game.title, "fact": game.facts[index]},
                    )
                    return text, _tx(args["react"], current_turn=False)
                decision, payload = "RECOMMEND", None
            if decision == "ELICIT":
                phrase = payload
                described = _conv_list(tracker, "game.described")
                described.append(stem_phrase(phrase))
                tracker.set(fsm.Scope.CONVERSATION, "game.elicit_pending", True)
                text = tracker.render("game.elicit", {"title": phrase})
                return text, _tx(args["describe"], current_turn=False)
            game = payload
            if game is None:
                recommended_used = set(_conv_list(tracker, "game.recommended_used"))
                game = next(
                    (
                        g
                        for g in library.games
                        if g.recommended and g.game_id not in recommended_used
                    ),
                    None,
                )
            if game is None:
                return "", _tx(args["wrap"])
            _conv_list(tracker, "game.recommended_used").append(game.game_id)
            fact = game.facts[0] if game.facts else "It's a lot of fun."
            text = tracker.render(
                "game.recommend", {"title": game.title, "fact": fact}
            )
            return text, _tx(args["react"], current_turn=False)

        return handler

    def make_game_describe(args):
        def handler(tracker: fsm.Tracker):
            tracker.set(fsm.Scope.CONVERSATION, "game.elicit_pending", False)
            tracker.set(fsm.Scope.TURN, "_game.no_elicit", True)
            opener = tracker.render("game.describe_opener")
            fragment = _ack_fragment(tracker, registry, opener=opener)
            if not fragment:
                fragment = tracker.render("game.describe_fallback")
            return fragment, _tx(args["next"])

        return handler

    # -- food -------------------------------------------------------------------

    def make_food_turn(args):
        def handler(tracker: fsm.Tracker):
            discussed = set(_conv_list(tracker, "food.discussed"))
            subtopic = food_subtopic_order(discussed)
            if subtopic is None:
                return "", _tx(args["wrap"])
            _conv_list(tracker, "food.discussed").append(subtopic)
            text = tracker.render(f"food.{subtopic}")
            return text, _tx(args["react"], current_turn=False)

        return handler

    # -- news -------------------------------------------------------------------

    def make_news_pick(args):
        def handler(tracker: fsm.Tracker):
            done = set(_conv_list(tracker, "news.done"))
            available = [n for n in library.news if n.item_id not in done]
            if not available:
                return "", _tx(args["wrap"])
            wanted_stems: set[str] = set()
            handoff = tracker.get(fsm.Scope.TURN, "_handoff_keywords")
            if handoff is not fsm.ABSENT and handoff:
                wanted_stems.update(stem_phrase(k) for k in handoff)
            if tracker.nlu is not None:
                wanted_stems.update(stem_phrase(p) for p in tracker.nlu.key_phrases)
                wanted_stems.update(stems(tokenize(tracker.nlu.utterance)))
            item = next(
                (
                    n
                    for n in available
                    if any(stem_phrase(k) in wanted_stems for k in n.topic_keywords)
                ),
                available[0],
            )
            tracker.set(fsm.Scope.CONVERSATION, "news.item", item.item_id)
            tracker.set(fsm.Scope.CONVERSATION, "news.pos", 0)
            corona_done = tracker.get(fsm.Scope.CONVERSATION, "news.corona_done")
            if item.is_special_flow and corona_done is fsm.ABSENT:
                tracker.set(fsm.Scope.CONVERSATION, "news.corona_done", True)
                return "", _tx(args["special"])
            return "", _tx(args["chunk"])

        return handler

    def make_news_chunk(args):
        def handler(tracker: fsm.Tracker):
            item_id = tracker.get(fsm.Scope.CONVERSATION, "news.item")
            item = next((n for n in library.news if n.item_id == item_id), None)
            if item is None:
                return "", _tx(args["wrap"])
            position = tracker.get(fsm.Scope.CONVERSATION, "news.pos")
            position = 0 if position is fsm.ABSENT else position
            if position >= len(item.sentence_chunks):
                return "", _tx(args["next_item"])
            chunk, question = news_next_chunk(item, position, lex, library.debates)
            tracker.set(fsm.Scope.CONVERSATION, "news.pos", position + 1)
            fragment = f"{chunk} {question}"
            if position + 1 >= len(item.sentence_chunks):
                done = _conv_list(tracker, "news.done")
                if item.item_id not in done:
                    done.append(item.item_id)
                if item.debate_ref and item.debate_ref in library.debates:
                    return fragment, _tx(args["debate"], current_turn=False)
                return fragment, _tx(args["final"], current_turn=False)
            return fragment, _tx(args["more"], current_turn=False)

        return handler

    # -- fashion -------------------------------------------------------------------

    def make_fashion_turn(args):
        groups: dict[str, list[str]] = args["groups"]
        group_order = list(groups)

        def next_group(current: str, done: set[str]) -> str | None:
            start = group_order.index(current)
            for offset in range(1, len(group_order) + 1):
                candidate = group_order[(start + offset) % len(group_order)]
                if candidate != current and candidate not in done:
                    return candidate
            return None

        def handler(tracker: fsm.Tracker):
            done = set(_conv_list(tracker, "fashion.groups_done"))
            current = tracker.get(fsm.Scope.CONVERSATION, "fashion.group")
            current = group_order[0] if current is fsm.ABSENT else current
            decision = fashion_group_tracker(tracker, tracker.nlu)
            if decision == "SWITCH_GROUP":
                done_list = _conv_list(tracker, "fashion.groups_done")
                if current not in done_list:
                    done_list.append(current)
                switched = next_group(current, set(done_list))
                if switched is None:
                    return "", _tx(args["wrap"])
                current = switched
            index_key = f"fashion.idx.{current}"
            index = tracker.get(fsm.Scope.CONVERSATION, index_key)
            index = 0 if index is fsm.ABSENT else index
            while index >= len(groups[current]):
                done_list = _conv_list(tracker, "fashion.groups_done")
                if current not in done_list:
                    done_list.append(current)
                advanced = next_group(current, set(done_list))
                if advanced is None:
                    return "", _tx(args["wrap"])
                current = advanced
                index_key = f"fashion.idx.{current}"
                index = tracker.get(fsm.Scope.CONVERSATION, index_key)
                index = 0 if index is fsm.ABSENT else index
            tracker.set(fsm.Scope.CONVERSATION, "fashion.group", current)
            tracker.set(fsm.Scope.CONVERSATION, index_key, index + 1)
            return groups[current][index], _tx(args["react"], current_turn=False)

        return handler

    # -- functional ------------------------------------------------------------------

    def make_functional_turn(args):
        def handler(tracker: fsm.Tracker):
            intents = tracker.get(fsm.Scope.TURN, "_functional_intents")
            intents = [] if intents is fsm.ABSENT else list(intents)
            from . import dialog_manager as dm

            for intent in intents:
                if isinstance(intent, dm.Clarification):
                    last = tracker.get(fsm.Scope.CONVERSATION, "_last_response")
                    if last is fsm.ABSENT or not last:
                        return tracker.render("functional.repeat_nothing"), None
                    return (
                        tracker.render("functional.repeat", {"last": str(last)}),
                        None,
                    )
            for intent in intents:
                if isinstance(intent, dm.DeviceRequest):
                    if intent.topic and intent.topic in registry.descriptors:
                        propose_transition(
                            tracker.attrs,
                            intent.topic,
                            keywords=list(intent.keywords or ())
                            or list(registry.descriptor(intent.topic).first_level_phrases),
                            registry=registry.registry_view(),
                        )
                        text = tracker.render(
                            "functional.device_topic",
                            {"topic": registry.display_name(intent.topic)},
                        )
                        return text, None
                    return tracker.render("functional.device"), None
            for intent in intents:
                if isinstance(intent, dm.IncompleteOrHesitant):
                    return tracker.render("functional.take_your_time"), None
            return tracker.render("functional.generic"), None

        return handler

    handlers.register("ack_statement", make_ack_statement)
    handlers.register("answer_question", make_answer_question)
    handlers.register("propose_topic", make_propose_topic)
    handlers.register("open_question", make_open_question)
    handlers.register("transition_turn", make_transition_turn)
    handlers.register("propose_related", make_propose_related)
    handlers.register("greeting_open", make_greeting_open)
    handlers.register("greeting_capture", make_greeting_capture)
    handlers.register("topic_question", make_topic_question)
    handlers.register("paa_offer", make_paa_offer)
    handlers.register("paa_answer", make_paa_answer)
    handlers.register("movie_turn", make_movie_turn)
    handlers.register("movie_react", make_movie_react)
    handlers.register("game_turn", make_game_turn)
    handlers.register("game_describe", make_game_describe)
    handlers.register("food_turn", make_food_turn)
    handlers.register("news_pick", make_news_pick)
    handlers.register("news_chunk", make_news_chunk)
    handlers.register("fashion_turn", make_fashion_turn)
    handlers.register("functional_turn", make_functional_turn)
    return handlers
