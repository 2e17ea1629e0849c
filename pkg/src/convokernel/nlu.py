"""Rule-based language understanding.

Deterministic annotators over normalized utterances: segmentation, dialog
acts, fine-grain intents, key-phrase extraction, sentiment, hierarchical
topic detection, incompleteness detection, and ellipsis completion. All
functions are pure — every bit of mutable context arrives as an argument —
so they are safe to run concurrently across conversations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from .lexicons import Lexicons, stem, stems, tokenize

SEGMENT_MARKERS = ("and", "but", "because", "so")


class DialogAct(Enum):
    QUESTION = "QUESTION"
    COMMAND = "COMMAND"
    OPINION = "OPINION"
    STATEMENT = "STATEMENT"
    OPEN_QUESTION_OPINION = "OPEN_QUESTION_OPINION"
    ANSWER = "ANSWER"
    OTHER = "OTHER"


class FineGrainIntent(Enum):
    ANS_LIKE = "ans_like"
    ANS_DISLIKE = "ans_dislike"
    ANS_UNKNOWN = "ans_unknown"
    ANS_YES = "ans_yes"
    ANS_NO = "ans_no"
    HESITANT = "hesitant"
    NEG_FEELING = "neg_feeling"
    NONE = "none"


class TopicSource(Enum):
    FIRST_LEVEL_DB = "FIRST_LEVEL_DB"
    SECOND_LEVEL_DETECTOR = "SECOND_LEVEL_DETECTOR"


@dataclass(frozen=True)
class Segment:
    text: str
    index: int


@dataclass(frozen=True)
class TopicCandidate:
    topic: str
    confidence: float
    source_level: TopicSource
    trigger_phrase: str


@dataclass(frozen=True)
class EllipsisResult:
    text: str
    completed: bool


@dataclass
class Annotation:
    segment: Segment
    dialog_act: DialogAct
    fine_grain: FineGrainIntent
    key_phrases: list[str]
    sentiment: float
    topic_candidates: list[TopicCandidate]
    incomplete: bool
    completed_text: str = ""

    def summary(self) -> dict:
        return {
            "segment": self.segment.text,
            "dialog_act": self.dialog_act.value,
            "fine_grain": self.fine_grain.value,
            "key_phrases": list(self.key_phrases),
            "sentiment": self.sentiment,
            "topics": [
                {"topic": c.topic, "confidence": c.confidence, "trigger": c.trigger_phrase}
                for c in self.topic_candidates
            ],
            "incomplete": self.incomplete,
        }


# --------------------------------------------------------------- segmentation

def segment_utterance(utterance: str, lex: Lexicons) -> list[Segment]:
    """Split on and/but/because/so when both sides look like clauses.

    A side qualifies when it holds a subject-like token (personal pronoun or
    person noun) and at least two tokens; otherwise the marker is ordinary
    coordination ("cats and dogs") and no split happens.
    """
    tokens = tokenize(utterance)
    if not tokens:
        return [Segment("", 0)]

    def subject_like(side: list[str]) -> bool:
        return len(side) >= 2 and any(
            t in lex.subject_pronouns or t in lex.person_nouns for t in side
        )

    pieces: list[list[str]] = []
    start = 0
    for i, tok in enumerate(tokens):
        if tok in SEGMENT_MARKERS and i > start:
            left = tokens[start:i]
            right = tokens[i + 1 :]
            if subject_like(left) and subject_like(right):
                pieces.append(left)
                start = i + 1
    pieces.append(tokens[start:])
    return [Segment(" ".join(p), idx) for idx, p in enumerate(pieces) if p]


# ---------------------------------------------------------------- dialog acts

_OPEN_QUESTION_OPINION = [
    re.compile(p)
    for p in (
        r"^what do you think( about| of)?\b",
        r"^how do you feel( about)?\b",
        r"^what('s| is) your (opinion|take|view)\b",
        r"\bdo you think\b",
    )
]
_OPINION_MARKERS = re.compile(
    r"\bi (think|believe|guess|feel)\b"
    r"|\bi (really |kinda |kind of )?(like|love|hate|enjoy|prefer|dislike)\b"
    r"|\bi (don't|do not|dont) (like|love|enjoy)\b"
    r"|\bmy favorite\b"
    r"|\bi('m| am) (a (big |huge )?fan|not a (big |huge )?fan|into)\b"
)
_SHORT_ANSWER = re.compile(
    r"^(yes|yeah|yep|yup|no|nope|nah|sure|okay|ok|maybe|of course|not really"
    r"|nothing( much)?|not much|i (don't|do not|dont) know|no idea|not sure)$"
)


def classify_dialog_act(segment: Segment, lex: Lexicons) -> DialogAct:
    text = segment.text
    tokens = tokenize(text)
    if not tokens:
        return DialogAct.OTHER
    if all(t in lex.filler_unigrams or t in ("hmm", "mmm", "er") for t in tokens):
        return DialogAct.OTHER
    for pat in _OPEN_QUESTION_OPINION:
        if pat.search(text):
            return DialogAct.OPEN_QUESTION_OPINION
    first = tokens[0]
    if first in lex.wh_words or first.split("'")[0] in lex.wh_words or first in lex.aux_words:
        return DialogAct.QUESTION
    if first in ("let's", "lets", "alexa") or first in lex.imperative_verbs:
        return DialogAct.COMMAND
    if re.match(r"^volume (up|down)\b", text) or re.match(r"^(set|play) ", text):
        return DialogAct.COMMAND
    if _OPINION_MARKERS.search(text):
        return DialogAct.OPINION
    if _SHORT_ANSWER.match(text):
        return DialogAct.ANSWER
    return DialogAct.STATEMENT


# ----------------------------------------------------------- fine-grain intents

_FINE_GRAIN_PATTERNS: list[tuple[FineGrainIntent, re.Pattern]] = [
    (
        FineGrainIntent.NEG_FEELING,
        re.compile(
            r"\bi('m| am) (feeling )?(so |really |very |pretty )?"
            r"(sad|lonely|depressed|down|upset|unhappy|miserable|stressed|anxious|scared|heartbroken)\b"
            r"|\bi feel (so |really |very |pretty )?(sad|bad|lonely|depressed|down|terrible|awful|horrible|miserable|stressed|anxious|scared)\b"
            r"|\b(died|passed away)\b"
            r"|\bi('m| am) not (feeling |doing )?(good|well|great|okay|ok)\b"
            r"|\bi('m| am) having a (bad|rough|hard|terrible) (day|week|time)\b"
        ),
    ),
    (
        FineGrainIntent.ANS_UNKNOWN,
        re.compile(
            r"\bi (don't|do not|dont) know\b|\bno idea\b|\bnot sure\b"
            r"|\bi have no (idea|clue)\b|^(dunno|idk)\b|^(nothing( much)?|not much)$"
        ),
    ),
    (
        FineGrainIntent.ANS_DISLIKE,
        re.compile(
            r"\bi (don't|do not|dont) (really )?(like|love|enjoy)\b|\bi hate\b"
            r"|\bi dislike\b|\bnot a (big |huge )?fan\b|\bi can't stand\b"
        ),
    ),
    (
        FineGrainIntent.ANS_LIKE,
        re.compile(
            r"\bi (really |kinda |kind of |absolutely )?(like|love|enjoy|adore)\b"
            r"|\bmy favorite\b|\bi('m| am) a (big |huge )?fan\b"
        ),
    ),
    (
        FineGrainIntent.ANS_NO,
        re.compile(
            r"^(no|nope|nah|no way|no thanks|no thank you|not really|not (right )?now"
            r"|i('d| would) rather not|i (don't|do not|dont) (want|think so)|pass)\b"
            r"|\bnot interested\b"
        ),
    ),
    (
        FineGrainIntent.ANS_YES,
        re.compile(
            r"^(yes|yeah|yep|yup|sure|ok|okay|of course|definitely|absolutely|certainly"
            r"|alright|all right|sounds (good|great|fun|awesome|interesting)|why not"
            r"|go ahead|i('d| would) (love|like) (to|that)|please do|let's do it"
            r"|tell me( more)?)\b"
        ),
    ),
    (
        FineGrainIntent.HESITANT,
        re.compile(
            r"^(hmm+|umm+|uhh+|mmm+|uh|um|er)$|\blet me think\b|^(maybe|i guess( so)?|well)$"
        ),
    ),
]


def classify_fine_grain(segment: Segment) -> FineGrainIntent:
    for intent, pattern in _FINE_GRAIN_PATTERNS:
        if pattern.search(segment.text):
            return intent
    return FineGrainIntent.NONE


# ------------------------------------------------------------- incompleteness

_HESITANCY_PHRASES = ("let me think", "hold on", "wait a", "give me a second")


def detect_incomplete(segment: Segment, lex: Lexicons) -> bool:
    tokens = tokenize(segment.text)
    if not tokens:
        return False
    if any(ph in segment.text for ph in _HESITANCY_PHRASES):
        return True
    return tokens[-1] in lex.dangling_enders


# ---------------------------------------------------------------- key phrases

def _strip_fillers(tokens: list[str], lex: Lexicons) -> list[str]:
    kept: list[str] = []
    i = 0
    while i < len(tokens):
        pair = tuple(tokens[i : i + 2])
        if len(pair) == 2 and pair in lex.filler_bigrams:
            i += 2
            continue
        tok = tokens[i]
        if tok in lex.filler_unigrams:
            i += 1
            continue
        if tok in lex.filler_non_verb and not _verb_position(kept):
            i += 1
            continue
        kept.append(tok)
        i += 1
    return kept


def _verb_position(preceding: list[str]) -> bool:
    """'like' acts as a verb right after a subject ("i like...") or 'would'."""
    if not preceding:
        return False
    prev = preceding[-1]
    return prev in ("i", "you", "we", "they", "he", "she", "it", "would", "i'd", "you'd")


def extract_key_phrases(
    segment: Segment, lex: Lexicons, known_phrases: tuple[str, ...] | list[str] = ()
) -> list[str]:
    """Noun-span candidates: catalog entities longest-first, then content runs.

    Fillers are stripped; a measure noun directly after a wh-word is dropped
    ("what YEAR was..."), and an utterance-final past participle following an
    auxiliary is dropped ("...was julius caesar MURDERED").
    """
    tokens = _strip_fillers(tokenize(segment.text), lex)
    if not tokens:
        return []
    token_stems = stems(tokens)
    consumed = [False] * len(tokens)
    found: list[tuple[int, str]] = []

    ordered = sorted(set(known_phrases), key=lambda p: -len(tokenize(p)))
    for phrase in ordered:
        p_stems = stems(tokenize(phrase))
        length = len(p_stems)
        if length == 0:
            continue
        for s in range(0, len(tokens) - length + 1):
            if any(consumed[s : s + length]):
                continue
            if token_stems[s : s + length] == p_stems:
                found.append((s, " ".join(tokens[s : s + length])))
                for j in range(s, s + length):
                    consumed[j] = True

    blocked = lex.stop_words | lex.phrase_blockers
    run: list[int] = []
    runs: list[list[int]] = []
    for idx, tok in enumerate(tokens):
        if consumed[idx] or tok in blocked:
            if run:
                runs.append(run)
                run = []
            continue
        run.append(idx)
    if run:
        runs.append(run)

    has_aux = any(t in lex.aux_words for t in tokens)
    for run in runs:
        indices = list(run)
        first = indices[0]
        if (
            tokens[first] in lex.wh_focus_nouns
            and first > 0
            and tokens[first - 1] in lex.wh_words
        ):
            indices = indices[1:]
        if indices:
            last = indices[-1]
            word = tokens[last]
            if (
                last == len(tokens) - 1
                and has_aux
                and word.endswith("ed")
                and len(word) > 4
                and any(tokens[k] in lex.aux_words for k in range(0, last))
            ):
                indices = indices[:-1]
        if indices:
            found.append((indices[0], " ".join(tokens[i] for i in indices)))

    found.sort(key=lambda pair: pair[0])
    return [surface for _, surface in found]


# ------------------------------------------------------------------ sentiment

def sentiment_score(segment: Segment, lex: Lexicons) -> float:
    tokens = tokenize(segment.text)
    scores: list[float] = []
    for j, tok in enumerate(tokens):
        polarity = lex.sentiment.get(stem(tok))
        if polarity is None:
            continue
        window = tokens[max(0, j - lex.negation_window) : j]
        if any(w in lex.negations for w in window):
            polarity = -polarity
        scores.append(polarity)
    if not scores:
        return 0.0
    mean = sum(scores) / len(scores)
    return max(-1.0, min(1.0, mean))


# ------------------------------------------------------------ topic detection

_MAX_PHRASE_TOKENS = 3


def detect_topics(
    segment: Segment,
    lex: Lexicons,
    registered_topics: set[str] | frozenset[str] | None = None,
) -> list[TopicCandidate]:
    """First-level phrase map wins outright; gazetteer consulted otherwise.

    First-level hits carry confidence 1.0. Second-level candidates in the
    movie-title / book-title / song-name classes never map to topics, and
    candidates under the detector threshold are dropped.
    """
    tokens = tokenize(segment.text)
    token_stems = stems(tokens)

    def registered(topic: str) -> bool:
        return registered_topics is None or topic in registered_topics

    first_hits: dict[str, TopicCandidate] = {}
    used = [False] * len(tokens)
    for n in range(_MAX_PHRASE_TOKENS, 0, -1):
        for s in range(0, len(tokens) - n + 1):
            if any(used[s : s + n]):
                continue
            key = " ".join(token_stems[s : s + n])
            topic = lex.first_level.get(key)
            if topic and registered(topic):
                surface = " ".join(tokens[s : s + n])
                if topic not in first_hits:
                    first_hits[topic] = TopicCandidate(
                        topic, 1.0, TopicSource.FIRST_LEVEL_DB, surface
                    )
                for j in range(s, s + n):
                    used[j] = True
    if first_hits:
        return list(first_hits.values())

    second_hits: dict[str, TopicCandidate] = {}
    used = [False] * len(tokens)
    for n in range(_MAX_PHRASE_TOKENS, 0, -1):
        for s in range(0, len(tokens) - n + 1):
            if any(used[s : s + n]):
                continue
            key = " ".join(token_stems[s : s + n])
            klass_name = lex.gazetteer_entries.get(key)
            if not klass_name:
                continue
            klass = lex.gazetteer_classes[klass_name]
            for j in range(s, s + n):
                used[j] = True
            if klass.suppressed:
                continue
            if klass.confidence < lex.gazetteer_threshold:
                continue
            if not registered(klass.topic):
                continue
            surface = " ".join(tokens[s : s + n])
            existing = second_hits.get(klass.topic)
            if existing is None or klass.confidence > existing.confidence:
                second_hits[klass.topic] = TopicCandidate(
                    klass.topic, klass.confidence, TopicSource.SECOND_LEVEL_DETECTOR, surface
                )
    return list(second_hits.values())


# --------------------------------------------------------- ellipsis completion

def complete_ellipsis(
    segment: Segment, previous_bot_question: str, lex: Lexicons
) -> EllipsisResult:
    """Splice a bare answer into the asked question's answer frame."""
    text = segment.text.strip()
    if not text or not previous_bot_question:
        return EllipsisResult(text, False)
    tokens = tokenize(text)
    if any(t in lex.subject_pronouns for t in tokens):
        return EllipsisResult(text, False)
    question = " ".join(tokenize(previous_bot_question))
    for frame in lex.ellipsis_frames:
        match = re.search(frame["question"], question)
        if match:
            values = {"x": text}
            values.update({k: v for k, v in match.groupdict().items() if v})
            try:
                return EllipsisResult(frame["answer"].format(**values), True)
            except (KeyError, IndexError):
                continue
    return EllipsisResult(text, False)


# ------------------------------------------------------------------- assembly

@dataclass
class NluResult:
    utterance: str
    annotations: list[Annotation] = field(default_factory=list)

    @property
    def topic_candidates(self) -> list[TopicCandidate]:
        return [c for a in self.annotations for c in a.topic_candidates]

    @property
    def fine_grains(self) -> list[FineGrainIntent]:
        return [a.fine_grain for a in self.annotations]

    @property
    def dialog_acts(self) -> list[DialogAct]:
        return [a.dialog_act for a in self.annotations]

    @property
    def key_phrases(self) -> list[str]:
        return [p for a in self.annotations for p in a.key_phrases]

    def summary(self) -> list[dict]:
        return [a.summary() for a in self.annotations]


def annotate_utterance(
    utterance: str,
    lex: Lexicons,
    known_phrases: tuple[str, ...] | list[str] = (),
    previous_bot_question: str = "",
    registered_topics: set[str] | frozenset[str] | None = None,
) -> NluResult:
    """Run the full annotator stack over one normalized utterance."""
    result = NluResult(utterance=utterance)
    for seg in segment_utterance(utterance, lex):
        completion = complete_ellipsis(seg, previous_bot_question, lex)
        effective = Segment(completion.text, seg.index) if completion.completed else seg
        result.annotations.append(
            Annotation(
                segment=seg,
                dialog_act=classify_dialog_act(effective, lex),
                fine_grain=classify_fine_grain(effective),
                key_phrases=extract_key_phrases(seg, lex, known_phrases),
                sentiment=sentiment_score(effective, lex),
                topic_candidates=detect_topics(effective, lex, registered_topics),
                incomplete=detect_incomplete(seg, lex),
                completed_text=completion.text if completion.completed else seg.text,
            )
        )
    return result
