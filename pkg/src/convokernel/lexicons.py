"""Text utilities and the lexicon bundle shared by the annotators.

Tokenization, normalization, a light suffix stemmer, and a loader for the
JSON lexicon files (stop words, fillers, sentiment polarities, function-word
classes, the common-words list behind the proper-noun heuristic, the
first-level topic phrase map, and the second-level gazetteer).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

PACKAGE_DATA = Path(__file__).parent / "data"
DEFAULT_LEXICON_DIR = PACKAGE_DATA / "lexicons"

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; apostrophes stay inside tokens ("don't")."""
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    """Lowercased, punctuation-free, single-spaced form of an utterance."""
    return " ".join(tokenize(text))


def stem(token: str) -> str:
    """Light suffix stripper: -ing, -ed, -es (after sibilants), -s.

    Only strips when enough of the word remains to stay recognizable, so
    "sing" and "need" survive unchanged while "singing" → "sing" and
    "murdered" → "murder".
    """
    t = token.lower()
    if t.endswith("ing") and len(t) >= 6:
        return t[:-3]
    if t.endswith("ed") and len(t) >= 5:
        return t[:-2]
    if (t.endswith("es") and len(t) >= 4 and t[-3] in "sxz") or t.endswith(("ches", "shes")):
        return t[:-2]
    if t.endswith("s") and len(t) >= 3 and not t.endswith(("ss", "us", "is", "'s")):
        return t[:-1]
    return t


def stems(tokens: list[str]) -> list[str]:
    return [stem(t) for t in tokens]


def _load(directory: Path, name: str) -> dict:
    with open(directory / name, encoding="utf-8") as f:
        return json.load(f)


@dataclass(frozen=True)
class GazetteerClass:
    topic: str
    confidence: float
    suppressed: bool = False


@dataclass
class Lexicons:
    """All rule-annotator word lists, loaded from one data directory."""

    stop_words: frozenset[str]
    filler_unigrams: frozenset[str]
    filler_bigrams: tuple[tuple[str, str], ...]
    filler_non_verb: frozenset[str]
    phrase_blockers: frozenset[str]
    dangling_enders: frozenset[str]
    subject_pronouns: frozenset[str]
    person_nouns: frozenset[str]
    wh_words: frozenset[str]
    aux_words: frozenset[str]
    wh_focus_nouns: frozenset[str]
    imperative_verbs: frozenset[str]
    sentiment: dict[str, float]          # keyed by stemmed form
    negations: frozenset[str]
    negation_window: int
    common_words: frozenset[str]
    first_level: dict[str, str]          # phrase (stemmed) -> topic module id
    gazetteer_classes: dict[str, GazetteerClass]
    gazetteer_entries: dict[str, str]    # phrase (stemmed) -> class name
    gazetteer_threshold: float
    ellipsis_frames: list[dict] = field(default_factory=list)

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "Lexicons":
        d = Path(directory) if directory else DEFAULT_LEXICON_DIR
        stop = _load(d, "stop_words.json")
        fillers = _load(d, "fillers.json")
        func = _load(d, "function_words.json")
        senti = _load(d, "sentiment.json")
        neg = _load(d, "negations.json")
        common = _load(d, "common_words.json")
        first = _load(d, "first_level.json")
        gaz = _load(d, "gazetteer.json")
        frames = _load(d, "ellipsis_frames.json")

        first_level = {}
        for topic, phrases in first["phrases"].items():
            for phrase in phrases:
                first_level[_stem_phrase(phrase)] = topic

        classes = {
            name: GazetteerClass(
                topic=spec["topic"],
                confidence=spec["confidence"],
                suppressed=spec.get("suppressed", False),
            )
            for name, spec in gaz["class_topics"].items()
        }
        entries = {}
        for klass, phrases in gaz["entries"].items():
            for phrase in phrases:
                entries[_stem_phrase(phrase)] = klass

        return cls(
            stop_words=frozenset(stop["words"]),
            filler_unigrams=frozenset(fillers["unigrams"]),
            filler_bigrams=tuple(tuple(b) for b in fillers["bigrams"]),
            filler_non_verb=frozenset(fillers["non_verb_position"]),
            phrase_blockers=frozenset(func["phrase_blockers"]),
            dangling_enders=frozenset(func["dangling_enders"]),
            subject_pronouns=frozenset(func["subject_pronouns"]),
            person_nouns=frozenset(func["person_nouns"]),
            wh_words=frozenset(func["wh_words"]),
            aux_words=frozenset(func["aux_words"]),
            wh_focus_nouns=frozenset(func["wh_focus_nouns"]),
            imperative_verbs=frozenset(func["imperative_verbs"]),
            sentiment={stem(w): v for w, v in senti["polarity"].items()},
            negations=frozenset(neg["tokens"]),
            negation_window=neg["window"],
            common_words=frozenset(common["words"]),
            first_level=first_level,
            gazetteer_classes=classes,
            gazetteer_entries=entries,
            gazetteer_threshold=gaz.get("default_threshold", 0.6),
            ellipsis_frames=frames["frames"],
        )

    def is_stop(self, token: str) -> bool:
        return token in self.stop_words

    def non_stop_stems(self, text: str) -> set[str]:
        """Stemmed content tokens — the overlap currency of the topicality filter."""
        return {stem(t) for t in tokenize(text) if t not in self.stop_words}

    def non_stop_stems_ordered(self, text: str) -> list[str]:
        """Like non_stop_stems but preserving utterance order (with repeats)."""
        return [stem(t) for t in tokenize(text) if t not in self.stop_words]


def _stem_phrase(phrase: str) -> str:
    return " ".join(stems(tokenize(phrase)))


def stem_phrase(phrase: str) -> str:
    """Public stemmed-phrase key used by topic and gazetteer lookups."""
    return _stem_phrase(phrase)
