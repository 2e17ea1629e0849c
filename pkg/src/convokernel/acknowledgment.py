"""Statement acknowledgment and unanswerable-question rephrasing.

Turns a user's statement into a second-person restatement ("i like to
dance" -> "Ok, you like to dance.") and turns a question the system
cannot answer into an honest "I don't know ..." echo that preserves the
question's content words.  Selection between a rule-written
acknowledgment and the generated one is decided by token overlap with
what the user actually said.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

from . import nlu
from .lexicons import Lexicons, normalize, tokenize

DEFAULT_OPENER = "Ok,"
DONT_KNOW = "I don't know"

# Participle-ish words that license contracting "i have" -> "I've".
_CONTRACTION_FOLLOWERS = {"ever", "never", "already", "been", "got", "gotta"}

_TEMPLATED_ACKS: dict[str, str] = {
    "ans_unknown": "That's okay",
}

# Utterance-pattern acks: checked against the raw segment text.
_PATTERN_ACKS: tuple[tuple[re.Pattern[str], str], ...] = (
    (
        re.compile(r"\bthat(?:'s| is| was)\s+(?:so |really |pretty )?"
                   r"(?:interesting|cool|neat|funny|awesome)\b"),
        "I'm glad you like it!",
    ),
)


@dataclass(frozen=True)
class GeneratorResponse:
    """Output contract for a pluggable response generator."""

    text: str
    source: str = "GENERATED"

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("GeneratorResponse.text must be non-empty")


def _default_map_path():
    return resources.files("convokernel").joinpath("data/lexicons/perspective.json")


@dataclass
class PerspectiveMap:
    """First-person <-> second-person token rewriting with verb agreement."""

    swaps: Mapping[str, str]
    involutive: frozenset[str]
    agreement: Mapping[str, Mapping[str, str]]

    @classmethod
    def load(cls, path=None) -> "PerspectiveMap":
        if path is None:
            raw = json.loads(_default_map_path().read_text(encoding="utf-8"))
        else:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        return cls(
            swaps=dict(raw["swaps"]),
            involutive=frozenset(raw.get("involutive", ())),
            agreement={k: dict(v) for k, v in raw.get("agreement", {}).items()},
        )

    # -- token-level ---------------------------------------------------
    def swap_token(self, token: str) -> str:
        low = token.lower()
        if low in self.swaps:
            return self.swaps[low]
        if low.endswith("'s"):
            stem = low[:-2]
            if stem in self.swaps:
                swapped = self.swaps[stem]
                # "you's" is never right; possessive clitic only survives
                # on tokens whose swap is still a regular noun-like form.
                if swapped not in ("i", "you"):
                    return swapped + "'s"
        return low

    def apply(self, text: str) -> str:
        """Swap person across *text* and fix be/do/have agreement."""
        tokens = tokenize(text)
        swapped: list[str] = []
        moved: list[bool] = []
        for tok in tokens:
            out = self.swap_token(tok)
            swapped.append(out)
            moved.append(out != tok)
        # Agreement pass: a be/do/have form adjacent to a swapped subject
        # pronoun is re-conjugated for the new person.
        for idx, tok in enumerate(swapped):
            for subject, table in self.agreement.items():
                if tok not in table:
                    continue
                neighbors = []
                if idx > 0:
                    neighbors.append(swapped[idx - 1])
                if idx + 1 < len(swapped):
                    neighbors.append(swapped[idx + 1])
                if any(n == subject and moved[jdx] for n, jdx in
                       zip(neighbors, [idx - 1, idx + 1][: len(neighbors)])):
                    swapped[idx] = table[tok]
                    break
        return " ".join(swapped)


_DEFAULT_MAP: PerspectiveMap | None = None


def _perspective() -> PerspectiveMap:
    global _DEFAULT_MAP
    if _DEFAULT_MAP is None:
        _DEFAULT_MAP = PerspectiveMap.load()
    return _DEFAULT_MAP


# ---------------------------------------------------------------------------
# Surface polish shared by both acknowledgment paths.
# ---------------------------------------------------------------------------

def _is_proper_candidate(token: str, lex: Lexicons) -> bool:
    base = token[:-2] if token.endswith("'s") else token
    if not base.isalpha() or len(base) < 2:
        return False
    known = (
        base in lex.common_words
        or base in lex.stop_words
        or base in lex.aux_words
        or base in lex.wh_words
        or base in lex.subject_pronouns
        or base in lex.phrase_blockers
    )
    return not known


def _render_tokens(tokens: Sequence[str], lex: Lexicons) -> str:
    """Join tokens, restoring 'I' casing, contractions, and proper nouns."""
    out: list[str] = []
    idx = 0
    while idx < len(tokens):
        tok = tokens[idx]
        nxt = tokens[idx + 1] if idx + 1 < len(tokens) else ""
        if tok == "i" and nxt == "have":
            follower = tokens[idx + 2] if idx + 2 < len(tokens) else ""
            if follower in _CONTRACTION_FOLLOWERS or follower.endswith(("ed", "en")):
                out.append("I've")
                idx += 2
                continue
        if tok == "i" or tok.startswith("i'"):
            out.append("I" + tok[1:])
        elif _is_proper_candidate(tok, lex):
            if tok.endswith("'s"):
                out.append(tok[:-2].capitalize() + "'s")
            else:
                out.append(tok.capitalize())
        else:
            out.append(tok)
        idx += 1
    return " ".join(out)


# ---------------------------------------------------------------------------
# Statement acknowledgment.
# ---------------------------------------------------------------------------

def _clause_is_first_person(clause: str) -> bool:
    toks = set(tokenize(clause))
    if toks & {"i", "i'm", "i've", "i'll", "i'd"}:
        return True
    first = tokenize(clause)
    return bool(first) and first[0] in ("my", "mine")


def acknowledge_statement(
    text: str,
    lex: Lexicons,
    previous_bot_question: str = "",
    opener: str | None = None,
) -> str:
    """Restate the user's statement from the system's perspective.

    Elliptical answers are first expanded against the question that
    prompted them, the most self-referential clause is chosen, person is
    swapped, and an opener is prepended.
    """
    segment = nlu.Segment(text=normalize(text), index=0)
    completed = nlu.complete_ellipsis(segment, previous_bot_question, lex)
    working = completed.text
    clauses = [seg.text for seg in nlu.segment_utterance(working, lex)]
    if not any(tokenize(c) for c in clauses):
        return "Okay!"
    chosen = next((c for c in clauses if _clause_is_first_person(c)), None)
    if chosen is None:
        chosen = max(clauses, key=lambda c: len(tokenize(c)))
    swapped = _perspective().apply(chosen)
    body = _render_tokens(tokenize(swapped), lex)
    head = opener if opener is not None else DEFAULT_OPENER
    sentence = f"{head} {body}".strip()
    if not sentence.endswith((".", "!", "?")):
        sentence += "."
    return sentence


# ---------------------------------------------------------------------------
# Unanswerable-question rephrasing.
# ---------------------------------------------------------------------------

def _split_aux(tokens: Sequence[str], lex: Lexicons) -> int:
    """Index of the first auxiliary/copula token, or -1."""
    for idx, tok in enumerate(tokens):
        head = tok.split("'")[0]
        if head in lex.aux_words and head not in lex.wh_words:
            return idx
    return -1


def acknowledge_unanswerable_question(
    question: str,
    lex: Lexicons,
    preamble: str | None = None,
) -> str:
    """Turn a question the system cannot answer into an honest echo.

    Wh-questions become embedded clauses ("what is X" -> "... what X
    is"); yes/no questions become "if" clauses.  Person is swapped so
    the echo is about the right party, and out-of-lexicon words are
    re-capitalized as names.
    """
    head = preamble if preamble is not None else DONT_KNOW
    norm = normalize(question).rstrip("?").strip()
    tokens = tokenize(norm)
    if not tokens:
        sentence = f"{head} what you mean."
        return sentence
    first_head = tokens[0].split("'")[0]
    is_wh = first_head in lex.wh_words

    if is_wh:
        # Contracted copula ("what's") expands before the reorder.
        if "'" in tokens[0]:
            rest = tokens[0].split("'", 1)[1]
            expanded = {"s": "is", "re": "are", "d": "did", "ll": "will"}.get(rest)
            tokens = [first_head] + ([expanded] if expanded else []) + tokens[1:]
        aux_idx = _split_aux(tokens[1:], lex)
        if aux_idx >= 0:
            aux_idx += 1
            aux = tokens[aux_idx]
            wh_part = tokens[:aux_idx]
            remainder = tokens[aux_idx + 1 :]
            if aux in ("do", "does", "did"):
                embedded = wh_part + remainder
            else:
                embedded = wh_part + remainder + [aux]
        else:
            embedded = list(tokens)
        clause = " ".join(embedded)
        body = _perspective().apply(clause)
        rendered = _render_tokens(tokenize(body), lex)
        sentence = f"{head} {rendered}."
    else:
        aux_idx = _split_aux(tokens, lex)
        if aux_idx == 0 and len(tokens) > 1:
            aux = tokens[0]
            subject = tokens[1]
            remainder = tokens[2:]
            if aux in ("do", "does", "did"):
                declarative = [subject] + remainder
            else:
                declarative = [subject, aux] + remainder
        else:
            declarative = list(tokens)
        clause = " ".join(declarative)
        body = _perspective().apply(clause)
        rendered = _render_tokens(tokenize(body), lex)
        sentence = f"{head} if {rendered}."
    return sentence


# ---------------------------------------------------------------------------
# Rule-vs-generated selection and templated acks.
# ---------------------------------------------------------------------------

def topicality_select(
    rule_text: str,
    generated: "GeneratorResponse | str | None",
    user_text: str,
    lex: Lexicons,
) -> tuple[str, str]:
    """Choose between a rule-written and a generated acknowledgment.

    The generated one wins only when it is present and shares at least
    one non-stop stemmed token with the user's words; otherwise the
    rule text is safer.  Returns (choice, text) where choice is
    "generated" or "rule".
    """
    generated_text = generated.text if isinstance(generated, GeneratorResponse) else generated
    if generated_text:
        user_stems = lex.non_stop_stems(user_text)
        gen_stems = lex.non_stop_stems(generated_text)
        if user_stems & gen_stems:
            return ("generated", generated_text)
    return ("rule", rule_text)


def templated_ack(fine_grain: "nlu.FineGrainIntent | str | None",
                  text: str = "") -> str | None:
    """Fixed-phrase acknowledgment for a handful of reactions, else None."""
    if text:
        low = normalize(text)
        for pattern, reply in _PATTERN_ACKS:
            if pattern.search(low):
                return reply
    if fine_grain is None:
        return None
    value = fine_grain.value if isinstance(fine_grain, nlu.FineGrainIntent) else str(fine_grain)
    return _TEMPLATED_ACKS.get(value)
