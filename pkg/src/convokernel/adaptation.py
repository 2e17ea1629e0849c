"""User profiles and adaptation policies.

Tracks what each user likes and how they converse, then shapes the
system's behavior around it: gender-informed topic ordering, open
questions for talkative users, direct proposals for quiet ones, and a
rotation over topics that never repeats one until all have had a turn.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Sequence

from . import nlu

DOMINANCE_THRESHOLD = 0.5
GENDER_SHARE_THRESHOLD = 0.9

# Dialog acts that mark a turn as user-driven.
DOMINANT_ACTS = frozenset(
    {
        nlu.DialogAct.QUESTION,
        nlu.DialogAct.COMMAND,
        nlu.DialogAct.OPINION,
        nlu.DialogAct.STATEMENT,
    }
)


class Gender(str, enum.Enum):
    MALE = "male"
    FEMALE = "female"
    UNKNOWN = "unknown"


class TransitionStrategy(str, enum.Enum):
    OPEN_QUESTION = "open_question"
    DIRECT_PROPOSAL = "direct_proposal"


class OpenQuestionCategory(str, enum.Enum):
    ASK_HOBBY = "ask_hobby"
    PAST_EVENT = "past_event"
    FUTURE_EVENT = "future_event"


CATEGORY_ORDER: tuple[OpenQuestionCategory, ...] = (
    OpenQuestionCategory.ASK_HOBBY,
    OpenQuestionCategory.PAST_EVENT,
    OpenQuestionCategory.FUTURE_EVENT,
)


def _data_path(name: str):
    return resources.files("convokernel").joinpath(f"data/{name}")


# ---------------------------------------------------------------------------
# User profile.
# ---------------------------------------------------------------------------

@dataclass
class UserProfile:
    """Everything the system remembers about one user across conversations."""

    user_id: str
    name: str | None = None
    predicted_gender: Gender = Gender.UNKNOWN
    preferred_topics: list[str] = field(default_factory=list)
    used_topics: set[str] = field(default_factory=set)
    dominant_turns: int = 0
    total_turns: int = 0
    returning: bool = False
    # Recency-ordered (oldest first) so the recycle rule can pick the
    # least-recently-asked category; membership is still set-like.
    asked_open_questions: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.dominant_turns > self.total_turns:
            raise ValueError("dominant_turns cannot exceed total_turns")

    @property
    def dominance_ratio(self) -> float:
        if self.total_turns == 0:
            return 0.0
        return self.dominant_turns / self.total_turns

    def add_preferred_topic(self, topic: str) -> bool:
        """Append a topic preference; returns True when newly added."""
        if topic in self.preferred_topics:
            return False
        self.preferred_topics.append(topic)
        return True

    def mark_topic_used(self, topic: str) -> None:
        """Record that a topic was discussed or proposed (even if rejected)."""
        self.used_topics.add(topic)

    def record_asked_category(self, category: OpenQuestionCategory) -> None:
        value = category.value
        if value in self.asked_open_questions:
            self.asked_open_questions.remove(value)
        self.asked_open_questions.append(value)

    # -- persistence ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "name": self.name,
            "predicted_gender": self.predicted_gender.value,
            "preferred_topics": list(self.preferred_topics),
            "used_topics": sorted(self.used_topics),
            "dominant_turns": self.dominant_turns,
            "total_turns": self.total_turns,
            "returning": self.returning,
            "asked_open_questions": list(self.asked_open_questions),
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "UserProfile":
        return cls(
            user_id=raw["user_id"],
            name=raw.get("name"),
            predicted_gender=Gender(raw.get("predicted_gender", "unknown")),
            preferred_topics=list(raw.get("preferred_topics", [])),
            used_topics=set(raw.get("used_topics", [])),
            dominant_turns=int(raw.get("dominant_turns", 0)),
            total_turns=int(raw.get("total_turns", 0)),
            returning=bool(raw.get("returning", False)),
            asked_open_questions=list(raw.get("asked_open_questions", [])),
        )


# ---------------------------------------------------------------------------
# Gender prediction.
# ---------------------------------------------------------------------------

def load_name_db(path=None) -> dict[str, tuple[int, int]]:
    """Load the name->(male_count, female_count) table."""
    if path is None:
        text = _data_path("names.csv").read_text(encoding="utf-8")
        lines = text.splitlines()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    reader = csv.DictReader(lines)
    db: dict[str, tuple[int, int]] = {}
    for row in reader:
        db[row["name"].strip().lower()] = (
            int(row["male_count"]),
            int(row["female_count"]),
        )
    return db


def predict_gender(
    name: str,
    name_db: Mapping[str, tuple[int, int]],
    share_threshold: float = GENDER_SHARE_THRESHOLD,
) -> Gender:
    """Call a gender only when the name's usage is lopsided enough."""
    counts = name_db.get(name.strip().lower())
    if counts is None:
        return Gender.UNKNOWN
    male, female = counts
    total = male + female
    if total <= 0:
        return Gender.UNKNOWN
    if male / total >= share_threshold:
        return Gender.MALE
    if female / total >= share_threshold:
        return Gender.FEMALE
    return Gender.UNKNOWN


# ---------------------------------------------------------------------------
# Dominance tracking and transition strategy.
# ---------------------------------------------------------------------------

def update_dominance(
    profile: UserProfile,
    dialog_acts: Iterable["nlu.DialogAct | str"],
) -> UserProfile:
    """Count this turn, and count it as dominant if the user drove it."""
    acts = set()
    for act in dialog_acts:
        acts.add(act if isinstance(act, nlu.DialogAct) else nlu.DialogAct(str(act).upper()))
    profile.total_turns += 1
    if acts & DOMINANT_ACTS:
        profile.dominant_turns += 1
    return profile


def is_dominant(profile: UserProfile, threshold: float = DOMINANCE_THRESHOLD) -> bool:
    if profile.total_turns == 0:
        return False
    return profile.dominance_ratio > threshold


def transition_strategy(
    profile: UserProfile,
    threshold: float = DOMINANCE_THRESHOLD,
) -> TransitionStrategy:
    """How to move to the next topic once the current one finishes.

    Talkative (dominant) users get open questions so they can steer —
    but not while stated preferences are still waiting their turn.
    Quiet users get a concrete proposal instead.
    """
    if not is_dominant(profile, threshold):
        return TransitionStrategy.DIRECT_PROPOSAL
    if any(t not in profile.used_topics for t in profile.preferred_topics):
        return TransitionStrategy.DIRECT_PROPOSAL
    return TransitionStrategy.OPEN_QUESTION


# ---------------------------------------------------------------------------
# Open questions.
# ---------------------------------------------------------------------------

def load_open_question_banks(path=None) -> dict[OpenQuestionCategory, list[str]]:
    if path is None:
        raw = json.loads(_data_path("lexicons/open_questions.json").read_text(encoding="utf-8"))
    else:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    banks = {
        OpenQuestionCategory(cat): list(questions)
        for cat, questions in raw["banks"].items()
    }
    for cat, bank in banks.items():
        if not bank:
            raise ValueError(f"open-question bank for {cat.value} is empty")
    return banks


_DEFAULT_BANKS: dict[OpenQuestionCategory, list[str]] | None = None


def _banks() -> dict[OpenQuestionCategory, list[str]]:
    global _DEFAULT_BANKS
    if _DEFAULT_BANKS is None:
        _DEFAULT_BANKS = load_open_question_banks()
    return _DEFAULT_BANKS


def select_open_question(
    profile: UserProfile,
    banks: Mapping[OpenQuestionCategory, Sequence[str]] | None = None,
    bags=None,
    rng=None,
) -> tuple[OpenQuestionCategory, str]:
    """Pick the next open-question category and a question from its bank.

    Categories advance hobby -> past event -> future event; once all
    have been asked, the least-recently-asked one is recycled.  The
    chosen category is recorded on the profile.
    """
    banks = banks if banks is not None else _banks()
    asked = list(profile.asked_open_questions)
    category = next((c for c in CATEGORY_ORDER if c.value not in asked), None)
    if category is None:
        # Everything asked at least once: the front of the recency list
        # is the stalest.
        category = OpenQuestionCategory(asked[0])
    bank = list(banks[category])
    if bags is not None and rng is not None and len(bank) > 1:
        bag = bags.bag_for(f"open_question.{category.value}", len(bank))
        question = bank[bag.draw(rng)]
        bags.store(f"open_question.{category.value}", bag)
    else:
        question = bank[0]
    profile.record_asked_category(category)
    return category, question


@dataclass(frozen=True)
class OpenAnswerRouting:
    """Outcome of processing the user's answer to an open question."""

    topics_added: tuple[str, ...]
    route_to: str | None  # module id of the top detected topic, if any


def record_open_answer(
    annotations: "nlu.NluResult | Sequence[nlu.TopicCandidate]",
    profile: UserProfile,
    registered_topics: Iterable[str] | None = None,
) -> OpenAnswerRouting:
    """Fold an open-question answer into the profile and pick a route.

    Every detected topic becomes a preference (deduplicated, in
    detection order); conversation continues in the first
    highest-confidence topic's module.  No topic means the caller
    should acknowledge and fall back to a direct proposal.
    """
    if isinstance(annotations, nlu.NluResult):
        candidates = annotations.topic_candidates
    else:
        candidates = list(annotations)
    registered = set(registered_topics) if registered_topics is not None else None
    added: list[str] = []
    for cand in candidates:
        if registered is not None and cand.topic not in registered:
            continue
        if profile.add_preferred_topic(cand.topic):
            added.append(cand.topic)
    route = None
    eligible = [
        c for c in candidates
        if registered is None or c.topic in registered
    ]
    if eligible:
        best = max(c.confidence for c in eligible)
        route = next(c.topic for c in eligible if c.confidence == best)
    return OpenAnswerRouting(topics_added=tuple(added), route_to=route)


# ---------------------------------------------------------------------------
# Topic ordering and rotation.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TopicOrderTable:
    """Per-gender proposal orders over the proposable topics."""

    proposable_topics: frozenset[str]
    orders: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        for gender, order in self.orders.items():
            if set(order) != set(self.proposable_topics) or len(order) != len(
                self.proposable_topics
            ):
                raise ValueError(
                    f"order for {gender!r} is not a permutation of the proposable topics"
                )

    def order_for(self, gender: Gender) -> tuple[str, ...]:
        return self.orders[gender.value]

    @classmethod
    def load(cls, path=None) -> "TopicOrderTable":
        if path is None:
            raw = json.loads(_data_path("lexicons/topic_order.json").read_text(encoding="utf-8"))
        else:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        return cls(
            proposable_topics=frozenset(raw["proposable_topics"]),
            orders={g: tuple(order) for g, order in raw["orders"].items()},
        )


_DEFAULT_TABLE: TopicOrderTable | None = None


def default_topic_order() -> TopicOrderTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = TopicOrderTable.load()
    return _DEFAULT_TABLE


def select_next_topic(
    profile: UserProfile,
    order_table: TopicOrderTable | None = None,
) -> str:
    """Pick what to propose next.

    Stated preferences go first; then the gender-keyed personal order,
    skipping anything already used (including rejected proposals).
    When everything has been used the rotation resets and starts over
    from the personal list's head.
    """
    table = order_table if order_table is not None else default_topic_order()
    personal = table.order_for(profile.predicted_gender)
    for topic in profile.preferred_topics:
        if topic in table.proposable_topics and topic not in profile.used_topics:
            return topic
    for topic in personal:
        if topic not in profile.used_topics:
            return topic
    profile.used_topics.clear()
    return personal[0]
