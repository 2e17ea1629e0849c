"""Content-pack ingestion and the persistence store.

Provides a filesystem-backed key-value store (profiles, sessions, packs),
versioned content-pack ingestion with atomic activation and rollback, and
append-only JSON-lines conversation logs.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

from .adaptation import UserProfile
from .errors import PackValidationError, StorageError

log = logging.getLogger(__name__)

_SAFE_KEY = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_."


def _encode_key(key: str) -> str:
    """Map an opaque key onto a safe filename (reversible escaping)."""
    out = []
    for ch in key:
        if ch in _SAFE_KEY:
            out.append(ch)
        else:
            out.append(f"%{ord(ch):04x}")
    return "".join(out) or "%0000"


def _atomic_write(path: Path, data: str) -> None:
    """Write via a temp file and rename so readers never see a torn file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp.{os.getpid()}")
    try:
        tmp.write_text(data, encoding="utf-8")
        os.replace(tmp, path)
    except OSError as err:
        try:
            tmp.unlink(missing_ok=True)
        finally:
            raise StorageError(f"write failed for {path}: {err}") from err


class Namespace(str, Enum):
    PROFILE = "profile"
    SESSION = "session"
    LOG = "log"
    CONTENT = "content"


class FileStore:
    """Namespaced key-value documents on the local filesystem.

    Writes are atomic per key (temp file + rename) and last-write-wins;
    a read after a completed write observes that write within one process.
    """

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)

    def _path(self, namespace: str, key: str) -> Path:
        ns = Namespace(namespace).value
        return self.data_dir / "store" / ns / f"{_encode_key(key)}.json"

    def get(self, namespace: str, key: str) -> dict | None:
        path = self._path(namespace, key)
        try:
            raw = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return None
        except OSError as err:
            raise StorageError(f"read failed for {path}: {err}") from err
        return json.loads(raw)

    def put(self, namespace: str, key: str, value: dict) -> None:
        payload = json.dumps(value, ensure_ascii=False, indent=0, sort_keys=True)
        _atomic_write(self._path(namespace, key), payload)

    def delete(self, namespace: str, key: str) -> None:
        try:
            self._path(namespace, key).unlink(missing_ok=True)
        except OSError as err:
            raise StorageError(f"delete failed: {err}") from err

    def keys(self, namespace: str) -> list[str]:
        ns_dir = self.data_dir / "store" / Namespace(namespace).value
        if not ns_dir.is_dir():
            return []
        return sorted(p.stem for p in ns_dir.glob("*.json"))


# ---------------------------------------------------------------------------
# Content packs.
# ---------------------------------------------------------------------------

class PackKind(str, Enum):
    PAA = "paa"
    DEBATE = "debate"
    MOVIE_CATALOG = "movie_catalog"
    GAME_CATALOG = "game_catalog"
    NEWS = "news"
    BACKSTORY = "backstory"
    FACTS = "facts"
    NAME_DB = "name_db"
    TEMPLATES = "templates"
    FLOWS = "flows"
    LEXICON = "lexicon"


def _require(cond: bool, problems: list[str], message: str) -> None:
    if not cond:
        problems.append(message)


def _check_string_list(value: Any, problems: list[str], label: str, min_len: int = 0) -> None:
    if not isinstance(value, list) or any(not isinstance(v, str) or not v for v in value):
        problems.append(f"{label} must be a list of non-empty strings")
    elif len(value) < min_len:
        problems.append(f"{label} needs at least {min_len} entries")


def _validate_paa(payload: dict, problems: list[str]) -> None:
    topics = payload.get("topics")
    if not isinstance(topics, dict) or not topics:
        problems.append("topics must be a non-empty object of word -> [{q, a}]")
        return
    for word, entries in topics.items():
        if not isinstance(entries, list) or not entries:
            problems.append(f"topics[{word!r}] must be a non-empty list")
            continue
        for i, entry in enumerate(entries):
            if not isinstance(entry, dict) or not entry.get("q") or not entry.get("a"):
                problems.append(f"topics[{word!r}][{i}] needs non-empty q and a")


def _validate_debate(payload: dict, problems: list[str]) -> None:
    topics = payload.get("topics")
    if not isinstance(topics, dict) or not topics:
        problems.append("topics must be a non-empty object of id -> {topic, pro, con}")
        return
    for topic_id, entry in topics.items():
        if not isinstance(entry, dict):
            problems.append(f"topics[{topic_id!r}] must be an object")
            continue
        if not entry.get("topic"):
            problems.append(f"topics[{topic_id!r}].topic missing")
        _check_string_list(entry.get("pro"), problems, f"topics[{topic_id!r}].pro", 1)
        _check_string_list(entry.get("con"), problems, f"topics[{topic_id!r}].con", 1)


def _validate_movie_catalog(payload: dict, problems: list[str]) -> None:
    movies = payload.get("movies")
    if not isinstance(movies, list) or not movies:
        problems.append("movies must be a non-empty list")
        return
    seen: set[str] = set()
    for i, movie in enumerate(movies):
        if not isinstance(movie, dict):
            problems.append(f"movies[{i}] must be an object")
            continue
        movie_id = movie.get("id")
        if not movie_id or not isinstance(movie_id, str):
            problems.append(f"movies[{i}].id missing")
        elif movie_id in seen:
            problems.append(f"duplicate movie id {movie_id!r}")
        else:
            seen.add(movie_id)
        if not movie.get("title"):
            problems.append(f"movies[{i}].title missing")
        _check_string_list(movie.get("keywords"), problems, f"movies[{i}].keywords", 1)
        if not isinstance(movie.get("popularity"), int):
            problems.append(f"movies[{i}].popularity must be an integer rank")


def _validate_game_catalog(payload: dict, problems: list[str]) -> None:
    games = payload.get("games")
    if not isinstance(games, list) or not games:
        problems.append("games must be a non-empty list")
        return
    seen: set[str] = set()
    for i, game in enumerate(games):
        if not isinstance(game, dict):
            problems.append(f"games[{i}] must be an object")
            continue
        game_id = game.get("id")
        if not game_id or not isinstance(game_id, str):
            problems.append(f"games[{i}].id missing")
        elif game_id in seen:
            problems.append(f"duplicate game id {game_id!r}")
        else:
            seen.add(game_id)
        if not game.get("title"):
            problems.append(f"games[{i}].title missing")
        facts = game.get("facts", [])
        if facts:
            _check_string_list(facts, problems, f"games[{i}].facts")
        if game.get("recommended") is not None and not isinstance(game["recommended"], bool):
            problems.append(f"games[{i}].recommended must be boolean")


def _validate_news(payload: dict, problems: list[str]) -> None:
    items = payload.get("items")
    if not isinstance(items, list) or not items:
        problems.append("items must be a non-empty list")
        return
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            problems.append(f"items[{i}] must be an object")
            continue
        if not item.get("id"):
            problems.append(f"items[{i}].id missing")
        _check_string_list(item.get("topic_keywords"), problems, f"items[{i}].topic_keywords", 1)
        _check_string_list(item.get("chunks"), problems, f"items[{i}].chunks", 1)
        ref = item.get("debate_ref")
        if ref is not None and (not isinstance(ref, str) or not ref):
            problems.append(f"items[{i}].debate_ref must be a non-empty string when present")


def _validate_backstory(payload: dict, problems: list[str]) -> None:
    import re as _re

    entries = payload.get("entries")
    if not isinstance(entries, list) or not entries:
        problems.append("entries must be a non-empty list")
        return
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            problems.append(f"entries[{i}] must be an object")
            continue
        patterns = entry.get("patterns")
        if not isinstance(patterns, list) or not patterns:
            problems.append(f"entries[{i}].patterns must be a non-empty list")
        else:
            for pattern in patterns:
                try:
                    _re.compile(pattern)
                except _re.error as err:
                    problems.append(f"entries[{i}] pattern {pattern!r} does not compile: {err}")
        if not entry.get("answer"):
            problems.append(f"entries[{i}].answer missing")


def _validate_facts(payload: dict, problems: list[str]) -> None:
    facts = payload.get("facts")
    if not isinstance(facts, dict) or not facts:
        problems.append("facts must be a non-empty object of key -> answer")
        return
    for key, answer in facts.items():
        if not isinstance(answer, str) or not answer:
            problems.append(f"facts[{key!r}] must be a non-empty string")


def _validate_name_db(payload: dict, problems: list[str]) -> None:
    names = payload.get("names")
    if not isinstance(names, dict) or not names:
        problems.append("names must be a non-empty object of name -> {male, female}")
        return
    for name, counts in names.items():
        if (
            not isinstance(counts, dict)
            or not isinstance(counts.get("male"), int)
            or not isinstance(counts.get("female"), int)
            or counts["male"] < 0
            or counts["female"] < 0
        ):
            problems.append(f"names[{name!r}] needs non-negative integer male/female counts")


def _validate_templates(payload: dict, problems: list[str]) -> None:
    templates = payload.get("templates")
    if not isinstance(templates, dict) or not templates:
        problems.append("templates must be a non-empty object of key -> {surfaces}")
        return
    from .nlg import TemplateStore

    store = TemplateStore()
    try:
        store.add_document(templates)
    except Exception as err:  # TemplateError or malformed body
        problems.append(str(err))


def _validate_lexicon(payload: dict, problems: list[str]) -> None:
    if not payload.get("name"):
        problems.append("name missing")
    if not isinstance(payload.get("entries"), (dict, list)):
        problems.append("entries must be an object or list")


def validate_pack(kind: PackKind, payload: dict, flow_registry=None) -> list[str]:
    """Return itemized schema problems (empty list when the pack is valid)."""
    problems: list[str] = []
    if not isinstance(payload, dict):
        return ["payload must be a JSON object"]
    version = payload.get("version")
    _require(isinstance(version, int) and version >= 1,
             problems, "version must be a positive integer")

    if kind is PackKind.PAA:
        _validate_paa(payload, problems)
    elif kind is PackKind.DEBATE:
        _validate_debate(payload, problems)
    elif kind is PackKind.MOVIE_CATALOG:
        _validate_movie_catalog(payload, problems)
    elif kind is PackKind.GAME_CATALOG:
        _validate_game_catalog(payload, problems)
    elif kind is PackKind.NEWS:
        _validate_news(payload, problems)
    elif kind is PackKind.BACKSTORY:
        _validate_backstory(payload, problems)
    elif kind is PackKind.FACTS:
        _validate_facts(payload, problems)
    elif kind is PackKind.NAME_DB:
        _validate_name_db(payload, problems)
    elif kind is PackKind.TEMPLATES:
        _validate_templates(payload, problems)
    elif kind is PackKind.FLOWS:
        _validate_flows(payload, problems, flow_registry)
    elif kind is PackKind.LEXICON:
        _validate_lexicon(payload, problems)
    return problems


def _validate_flows(payload: dict, problems: list[str], flow_registry) -> None:
    from . import fsm

    flows = payload.get("flows")
    if not isinstance(flows, list) or not flows:
        problems.append("flows must be a non-empty list of flow documents")
        return
    registry = flow_registry or fsm.register_core_handlers(fsm.HandlerRegistry())
    seen: set[str] = set()
    for i, doc in enumerate(flows):
        if not isinstance(doc, dict) or not doc.get("module"):
            problems.append(f"flows[{i}] must be an object with a module id")
            continue
        module = doc["module"]
        if module in seen:
            problems.append(f"duplicate flow module {module!r}")
        seen.add(module)
        try:
            _, defects = fsm.load_flow(doc, registry)
        except Exception as err:
            problems.append(f"flows[{i}] ({module}): {err}")
            continue
        for defect in defects:
            problems.append(f"flows[{i}] ({module}): {defect.kind.value}: {defect.detail}")


def validate_pack_text(kind: PackKind, text: str, flow_registry=None) -> tuple[dict, list[str]]:
    """Parse raw JSON and validate; duplicate template keys are caught here."""
    problems: list[str] = []

    duplicates: list[str] = []

    def hook(pairs):
        seen = {}
        for key, value in pairs:
            if key in seen:
                duplicates.append(key)
            seen[key] = value
        return seen

    try:
        payload = json.loads(text, object_pairs_hook=hook)
    except json.JSONDecodeError as err:
        return {}, [f"not valid JSON: {err}"]
    for dup in duplicates:
        problems.append(f"duplicate key {dup!r}")
    if not isinstance(payload, dict):
        return {}, problems + ["payload must be a JSON object"]
    problems.extend(validate_pack(kind, payload, flow_registry))
    return payload, problems


class PackManager:
    """Versioned, atomically activated content packs on disk.

    Layout: <data_dir>/packs/<kind>/v<N>.json with an ACTIVE pointer file;
    activation rewrites the pointer last so in-flight readers keep the old
    version, and rollback points it back at a retained prior version.
    """

    def __init__(self, data_dir: str | Path, flow_registry=None):
        self.data_dir = Path(data_dir)
        self.flow_registry = flow_registry

    def _kind_dir(self, kind: PackKind) -> Path:
        return self.data_dir / "packs" / kind.value

    def versions(self, kind: PackKind) -> list[int]:
        kind_dir = self._kind_dir(kind)
        if not kind_dir.is_dir():
            return []
        found = []
        for path in kind_dir.glob("v*.json"):
            try:
                found.append(int(path.stem[1:]))
            except ValueError:
                continue
        return sorted(found)

    def active_version(self, kind: PackKind) -> int | None:
        pointer = self._kind_dir(kind) / "ACTIVE"
        try:
            return int(pointer.read_text(encoding="utf-8").strip())
        except (FileNotFoundError, ValueError):
            return None

    def pack_text(self, kind: PackKind, version: int) -> str:
        path = self._kind_dir(kind) / f"v{version}.json"
        try:
            return path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise StorageError(f"no {kind.value} pack version {version}")

    def load_active(self, kind: PackKind) -> dict | None:
        version = self.active_version(kind)
        if version is None:
            return None
        return json.loads(self.pack_text(kind, version))

    def ingest_text(self, kind: PackKind, text: str) -> int:
        """Validate, persist, and activate a pack; returns the new version."""
        payload, problems = validate_pack_text(kind, text, self.flow_registry)
        if problems:
            raise PackValidationError(kind.value, problems)
        existing = self.versions(kind)
        version = (existing[-1] + 1) if existing else 1
        payload = dict(payload)
        payload["version"] = version
        body = json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True)
        _atomic_write(self._kind_dir(kind) / f"v{version}.json", body)
        # Re-read and re-validate the persisted bytes before activation.
        stored = self.pack_text(kind, version)
        stored_problems = validate_pack(kind, json.loads(stored), self.flow_registry)
        if stored_problems:  # pragma: no cover - would indicate a store defect
            raise PackValidationError(kind.value, stored_problems)
        _atomic_write(self._kind_dir(kind) / "ACTIVE", str(version))
        return version

    def ingest_pack(self, path: str | Path, kind: PackKind | str) -> int:
        kind = PackKind(kind)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as err:
            raise StorageError(f"cannot read pack file {path}: {err}") from err
        return self.ingest_text(kind, text)

    def rollback(self, kind: PackKind | str, version: int) -> None:
        kind = PackKind(kind)
        if version not in self.versions(kind):
            raise StorageError(f"no {kind.value} pack version {version} to roll back to")
        _atomic_write(self._kind_dir(kind) / "ACTIVE", str(version))


# ---------------------------------------------------------------------------
# User profiles.
# ---------------------------------------------------------------------------

def profile_load(store: FileStore, user_id: str) -> UserProfile:
    """Load a profile; unknown users get a fresh one, known ones are returning.

    Storage failures degrade to an in-memory fresh profile so the turn
    can proceed.
    """
    if not user_id:
        raise ValueError("user_id must be non-empty")
    try:
        doc = store.get(Namespace.PROFILE, user_id)
    except StorageError as err:
        log.warning("profile load failed for %s, using in-memory profile: %s", user_id, err)
        return UserProfile(user_id=user_id)
    if doc is None:
        return UserProfile(user_id=user_id)
    profile = UserProfile.from_dict(doc)
    profile.returning = True
    return profile


def profile_save(store: FileStore, profile: UserProfile) -> None:
    if not profile.user_id:
        raise ValueError("user_id must be non-empty")
    try:
        store.put(Namespace.PROFILE, profile.user_id, profile.to_dict())
    except StorageError as err:
        log.warning("profile save failed for %s: %s", profile.user_id, err)


# ---------------------------------------------------------------------------
# Conversation logs (JSON lines, one turn per line, terminal rating line).
# ---------------------------------------------------------------------------

class EntryMethod(str, Enum):
    OPEN_QUESTION = "OPEN_QUESTION"
    TOPIC_PROPOSAL = "TOPIC_PROPOSAL"
    OTHER = "OTHER"


@dataclass
class TurnRecord:
    conversation_id: str
    turn_index: int
    module_id: str
    entry_method: EntryMethod = EntryMethod.OTHER
    proposal_event: dict | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.conversation_id:
            raise ValueError("conversation_id must be non-empty")
        if self.turn_index < 0:
            raise ValueError("turn_index must be >= 0")
        if not self.module_id:
            raise ValueError("module_id must be non-empty")
        self.entry_method = EntryMethod(self.entry_method)
        if self.proposal_event is not None:
            if (
                not isinstance(self.proposal_event, dict)
                or not self.proposal_event.get("topic")
                or not isinstance(self.proposal_event.get("accepted"), bool)
            ):
                raise ValueError("proposal_event needs topic and boolean accepted")

    def to_line(self) -> dict:
        line = {
            "type": "turn",
            "conversation_id": self.conversation_id,
            "turn_index": self.turn_index,
            "module_id": self.module_id,
            "entry_method": self.entry_method.value,
        }
        if self.proposal_event is not None:
            line["proposal_event"] = dict(self.proposal_event)
        if self.extra:
            line["extra"] = self.extra
        return line


@dataclass
class RatingRecord:
    conversation_id: str
    rating: int

    def __post_init__(self):
        if not self.conversation_id:
            raise ValueError("conversation_id must be non-empty")
        if not isinstance(self.rating, int) or not 1 <= self.rating <= 5:
            raise ValueError("rating must be an integer in 1..5")

    def to_line(self) -> dict:
        return {
            "type": "rating",
            "conversation_id": self.conversation_id,
            "rating": self.rating,
        }


class LogWriter:
    """Durable JSON-lines appender; I/O failures buffer and retry later."""

    def __init__(self, data_dir: str | Path):
        self.log_dir = Path(data_dir) / "logs"
        self._pending: list[tuple[str, str]] = []

    def _flush_pending(self) -> None:
        still_pending = []
        for conversation_id, line in self._pending:
            if not self._try_write(conversation_id, line):
                still_pending.append((conversation_id, line))
        self._pending = still_pending

    def _try_write(self, conversation_id: str, line: str) -> bool:
        path = self.log_dir / f"{_encode_key(conversation_id)}.jsonl"
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")
            return True
        except OSError as err:
            log.warning("log append failed for %s (buffered): %s", conversation_id, err)
            return False

    def append(self, record: TurnRecord | RatingRecord) -> None:
        line = json.dumps({**record.to_line(), "ts": int(time.time() * 1000)},
                          ensure_ascii=False)
        self._flush_pending()
        if not self._try_write(record.conversation_id, line):
            self._pending.append((record.conversation_id, line))

    def append_turn(self, record: TurnRecord) -> None:
        self.append(record)

    def append_rating(self, conversation_id: str, rating: int) -> None:
        self.append(RatingRecord(conversation_id, rating))


@dataclass(frozen=True)
class ConversationLog:
    """Parsed view of one conversation's log file."""

    conversation_id: str
    turns: tuple[TurnRecord, ...]
    rating: int | None

    @property
    def turn_count(self) -> int:
        return len(self.turns)


def parse_log_lines(lines: Iterable[str]) -> list[dict]:
    """Tolerantly parse JSONL; a torn final line is dropped, not fatal."""
    records = []
    for raw in lines:
        raw = raw.strip()
        if not raw:
            continue
        try:
            records.append(json.loads(raw))
        except json.JSONDecodeError:
            continue
    return records


def read_conversation_log(path: str | Path) -> ConversationLog:
    path = Path(path)
    records = parse_log_lines(path.read_text(encoding="utf-8").splitlines())
    turns: list[TurnRecord] = []
    rating: int | None = None
    conversation_id = ""
    for record in records:
        if record.get("type") == "turn":
            turns.append(
                TurnRecord(
                    conversation_id=record["conversation_id"],
                    turn_index=record["turn_index"],
                    module_id=record["module_id"],
                    entry_method=EntryMethod(record.get("entry_method", "OTHER")),
                    proposal_event=record.get("proposal_event"),
                    extra=record.get("extra", {}),
                )
            )
            conversation_id = record["conversation_id"]
        elif record.get("type") == "rating":
            rating = int(record["rating"])
            conversation_id = record.get("conversation_id", conversation_id)
    return ConversationLog(
        conversation_id=conversation_id,
        turns=tuple(turns),
        rating=rating,
    )


def read_all_logs(data_dir: str | Path) -> list[ConversationLog]:
    log_dir = Path(data_dir) / "logs"
    if not log_dir.is_dir():
        return []
    return [read_conversation_log(p) for p in sorted(log_dir.glob("*.jsonl"))]


def group_log_records(records: Iterable[dict]) -> list[ConversationLog]:
    """Group a flat record stream (possibly many conversations) into logs.

    Conversations appear in first-seen order; within one conversation,
    record order is preserved, so a concatenated export of per-conversation
    files reconstructs the same logs.
    """
    turns: dict[str, list[TurnRecord]] = {}
    ratings: dict[str, int] = {}
    order: list[str] = []

    def bucket(conversation_id: str) -> list[TurnRecord]:
        if conversation_id not in turns:
            turns[conversation_id] = []
            order.append(conversation_id)
        return turns[conversation_id]

    for record in records:
        kind = record.get("type")
        conversation_id = record.get("conversation_id")
        if not conversation_id:
            continue
        if kind == "turn":
            bucket(conversation_id).append(
                TurnRecord(
                    conversation_id=conversation_id,
                    turn_index=record["turn_index"],
                    module_id=record["module_id"],
                    entry_method=EntryMethod(record.get("entry_method", "OTHER")),
                    proposal_event=record.get("proposal_event"),
                    extra=record.get("extra", {}),
                )
            )
        elif kind == "rating":
            bucket(conversation_id)
            ratings[conversation_id] = int(record["rating"])
    return [
        ConversationLog(
            conversation_id=conversation_id,
            turns=tuple(turns[conversation_id]),
            rating=ratings.get(conversation_id),
        )
        for conversation_id in order
    ]
