"""Tests for the persistence store and content-pack ingestion."""

import json

import pytest

from convokernel import content, fsm
from convokernel.adaptation import Gender, UserProfile
from convokernel.content import (
    ConversationLog,
    EntryMethod,
    FileStore,
    LogWriter,
    Namespace,
    PackKind,
    PackManager,
    RatingRecord,
    TurnRecord,
)
from convokernel.errors import PackValidationError, StorageError


@pytest.fixture()
def store(tmp_path):
    return FileStore(tmp_path)


@pytest.fixture()
def packs(tmp_path):
    return PackManager(tmp_path)


class TestFileStore:
    def test_round_trip(self, store):
        store.put(Namespace.SESSION, "conv-1", {"a": 1, "nested": {"b": [1, 2]}})
        assert store.get(Namespace.SESSION, "conv-1") == {"a": 1, "nested": {"b": [1, 2]}}

    def test_missing_key_is_none(self, store):
        assert store.get(Namespace.PROFILE, "ghost") is None

    def test_last_write_wins(self, store):
        store.put(Namespace.SESSION, "k", {"v": 1})
        store.put(Namespace.SESSION, "k", {"v": 2})
        assert store.get(Namespace.SESSION, "k") == {"v": 2}

    def test_keys_listing(self, store):
        store.put(Namespace.PROFILE, "alice", {})
        store.put(Namespace.PROFILE, "bob", {})
        assert store.keys(Namespace.PROFILE) == ["alice", "bob"]

    def test_unusual_keys_are_safe(self, store):
        key = "user/with:odd chars?"
        store.put(Namespace.SESSION, key, {"ok": True})
        assert store.get(Namespace.SESSION, key) == {"ok": True}

    def test_delete(self, store):
        store.put(Namespace.SESSION, "gone", {})
        store.delete(Namespace.SESSION, "gone")
        assert store.get(Namespace.SESSION, "gone") is None

    def test_no_torn_files_on_disk(self, store, tmp_path):
        store.put(Namespace.SESSION, "k", {"v": "x" * 10000})
        leftovers = list(tmp_path.rglob("*.tmp.*"))
        assert leftovers == []


class TestProfilePersistence:
    def test_unknown_user_fresh_profile(self, store):
        profile = content.profile_load(store, "new-user")
        assert profile.user_id == "new-user"
        assert profile.returning is False
        assert profile.total_turns == 0

    def test_save_then_load_round_trips_and_marks_returning(self, store):
        profile = UserProfile(
            user_id="u1",
            name="sam",
            predicted_gender=Gender.FEMALE,
            preferred_topics=["music", "food"],
            dominant_turns=3,
            total_turns=7,
        )
        profile.mark_topic_used("music")
        content.profile_save(store, profile)
        loaded = content.profile_load(store, "u1")
        assert loaded.returning is True
        assert loaded.name == "sam"
        assert loaded.predicted_gender is Gender.FEMALE
        assert loaded.preferred_topics == ["music", "food"]
        assert loaded.used_topics == {"music"}
        assert loaded.dominant_turns == 3
        assert loaded.total_turns == 7

    def test_empty_user_id_rejected(self, store):
        with pytest.raises(ValueError):
            content.profile_load(store, "")

    def test_io_failure_degrades_to_memory(self, tmp_path):
        class BrokenStore(FileStore):
            def get(self, namespace, key):
                raise StorageError("disk on fire")

        profile = content.profile_load(BrokenStore(tmp_path), "u1")
        assert profile.user_id == "u1"
        assert profile.returning is False


def minimal_pack(kind: PackKind) -> dict:
    if kind is PackKind.PAA:
        return {"version": 1, "topics": {"steak": [
            {"q": "Is steak good for health?", "a": "In moderation, it offers protein and iron."},
        ]}}
    if kind is PackKind.DEBATE:
        return {"version": 1, "topics": {"school-uniforms": {
            "topic": "school uniforms",
            "pro": ["they reduce distraction"],
            "con": ["they limit self expression"],
        }}}
    if kind is PackKind.MOVIE_CATALOG:
        return {"version": 1, "movies": [
            {"id": "m1", "title": "Star Trip", "keywords": ["space"], "popularity": 1},
        ]}
    if kind is PackKind.GAME_CATALOG:
        return {"version": 1, "games": [
            {"id": "g1", "title": "Animal Crossing", "facts": ["house upgrades cost bells"],
             "recommended": True},
        ]}
    if kind is PackKind.NEWS:
        return {"version": 1, "items": [
            {"id": "n1", "topic_keywords": ["space"], "chunks": ["A probe launched."]},
        ]}
    if kind is PackKind.BACKSTORY:
        return {"version": 1, "entries": [
            {"patterns": ["favorite color"], "answer": "I like teal."},
        ]}
    if kind is PackKind.FACTS:
        return {"version": 1, "facts": {"tallest mountain": "Mount Everest"}}
    if kind is PackKind.NAME_DB:
        return {"version": 1, "names": {"emma": {"male": 0, "female": 100}}}
    if kind is PackKind.TEMPLATES:
        return {"version": 1, "templates": {"demo.hi": {"surfaces": ["Hi!"]}}}
    if kind is PackKind.FLOWS:
        return {"version": 1, "flows": [{
            "module": "demo",
            "states": {"a": {"handler": "say", "args": {"text": "hi"}}},
            "entry_points": {"other_entry": "a"},
        }]}
    if kind is PackKind.LEXICON:
        return {"version": 1, "name": "extra_words", "entries": ["word"]}
    raise AssertionError(kind)


class TestPackIngestion:
    @pytest.mark.parametrize("kind", list(PackKind))
    def test_every_kind_ingests_and_reloads(self, packs, tmp_path, kind):
        path = tmp_path / "pack.json"
        path.write_text(json.dumps(minimal_pack(kind)))
        version = packs.ingest_pack(path, kind)
        assert version == 1
        assert packs.active_version(kind) == 1
        loaded = packs.load_active(kind)
        # Activated packs re-validate cleanly when re-read.
        assert content.validate_pack(kind, loaded) == []

    def test_versions_increase(self, packs, tmp_path):
        path = tmp_path / "paa.json"
        path.write_text(json.dumps(minimal_pack(PackKind.PAA)))
        assert packs.ingest_pack(path, PackKind.PAA) == 1
        assert packs.ingest_pack(path, PackKind.PAA) == 2
        assert packs.active_version(PackKind.PAA) == 2
        assert packs.versions(PackKind.PAA) == [1, 2]

    def test_invalid_pack_rejected_with_itemized_errors(self, packs, tmp_path):
        bad = {"version": 1, "topics": {"steak": [{"q": "only a question"}]}}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        with pytest.raises(PackValidationError) as err:
            packs.ingest_pack(path, PackKind.PAA)
        assert any("q and a" in p for p in err.value.problems)
        assert packs.active_version(PackKind.PAA) is None

    def test_duplicate_template_key_rejected_by_name(self, packs, tmp_path):
        text = (
            '{"version": 1, "templates": {'
            '"demo.hi": {"surfaces": ["Hi!"]}, '
            '"demo.hi": {"surfaces": ["Hello!"]}}}'
        )
        path = tmp_path / "tpl.json"
        path.write_text(text)
        with pytest.raises(PackValidationError) as err:
            packs.ingest_pack(path, PackKind.TEMPLATES)
        assert any("demo.hi" in p for p in err.value.problems)

    def test_flow_pack_validated_via_flow_checker(self, packs, tmp_path):
        bad_flow = {"version": 1, "flows": [{
            "module": "demo",
            "states": {"a": {
                "handler": "say",
                "args": {"text": "hi"},
                "transitions": [{"target": "missing", "timing": "NEXT_TURN"}],
            }},
            "entry_points": {"other_entry": "a"},
        }]}
        path = tmp_path / "flows.json"
        path.write_text(json.dumps(bad_flow))
        with pytest.raises(PackValidationError) as err:
            packs.ingest_pack(path, PackKind.FLOWS)
        assert any("DANGLING" in p and "missing" in p for p in err.value.problems)

    def test_rollback_restores_byte_identical_payload(self, packs, tmp_path):
        path = tmp_path / "paa.json"
        path.write_text(json.dumps(minimal_pack(PackKind.PAA)))
        packs.ingest_pack(path, PackKind.PAA)
        v1_bytes = packs.pack_text(PackKind.PAA, 1)

        richer = minimal_pack(PackKind.PAA)
        richer["topics"]["pasta"] = [{"q": "Is pasta italian?", "a": "Yes, historically."}]
        path.write_text(json.dumps(richer))
        packs.ingest_pack(path, PackKind.PAA)
        assert packs.active_version(PackKind.PAA) == 2

        packs.rollback(PackKind.PAA, 1)
        assert packs.active_version(PackKind.PAA) == 1
        assert packs.pack_text(PackKind.PAA, 1) == v1_bytes

    def test_rollback_to_missing_version_fails(self, packs):
        with pytest.raises(StorageError):
            packs.rollback(PackKind.PAA, 7)

    def test_ingest_stamps_sequential_version_field(self, packs, tmp_path):
        doc = minimal_pack(PackKind.FACTS)
        doc["version"] = 99  # author's number is replaced by the store's sequence
        path = tmp_path / "facts.json"
        path.write_text(json.dumps(doc))
        packs.ingest_pack(path, PackKind.FACTS)
        assert packs.load_active(PackKind.FACTS)["version"] == 1

    def test_flow_pack_accepts_custom_registry(self, tmp_path):
        registry = fsm.register_core_handlers(fsm.HandlerRegistry())
        registry.register("shout", lambda args: lambda t: ("HEY", None))
        manager = PackManager(tmp_path, flow_registry=registry)
        doc = {"version": 1, "flows": [{
            "module": "demo",
            "states": {"a": {"handler": "shout"}},
            "entry_points": {"other_entry": "a"},
        }]}
        path = tmp_path / "flows.json"
        path.write_text(json.dumps(doc))
        assert manager.ingest_pack(path, PackKind.FLOWS) == 1


class TestConversationLogs:
    def test_one_line_per_turn_plus_rating(self, tmp_path):
        writer = LogWriter(tmp_path)
        for i in range(5):
            writer.append_turn(TurnRecord("c1", i, "movie"))
        writer.append_rating("c1", 4)
        lines = (tmp_path / "logs" / "c1.jsonl").read_text().splitlines()
        assert len(lines) == 6
        parsed = [json.loads(line) for line in lines]
        assert [p["type"] for p in parsed] == ["turn"] * 5 + ["rating"]
        assert parsed[-1]["rating"] == 4

    def test_round_trip_through_reader(self, tmp_path):
        writer = LogWriter(tmp_path)
        writer.append_turn(TurnRecord("c2", 0, "greeting", EntryMethod.OTHER))
        writer.append_turn(TurnRecord(
            "c2", 1, "movie", EntryMethod.TOPIC_PROPOSAL,
            proposal_event={"topic": "movie", "accepted": True},
        ))
        writer.append_rating("c2", 5)
        log = content.read_conversation_log(tmp_path / "logs" / "c2.jsonl")
        assert log.conversation_id == "c2"
        assert log.turn_count == 2
        assert log.rating == 5
        assert log.turns[1].proposal_event == {"topic": "movie", "accepted": True}
        assert log.turns[1].entry_method is EntryMethod.TOPIC_PROPOSAL

    def test_malformed_record_rejected_at_construction(self):
        with pytest.raises(ValueError):
            TurnRecord("", 0, "movie")
        with pytest.raises(ValueError):
            TurnRecord("c", -1, "movie")
        with pytest.raises(ValueError):
            TurnRecord("c", 0, "movie", proposal_event={"topic": "x"})
        with pytest.raises(ValueError):
            RatingRecord("c", 6)
        with pytest.raises(ValueError):
            RatingRecord("c", 0)

    def test_torn_final_line_is_dropped(self, tmp_path):
        writer = LogWriter(tmp_path)
        writer.append_turn(TurnRecord("c3", 0, "food"))
        path = tmp_path / "logs" / "c3.jsonl"
        with path.open("a") as handle:
            handle.write('{"type": "turn", "conversation_id": "c3", "turn')
        log = content.read_conversation_log(path)
        assert log.turn_count == 1

    def test_read_all_logs(self, tmp_path):
        writer = LogWriter(tmp_path)
        writer.append_turn(TurnRecord("a", 0, "movie"))
        writer.append_turn(TurnRecord("b", 0, "food"))
        logs = content.read_all_logs(tmp_path)
        assert sorted(l.conversation_id for l in logs) == ["a", "b"]
        assert all(isinstance(l, ConversationLog) for l in logs)

    def test_io_failure_buffers_and_retries(self, tmp_path, monkeypatch):
        writer = LogWriter(tmp_path)
        real = LogWriter._try_write
        fail = {"on": True}

        def flaky(self, conversation_id, line):
            if fail["on"]:
                return False
            return real(self, conversation_id, line)

        monkeypatch.setattr(LogWriter, "_try_write", flaky)
        writer.append_turn(TurnRecord("c4", 0, "movie"))  # buffered
        assert not (tmp_path / "logs" / "c4.jsonl").exists()
        fail["on"] = False
        writer.append_turn(TurnRecord("c4", 1, "movie"))  # flushes both
        lines = (tmp_path / "logs" / "c4.jsonl").read_text().splitlines()
        assert len(lines) == 2
        assert [json.loads(l)["turn_index"] for l in lines] == [0, 1]
