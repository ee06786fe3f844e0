import hashlib
import sqlite3
from datetime import datetime, timedelta, timezone

import pytest

from imsg_insight.attributed_body import encode_attributed_body
from imsg_insight.store import (
    OWNER_ID,
    REQUIRED_TABLES,
    Direction,
    LockedStore,
    MessageKind,
    NotAMessageStore,
    RawMessageRow,
    Reaction,
    SizeBucket,
    bucket_of,
    convert_timestamp,
    extract_text,
    load,
    open_store,
    strip_guid_prefix,
    to_apple_timestamp,
)
from imsg_insight.synth import FIXTURE_CHAT_SIZES, START, StoreRow, StoreSpec, write_store
from imsg_insight.text import load_stoplist

UTC = timezone.utc
STOP = load_stoplist()


def _store(tmp_path, chats, rows, **kw):
    return write_store(tmp_path / "chat.db", StoreSpec(chats=chats, rows=rows, **kw))


def _row(**kw):
    base = dict(row_id=1, raw_timestamp=0, text=None, attributed_body=None, is_from_me=False, handle_id=1, chat_id=1)
    base.update(kw)
    return RawMessageRow(**base)


# -- timestamps ---------------------------------------------------------------

@pytest.mark.parametrize("raw, expected", [
    (0, datetime(2001, 1, 1, tzinfo=UTC)),
    # 978307200 + 600000000 POSIX seconds
    (600_000_000, datetime(2020, 1, 6, 10, 40, tzinfo=UTC)),
    (600_000_000_000_000_000, datetime(2020, 1, 6, 10, 40, tzinfo=UTC)),
    (600_000_000_999_999_999, datetime(2020, 1, 6, 10, 40, tzinfo=UTC)),
])
def test_convert_timestamp(raw, expected):
    assert convert_timestamp(raw) == expected


def test_timestamp_oracle_by_epoch_arithmetic():
    # independent route: POSIX seconds of the Apple epoch is 978307200
    for raw in (1, 86_399, 599_999_999, 700_000_000):
        assert convert_timestamp(raw).timestamp() == 978_307_200 + raw


def test_apple_timestamp_inverse():
    ts = datetime(2023, 5, 17, 12, 34, 56, tzinfo=UTC)
    assert convert_timestamp(to_apple_timestamp(ts, True)) == ts
    assert convert_timestamp(to_apple_timestamp(ts, False)) == ts


# -- text extraction ------------------------------------------------------------

def test_extract_text_prefers_text_column():
    assert extract_text(_row(text="see you at 5"), STOP) == "see you at 5"


def test_extract_text_falls_back_to_blob():
    row = _row(text=None, attributed_body=encode_attributed_body("on my way"))
    assert extract_text(row, STOP) == "on my way"


def test_extract_text_blank_text_uses_blob():
    row = _row(text="   ", attributed_body=encode_attributed_body("on my way"))
    assert extract_text(row, STOP) == "on my way"


def test_extract_text_artifacts_only_is_absent():
    assert extract_text(_row(text="bplist00 NSString tdate"), STOP) is None


def test_extract_text_drops_attachment_placeholder():
    assert extract_text(_row(text="￼"), STOP) is None
    assert extract_text(_row(text="look￼"), STOP) == "look"


def test_extract_text_removes_nul():
    assert extract_text(_row(text="hi\x00 there"), STOP) == "hi there"


def test_extract_text_undecodable_blob():
    assert extract_text(_row(attributed_body=b"\x00\x01garbage"), STOP) is None


@pytest.mark.parametrize("raw, expected", [
    ("p:0/ABC-123", "ABC-123"),
    ("p:2/ABC", "ABC"),
    ("bp:ABC", "ABC"),
    ("ABC", "ABC"),
    (None, None),
    ("", None),
])
def test_strip_guid_prefix(raw, expected):
    assert strip_guid_prefix(raw) == expected


# -- buckets -------------------------------------------------------------------------

@pytest.mark.parametrize("size, bucket", [
    (2, SizeBucket.ONE_TO_ONE), (3, SizeBucket.SMALL), (4, SizeBucket.SMALL), (5, SizeBucket.MEDIUM),
    (8, SizeBucket.MEDIUM), (9, SizeBucket.LARGE), (40, SizeBucket.LARGE),
])
def test_bucket_of(size, bucket):
    assert bucket_of(size) is bucket


def test_bucket_of_rejects_singletons():
    with pytest.raises(ValueError):
        bucket_of(1)


# -- opening -------------------------------------------------------------------------

def test_open_fixture_recognizes_tables(fixture_db):
    with open_store(fixture_db) as store:
        assert set(REQUIRED_TABLES) <= store.tables
        assert len(REQUIRED_TABLES) == 4


def test_open_without_handle_join_has_four_tables(tmp_path):
    path = _store(tmp_path, {1: ["+1"]}, [StoreRow("a", 1, START, "+1", text="hi")], chat_handle_join=False)
    with open_store(path) as store:
        assert store.tables == frozenset(REQUIRED_TABLES)


def test_missing_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.db"):
        open_store(tmp_path / "nope.db")


def test_empty_file_is_not_a_store(tmp_path):
    path = tmp_path / "empty.db"
    path.write_bytes(b"")
    with pytest.raises(NotAMessageStore):
        open_store(path)


def test_foreign_database_is_not_a_store(tmp_path):
    path = tmp_path / "other.db"
    with sqlite3.connect(path) as conn:
        conn.execute("CREATE TABLE notes (id INTEGER, body TEXT)")
    with pytest.raises(NotAMessageStore, match="missing tables"):
        open_store(path)


def test_text_file_is_not_a_store(tmp_path):
    path = tmp_path / "junk.db"
    path.write_text("definitely not sqlite " * 100)
    with pytest.raises(NotAMessageStore):
        open_store(path)


def test_locked_store_fails_fast(fixture_db, tmp_path):
    path = tmp_path / "locked.db"
    path.write_bytes(fixture_db.read_bytes())
    holder = sqlite3.connect(path, isolation_level=None)
    holder.execute("BEGIN EXCLUSIVE")
    try:
        started = datetime.now()
        with pytest.raises(LockedStore):
            with open_store(path, timeout=0.1) as store:
                store.conn.execute("SELECT COUNT(*) FROM message").fetchone()
        assert datetime.now() - started < timedelta(seconds=5)
        # a copy sidesteps the lock
        assert len(load(path, copy=True).messages) == 197
    finally:
        holder.execute("ROLLBACK")
        holder.close()


def test_ingest_never_writes_to_the_store(fixture_db):
    before = hashlib.sha256(fixture_db.read_bytes()).hexdigest()
    load(fixture_db)
    load(fixture_db, copy=True)
    assert hashlib.sha256(fixture_db.read_bytes()).hexdigest() == before
    assert not fixture_db.with_name(fixture_db.name + "-journal").exists()


# -- ingestion -------------------------------------------------------------------------

def test_fixture_counts(fixture_ingest):
    assert fixture_ingest.summary.as_dict() == {
        "rows_read": 200, "messages_kept": 197, "tapbacks_expanded": 12, "skipped_rows": 3,
    }
    assert len(fixture_ingest.messages) == 197
    assert sum(m.is_tapback for m in fixture_ingest.messages) == 12


def test_fixture_buckets(fixture_ingest):
    sizes = {c.id: (c.group_size, c.size_bucket) for c in fixture_ingest.chats}
    assert sizes == {
        1: (2, SizeBucket.ONE_TO_ONE), 2: (4, SizeBucket.SMALL),
        3: (6, SizeBucket.MEDIUM), 4: (10, SizeBucket.LARGE),
    }
    assert {c.id: c.group_size for c in fixture_ingest.chats} == FIXTURE_CHAT_SIZES


def test_messages_sorted_by_chat_time_id(fixture_ingest):
    keys = [(m.chat_ref, m.timestamp, m.id) for m in fixture_ingest.messages]
    assert keys == sorted(keys)


def test_blob_only_bodies_recovered(fixture_db, fixture_ingest):
    with sqlite3.connect(fixture_db) as conn:
        blob_guids = {g for (g,) in conn.execute(
            "SELECT guid FROM message WHERE text IS NULL AND attributedBody IS NOT NULL "
            "AND guid LIKE 'MSG-%'")}
    assert blob_guids
    by_guid = {m.guid: m for m in fixture_ingest.messages}
    for guid in blob_guids:
        assert by_guid[guid].body.strip()


def test_minimal_one_to_one_store(tmp_path):
    rows = [StoreRow("a", 1, START, "+15550001", text="hi"),
            StoreRow("b", 1, START + timedelta(minutes=3), None, text="hey you")]
    result = load(_store(tmp_path, {1: ["+15550001"]}, rows))
    assert len(result.messages) == 2
    assert len(result.chats) == 1
    assert result.chats[0].size_bucket is SizeBucket.ONE_TO_ONE
    inbound, outbound = result.messages
    assert inbound.direction is Direction.INBOUND and inbound.sender == "+15550001"
    assert outbound.direction is Direction.OUTBOUND and outbound.sender == OWNER_ID


def test_ten_person_chat_is_large(tmp_path):
    members = [f"+1555000{i}" for i in range(9)]
    rows = [StoreRow(f"g{i}", 1, START + timedelta(minutes=i), members[i], text="yo") for i in range(3)]
    result = load(_store(tmp_path, {1: members}, rows))
    assert result.chats[0].group_size == 10
    assert result.chats[0].size_bucket is SizeBucket.LARGE


def test_participants_include_senders_missing_from_join(tmp_path):
    rows = [StoreRow("a", 1, START, "+1", text="hi"), StoreRow("b", 1, START, "+2", text="hello")]
    result = load(_store(tmp_path, {1: ["+1"]}, rows))
    assert result.chats[0].participants == frozenset({"+1", "+2"})
    assert result.chats[0].group_size == 3


def test_seconds_resolution_store(tmp_path):
    ts = datetime(2019, 7, 4, 18, 30, 5, tzinfo=UTC)
    rows = [StoreRow("a", 1, ts, "+1", text="hi")]
    result = load(_store(tmp_path, {1: ["+1"]}, rows, nanoseconds=False))
    assert result.messages[0].timestamp == ts


def _reaction_store(tmp_path, code, target_text="great news"):
    rows = [
        StoreRow("T", 1, START, "+1", text=target_text),
        StoreRow("R", 1, START + timedelta(minutes=5), None, reaction_code=code, target_guid="T",
                 text=f"Loved “{target_text}”"),
    ]
    return load(_store(tmp_path, {1: ["+1"]}, rows))


def test_love_tapback(tmp_path):
    result = _reaction_store(tmp_path, 2000)
    tap = result.messages[1]
    assert tap.kind is MessageKind.TAPBACK and tap.reaction is Reaction.LOVED
    assert tap.body == 'Loved "great news"'
    assert tap.target_guid == "T"
    assert tap.direction is Direction.OUTBOUND
    assert result.summary.tapbacks_expanded == 1


@pytest.mark.parametrize("code, verb", [(2001, "Liked"), (2002, "Disliked"), (2003, "Laughed"),
                                        (2004, "Emphasized"), (2005, "Questioned")])
def test_reaction_verbs(tmp_path, code, verb):
    assert _reaction_store(tmp_path, code).messages[1].body == f'{verb} "great news"'


def test_reaction_removal_is_dropped(tmp_path):
    result = _reaction_store(tmp_path, 3000)
    assert [m.guid for m in result.messages] == ["T"]
    assert result.summary.tapbacks_expanded == 0


def test_unknown_reaction_code(tmp_path):
    result = _reaction_store(tmp_path, 2999, target_text="hi")
    tap = result.messages[1]
    assert tap.kind is MessageKind.UNKNOWN
    assert tap.reaction is None
    assert tap.body == 'Reacted to "hi"'
    assert tap.is_tapback


def test_thread_parent_is_carried(tmp_path):
    rows = [StoreRow("P", 1, START, "+1", text="question?"),
            StoreRow("C", 1, START + timedelta(hours=30), None, text="answer", thread_parent="P")]
    result = load(_store(tmp_path, {1: ["+1"]}, rows))
    assert result.messages[1].thread_parent == "P"


def test_rows_without_chat_are_skipped(tmp_path):
    path = _store(tmp_path, {1: ["+1"]}, [StoreRow("a", 1, START, "+1", text="hi")])
    with sqlite3.connect(path) as conn:
        conn.execute("INSERT INTO message (guid, text, handle_id, date, is_from_me) VALUES ('orphan', 'x', 1, 0, 0)")
    result = load(path)
    assert result.summary.rows_read == 2
    assert result.summary.skipped_rows == 1
    assert [m.guid for m in result.messages] == ["a"]
