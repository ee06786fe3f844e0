"""Read-only ingestion of a macOS Messages ``chat.db`` store."""

from __future__ import annotations

import logging
import os
import shutil
import sqlite3
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from .attributed_body import decode_attributed_body
from .text import load_stoplist, strip_artifacts

logger = logging.getLogger(__name__)

APPLE_EPOCH = datetime(2001, 1, 1, tzinfo=timezone.utc)
NANOSECOND_THRESHOLD = 10**11
OWNER_ID = "me"

REQUIRED_TABLES = ("message", "chat", "handle", "chat_message_join")
OPTIONAL_TABLES = ("chat_handle_join",)
_REQUIRED_MESSAGE_COLUMNS = ("guid", "text", "date", "is_from_me", "handle_id")
_OPTIONAL_MESSAGE_COLUMNS = (
    "attributedBody",
    "associated_message_type",
    "associated_message_guid",
    "thread_originator_guid",
)


class StoreError(Exception):
    pass


class NotAMessageStore(StoreError):
    pass


class LockedStore(StoreError):
    pass


class Direction(str, Enum):
    INBOUND = "inbound"
    OUTBOUND = "outbound"


class MessageKind(str, Enum):
    TEXT = "text"
    TAPBACK = "tapback"
    UNKNOWN = "unknown"


class Reaction(str, Enum):
    LOVED = "Loved"
    LIKED = "Liked"
    DISLIKED = "Disliked"
    LAUGHED = "Laughed"
    EMPHASIZED = "Emphasized"
    QUESTIONED = "Questioned"


# associated_message_type codes: 2000-2005 add a reaction, 3000-3005 remove it
REACTION_CODES = {
    2000: Reaction.LOVED,
    2001: Reaction.LIKED,
    2002: Reaction.DISLIKED,
    2003: Reaction.LAUGHED,
    2004: Reaction.EMPHASIZED,
    2005: Reaction.QUESTIONED,
}
REMOVAL_OFFSET = 1000


def is_reaction_code(code: int) -> bool:
    return 2000 <= code < 3000


def is_removal_code(code: int) -> bool:
    return 3000 <= code < 4000


class SizeBucket(str, Enum):
    ONE_TO_ONE = "OneToOne"
    SMALL = "Small"
    MEDIUM = "Medium"
    LARGE = "Large"


SIZE_BUCKETS = (SizeBucket.ONE_TO_ONE, SizeBucket.SMALL, SizeBucket.MEDIUM, SizeBucket.LARGE)


def bucket_of(group_size: int) -> SizeBucket:
    """Map a chat's group size (owner included) to its size bucket."""
    if group_size < 2:
        raise ValueError(f"group_size must be >= 2, got {group_size}")
    if group_size == 2:
        return SizeBucket.ONE_TO_ONE
    if group_size <= 4:
        return SizeBucket.SMALL
    if group_size <= 8:
        return SizeBucket.MEDIUM
    return SizeBucket.LARGE


@dataclass(frozen=True)
class RawMessageRow:
    row_id: int
    raw_timestamp: int
    text: Optional[str]
    attributed_body: Optional[bytes]
    is_from_me: bool
    handle_id: int
    chat_id: int
    associated_message_type: int = 0
    associated_message_guid: Optional[str] = None
    thread_originator_guid: Optional[str] = None
    guid: str = ""


@dataclass(frozen=True)
class Message:
    id: int
    guid: str
    chat_ref: int
    sender: str
    direction: Direction
    timestamp: datetime
    body: str
    kind: MessageKind = MessageKind.TEXT
    reaction: Optional[Reaction] = None
    target_guid: Optional[str] = None
    thread_parent: Optional[str] = None

    @property
    def is_tapback(self) -> bool:
        return self.kind is not MessageKind.TEXT

    @property
    def is_inbound(self) -> bool:
        return self.direction is Direction.INBOUND


@dataclass(frozen=True)
class Chat:
    id: int
    display_name: Optional[str]
    participants: frozenset[str]
    group_size: int
    size_bucket: SizeBucket


@dataclass(frozen=True)
class Participant:
    id: str
    display_token: str


@dataclass
class IngestSummary:
    rows_read: int = 0
    messages_kept: int = 0
    tapbacks_expanded: int = 0
    skipped_rows: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "rows_read": self.rows_read,
            "messages_kept": self.messages_kept,
            "tapbacks_expanded": self.tapbacks_expanded,
            "skipped_rows": self.skipped_rows,
        }


@dataclass
class IngestResult:
    messages: list[Message]
    chats: list[Chat]
    participants: list[Participant]
    summary: IngestSummary

    def chat_map(self) -> dict[int, Chat]:
        return {c.id: c for c in self.chats}


@dataclass
class IngestOptions:
    stoplist: frozenset[str] = field(default_factory=load_stoplist)


def convert_timestamp(raw: int) -> datetime:
    """Convert an Apple-epoch timestamp to an aware UTC datetime.

    Values at or above 1e11 are nanoseconds (High Sierra and later), smaller
    values are seconds. Sub-second precision is truncated.
    """
    seconds = raw // 1_000_000_000 if raw >= NANOSECOND_THRESHOLD else raw
    return APPLE_EPOCH + timedelta(seconds=int(seconds))


def to_apple_timestamp(ts: datetime, nanoseconds: bool = True) -> int:
    """Inverse of :func:`convert_timestamp` at second resolution."""
    seconds = int((ts - APPLE_EPOCH).total_seconds())
    return seconds * 1_000_000_000 if nanoseconds else seconds


def extract_text(row: RawMessageRow, artifact_stoplist: Iterable[str]) -> Optional[str]:
    """Recover the readable body of ``row``, or None if nothing textual remains."""
    for candidate in (row.text, decode_attributed_body(row.attributed_body)):
        if candidate is None or not candidate.strip():
            continue
        # U+FFFC is the inline attachment placeholder; NUL bytes are blob debris
        cleaned = strip_artifacts(candidate.replace("￼", "").replace("\x00", ""), artifact_stoplist)
        if cleaned.strip():
            return cleaned
    return None


def strip_guid_prefix(guid: Optional[str]) -> Optional[str]:
    """``p:0/GUID`` and ``bp:GUID`` both reference ``GUID``."""
    if not guid:
        return None
    if "/" in guid:
        guid = guid.split("/", 1)[1]
    elif guid.startswith("bp:"):
        guid = guid[3:]
    return guid or None


def decode_tapback(row: RawMessageRow, target_body: str, sender: str) -> Message:
    """Turn a reaction row into its own Message with a synthesized body."""
    reaction = REACTION_CODES.get(row.associated_message_type)
    if reaction is None:
        kind, body = MessageKind.UNKNOWN, f'Reacted to "{target_body}"'
    else:
        kind, body = MessageKind.TAPBACK, f'{reaction.value} "{target_body}"'
    return Message(
        id=row.row_id,
        guid=row.guid,
        chat_ref=row.chat_id,
        sender=OWNER_ID if row.is_from_me else sender,
        direction=Direction.OUTBOUND if row.is_from_me else Direction.INBOUND,
        timestamp=convert_timestamp(row.raw_timestamp),
        body=body,
        kind=kind,
        reaction=reaction,
        target_guid=strip_guid_prefix(row.associated_message_guid),
        thread_parent=row.thread_originator_guid or None,
    )


class StoreHandle:
    """Read-only connection to a message store.

    Use :func:`open_store` to construct. Works as a context manager.
    """

    def __init__(self, conn: sqlite3.Connection, path: Path, tables: frozenset[str],
                 message_columns: frozenset[str], tmpdir: Optional[str] = None):
        self.conn = conn
        self.path = path
        self.tables = tables
        self.message_columns = message_columns
        self._tmpdir = tmpdir

    def close(self) -> None:
        self.conn.close()
        if self._tmpdir is not None:
            shutil.rmtree(self._tmpdir, ignore_errors=True)
            self._tmpdir = None

    def __enter__(self) -> "StoreHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _locked(err: sqlite3.Error) -> bool:
    msg = str(err).lower()
    return "locked" in msg or "busy" in msg


def open_store(path: str | os.PathLike, copy: bool = False, timeout: float = 2.0) -> StoreHandle:
    """Open a chat.db-style store read-only.

    Args:
        path: store file.
        copy: copy the file (plus any -wal/-shm siblings) to a temporary
            directory first, sidestepping OS-level locks on the original.
        timeout: seconds to wait on a locked database before giving up.

    Raises:
        FileNotFoundError, NotAMessageStore, LockedStore
    """
    src = Path(path)
    if not src.is_file():
        raise FileNotFoundError(f"message store not found: {src}")

    tmpdir = None
    target = src
    if copy:
        tmpdir = tempfile.mkdtemp(prefix="imsg-store-")
        target = Path(tmpdir) / src.name
        shutil.copy2(src, target)
        for suffix in ("-wal", "-shm"):
            sib = src.with_name(src.name + suffix)
            if sib.exists():
                shutil.copy2(sib, target.with_name(target.name + suffix))

    def fail(exc: Exception) -> None:
        if tmpdir is not None:
            shutil.rmtree(tmpdir, ignore_errors=True)
        raise exc

    try:
        conn = sqlite3.connect(f"{target.resolve().as_uri()}?mode=ro", uri=True, timeout=timeout)
    except sqlite3.Error as err:
        fail(NotAMessageStore(f"{src}: cannot open as SQLite database ({err})"))
    try:
        rows = conn.execute("SELECT name FROM sqlite_master WHERE type = 'table'").fetchall()
        tables = frozenset(r[0] for r in rows)
        missing = [t for t in REQUIRED_TABLES if t not in tables]
        if missing:
            raise NotAMessageStore(f"{src}: missing tables {', '.join(missing)}")
        columns = frozenset(r[1] for r in conn.execute("PRAGMA table_info(message)"))
        missing = [c for c in _REQUIRED_MESSAGE_COLUMNS if c not in columns]
        if missing:
            raise NotAMessageStore(f"{src}: message table lacks columns {', '.join(missing)}")
    except sqlite3.DatabaseError as err:
        conn.close()
        if _locked(err):
            fail(LockedStore(f"{src}: store is locked by another process ({err})"))
        fail(NotAMessageStore(f"{src}: not a message store ({err})"))
    except NotAMessageStore as err:
        conn.close()
        fail(err)
    recognized = frozenset(t for t in REQUIRED_TABLES + OPTIONAL_TABLES if t in tables)
    return StoreHandle(conn, src, recognized, columns, tmpdir)


def _fetch_rows(store: StoreHandle) -> list[tuple]:
    cols = ["m.ROWID", "m.guid", "m.text", "m.date", "m.is_from_me", "m.handle_id"]
    for name in _OPTIONAL_MESSAGE_COLUMNS:
        cols.append(f"m.{name}" if name in store.message_columns else "NULL")
    sql = (
        f"SELECT {', '.join(cols)}, MIN(cmj.chat_id) "
        "FROM message m LEFT JOIN chat_message_join cmj ON cmj.message_id = m.ROWID "
        "GROUP BY m.ROWID ORDER BY m.ROWID"
    )
    return store.conn.execute(sql).fetchall()


def _to_raw(row: tuple) -> Optional[RawMessageRow]:
    rowid, guid, text, date, from_me, handle_id, body, assoc_type, assoc_guid, thread, chat_id = row
    if chat_id is None or not isinstance(date, int) or date < 0:
        return None
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError:
            text = None
    return RawMessageRow(
        row_id=int(rowid),
        raw_timestamp=date,
        text=text if isinstance(text, str) else None,
        attributed_body=bytes(body) if isinstance(body, (bytes, memoryview)) else None,
        is_from_me=bool(from_me),
        handle_id=int(handle_id or 0),
        chat_id=int(chat_id),
        associated_message_type=int(assoc_type or 0),
        associated_message_guid=assoc_guid,
        thread_originator_guid=thread,
        guid=guid or f"row-{rowid}",
    )


def ingest(store: StoreHandle, opts: Optional[IngestOptions] = None) -> IngestResult:
    """Decode every message row into Messages, Chats and Participants.

    Rows with no recoverable text or broken linkage are skipped and counted;
    reaction removals are dropped silently.
    """
    opts = opts or IngestOptions()
    conn = store.conn
    summary = IngestSummary()
    try:
        handles = {int(r): str(h) for r, h in conn.execute("SELECT ROWID, id FROM handle")}
        chat_names = {int(r): n for r, n in conn.execute("SELECT ROWID, display_name FROM chat")}
        joined: dict[int, set[str]] = {}
        if "chat_handle_join" in store.tables:
            for chat_id, handle_id in conn.execute("SELECT chat_id, handle_id FROM chat_handle_join"):
                if handle_id in handles:
                    joined.setdefault(int(chat_id), set()).add(handles[handle_id])
        rows = _fetch_rows(store)
    except sqlite3.DatabaseError as err:
        if _locked(err):
            raise LockedStore(f"{store.path}: store is locked by another process ({err})") from err
        raise NotAMessageStore(f"{store.path}: {err}") from err

    def sender_of(raw: RawMessageRow) -> str:
        if raw.is_from_me:
            return OWNER_ID
        return handles.get(raw.handle_id, f"handle-{raw.handle_id}")

    messages: list[Message] = []
    reactions: list[RawMessageRow] = []
    bodies: dict[str, str] = {}
    for row in rows:
        summary.rows_read += 1
        raw = _to_raw(row)
        if raw is None:
            summary.skipped_rows += 1
            continue
        code = raw.associated_message_type
        if is_removal_code(code):
            continue
        if is_reaction_code(code):
            reactions.append(raw)
            continue
        body = extract_text(raw, opts.stoplist)
        if body is None:
            summary.skipped_rows += 1
            continue
        bodies[raw.guid] = body
        messages.append(
            Message(
                id=raw.row_id,
                guid=raw.guid,
                chat_ref=raw.chat_id,
                sender=sender_of(raw),
                direction=Direction.OUTBOUND if raw.is_from_me else Direction.INBOUND,
                timestamp=convert_timestamp(raw.raw_timestamp),
                body=body,
                thread_parent=raw.thread_originator_guid or None,
            )
        )
    for raw in reactions:
        target = bodies.get(strip_guid_prefix(raw.associated_message_guid) or "", "")
        messages.append(decode_tapback(raw, target, sender_of(raw)))
        summary.tapbacks_expanded += 1

    messages.sort(key=lambda m: (m.chat_ref, m.timestamp, m.id))
    summary.messages_kept = len(messages)

    members: dict[int, set[str]] = {}
    for m in messages:
        people = members.setdefault(m.chat_ref, set(joined.get(m.chat_ref, ())))
        if m.is_inbound:
            people.add(m.sender)
    chats = []
    for chat_id in sorted(members):
        people = frozenset(members[chat_id])
        size = max(2, len(people) + 1)
        chats.append(Chat(chat_id, chat_names.get(chat_id), people, size, bucket_of(size)))
    everyone = sorted(set().union(*members.values())) if members else []
    participants = [Participant(p, p) for p in everyone]
    logger.info("ingested %s", summary.as_dict())
    return IngestResult(messages, chats, participants, summary)


def load(path: str | os.PathLike, copy: bool = False, stoplist: Optional[frozenset[str]] = None) -> IngestResult:
    """open_store + ingest convenience wrapper."""
    opts = IngestOptions() if stoplist is None else IngestOptions(stoplist=stoplist)
    with open_store(path, copy=copy) as store:
        return ingest(store, opts)
