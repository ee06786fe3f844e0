"""Synthetic message stores and chat logs for tests and demos.

Nothing here touches real data. ``write_store`` produces a SQLite file with
the chat.db table layout the ingester reads; the generators build message
lists with known structure (planted topics, reply behavior, sentiment drift).
"""

from __future__ import annotations

import random
import sqlite3
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .attributed_body import encode_attributed_body
from .store import OWNER_ID, Chat, Direction, Message, MessageKind, Reaction, bucket_of, to_apple_timestamp
from .text import TokenDoc

SCHEMA = """
CREATE TABLE handle (ROWID INTEGER PRIMARY KEY AUTOINCREMENT, id TEXT NOT NULL, service TEXT DEFAULT 'iMessage');
CREATE TABLE chat (ROWID INTEGER PRIMARY KEY AUTOINCREMENT, guid TEXT UNIQUE NOT NULL,
                   chat_identifier TEXT, display_name TEXT);
CREATE TABLE message (ROWID INTEGER PRIMARY KEY AUTOINCREMENT, guid TEXT UNIQUE NOT NULL, text TEXT,
                      attributedBody BLOB, handle_id INTEGER DEFAULT 0, date INTEGER, is_from_me INTEGER DEFAULT 0,
                      associated_message_guid TEXT, associated_message_type INTEGER DEFAULT 0,
                      thread_originator_guid TEXT);
CREATE TABLE chat_message_join (chat_id INTEGER, message_id INTEGER, message_date INTEGER DEFAULT 0,
                                PRIMARY KEY (chat_id, message_id));
CREATE TABLE chat_handle_join (chat_id INTEGER, handle_id INTEGER, UNIQUE(chat_id, handle_id));
"""

START = datetime(2021, 3, 1, 9, 0, tzinfo=timezone.utc)


@dataclass
class StoreRow:
    """One message row to be written; ``handle`` is None for outbound rows."""

    guid: str
    chat: int
    timestamp: datetime
    handle: Optional[str] = None
    text: Optional[str] = None
    blob: Optional[bytes] = None
    reaction_code: int = 0
    target_guid: Optional[str] = None
    thread_parent: Optional[str] = None


@dataclass
class StoreSpec:
    chats: dict[int, list[str]] = field(default_factory=dict)  # chat id -> member handles
    rows: list[StoreRow] = field(default_factory=list)
    nanoseconds: bool = True
    chat_handle_join: bool = True


def write_store(path: str | Path, spec: StoreSpec) -> Path:
    path = Path(path)
    conn = sqlite3.connect(path)
    try:
        conn.executescript(SCHEMA if spec.chat_handle_join else SCHEMA.split("CREATE TABLE chat_handle_join")[0])
        handle_ids: dict[str, int] = {}
        for members in spec.chats.values():
            for h in members:
                if h not in handle_ids:
                    handle_ids[h] = conn.execute("INSERT INTO handle (id) VALUES (?)", (h,)).lastrowid
        for row in spec.rows:
            if row.handle and row.handle not in handle_ids:
                handle_ids[row.handle] = conn.execute("INSERT INTO handle (id) VALUES (?)", (row.handle,)).lastrowid
        for chat_id, members in spec.chats.items():
            conn.execute("INSERT INTO chat (ROWID, guid, chat_identifier, display_name) VALUES (?, ?, ?, ?)",
                         (chat_id, f"iMessage;+;chat{chat_id}", f"chat{chat_id}",
                          None if len(members) == 1 else f"group {chat_id}"))
            if spec.chat_handle_join:
                conn.executemany("INSERT INTO chat_handle_join VALUES (?, ?)",
                                 [(chat_id, handle_ids[h]) for h in members])
        for row in spec.rows:
            assoc = None
            if row.target_guid:
                assoc = f"p:0/{row.target_guid}"
            cur = conn.execute(
                "INSERT INTO message (guid, text, attributedBody, handle_id, date, is_from_me, "
                "associated_message_guid, associated_message_type, thread_originator_guid) "
                "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (row.guid, row.text, row.blob, handle_ids.get(row.handle, 0) if row.handle else 0,
                 to_apple_timestamp(row.timestamp, spec.nanoseconds), 0 if row.handle else 1,
                 assoc, row.reaction_code, row.thread_parent),
            )
            conn.execute("INSERT INTO chat_message_join (chat_id, message_id) VALUES (?, ?)", (row.chat, cur.lastrowid))
        conn.commit()
    finally:
        conn.close()
    return path


# -- the acceptance fixture ----------------------------------------------------

_TOPIC_WORDS = {
    "sports": "game score team ball match coach win league playoffs tickets".split(),
    "food": "dinner pasta pizza recipe oven lunch tacos brunch cook sushi".split(),
    "work": "meeting deadline office report client schedule project review email shift".split(),
    "travel": "flight hotel trip beach airport passport train vacation booking road".split(),
}
_MOOD = ["love", "great", "awesome", "happy", "good", "fine", "ok", "bad", "sad", "terrible", "hate", "ugh"]
_FILLER = ["the", "a", "we", "you", "at", "tonight", "tomorrow", "so", "is", "for", "this", "that", "lol"]


def _sentence(rng: random.Random, topic: str) -> str:
    words = rng.sample(_TOPIC_WORDS[topic], 3) + rng.sample(_FILLER, 2)
    if rng.random() < 0.6:
        words.append(rng.choice(_MOOD))
    rng.shuffle(words)
    text = " ".join(words)
    if rng.random() < 0.3:
        text = text.capitalize() + rng.choice(["!", "?", ".", "!!"])
    return text


FIXTURE_CHAT_SIZES = {1: 2, 2: 4, 3: 6, 4: 10}


def fixture_spec(seed: int = 7, texts: int = 185, tapbacks: int = 12, undecodable: int = 3) -> StoreSpec:
    """The 200-row fixture: chats of group size 2, 4, 6 and 10.

    Roughly a third of text rows carry their body only in attributedBody.
    Undecodable rows have neither text nor a parsable blob.
    """
    rng = random.Random(seed)
    chats: dict[int, list[str]] = {}
    n = 0
    for chat_id, size in FIXTURE_CHAT_SIZES.items():
        members = []
        for _ in range(size - 1):
            n += 1
            members.append(f"+1555010{n:04d}" if n % 3 else f"friend{n:02d}@example.com")
        chats[chat_id] = members
    chat_ids = list(chats)
    topics = list(_TOPIC_WORDS)

    rows: list[StoreRow] = []
    clock = {c: START + timedelta(hours=c) for c in chat_ids}
    text_rows: list[StoreRow] = []
    for i in range(texts):
        chat = chat_ids[i % len(chat_ids)]
        gap = rng.choice([rng.uniform(0.5, 20), rng.uniform(30, 170), rng.uniform(200, 900), rng.uniform(1500, 9000)])
        clock[chat] += timedelta(minutes=gap)
        sender = None if rng.random() < 0.45 else rng.choice(chats[chat])
        body = _sentence(rng, topics[(i // 7) % len(topics)])
        row = StoreRow(guid=f"MSG-{i:04d}", chat=chat, timestamp=clock[chat].replace(microsecond=0), handle=sender)
        if rng.random() < 0.35:
            row.blob = encode_attributed_body(body)
        else:
            row.text = body
        prior = [r for r in text_rows if r.chat == chat]
        if prior and rng.random() < 0.08:
            row.thread_parent = rng.choice(prior[-5:]).guid
        text_rows.append(row)
        rows.append(row)
    for j in range(tapbacks):
        target = text_rows[rng.randrange(len(text_rows) - 20)]
        later = target.timestamp + timedelta(minutes=rng.uniform(1, 3000))
        reactor = None if target.handle else rng.choice(chats[target.chat])
        rows.append(StoreRow(guid=f"TAP-{j:03d}", chat=target.chat, timestamp=later.replace(microsecond=0),
                             handle=reactor, reaction_code=2000 + j % 6, target_guid=target.guid,
                             text=f"Reacted to “{target.text or ''}”"))
    for k in range(undecodable):
        chat = chat_ids[k % len(chat_ids)]
        blob = None if k == 0 else b"\x04\x0bstreamtyped\x81\xe8\x03\x84\x01@" + bytes([0x85, 0xff, 0x00]) * k
        rows.append(StoreRow(guid=f"BAD-{k:03d}", chat=chat, timestamp=START + timedelta(days=30 * k),
                             handle=chats[chat][0], blob=blob))
    rows.sort(key=lambda r: r.timestamp)
    return StoreSpec(chats=chats, rows=rows)


def write_fixture_store(path: str | Path, seed: int = 7) -> Path:
    return write_store(path, fixture_spec(seed))


# -- synthetic message logs ----------------------------------------------------

@dataclass
class SyntheticLog:
    messages: list[Message]
    chats: list[Chat]

    def chat_map(self) -> dict[int, Chat]:
        return {c.id: c for c in self.chats}


def _chat(chat_id: int, members: Sequence[str]) -> Chat:
    size = len(members) + 1
    return Chat(chat_id, None, frozenset(members), size, bucket_of(size))


def random_log(seed: int, max_messages: int = 1000) -> SyntheticLog:
    """Mixed group sizes, bursts, long silences, tapbacks, threads and ties."""
    rng = random.Random(seed)
    n_target = rng.randint(50, max_messages)
    n_chats = rng.randint(2, 8)
    chats = []
    for c in range(1, n_chats + 1):
        size = rng.choice([2, 2, 3, 4, 5, 7, 9, 12])
        chats.append(_chat(c, [f"h{c}-{k}" for k in range(size - 1)]))
    messages: list[Message] = []
    clock = {c.id: START + timedelta(minutes=rng.randint(0, 5000)) for c in chats}
    per_chat: dict[int, list[Message]] = {c.id: [] for c in chats}
    for mid in range(1, n_target + 1):
        chat = rng.choice(chats)
        gap = rng.choice([0, 0.5, rng.uniform(1, 60), rng.uniform(60, 400), 179, 180, 181,
                          rng.uniform(400, 3000), 1440, rng.uniform(1500, 20000)])
        clock[chat.id] += timedelta(minutes=gap)
        ts = clock[chat.id]
        sender = OWNER_ID if rng.random() < 0.4 else rng.choice(sorted(chat.participants))
        prior = per_chat[chat.id]
        kind, reaction, target, thread = MessageKind.TEXT, None, None, None
        roll = rng.random()
        if prior and roll < 0.1:
            tgt = rng.choice(prior[-10:])
            kind = MessageKind.TAPBACK if roll < 0.09 else MessageKind.UNKNOWN
            reaction = rng.choice(list(Reaction)) if kind is MessageKind.TAPBACK else None
            target = tgt.guid
        elif prior and roll < 0.15:
            thread = rng.choice(prior[-10:]).guid
        msg = Message(
            id=mid, guid=f"G{mid}", chat_ref=chat.id, sender=sender,
            direction=Direction.OUTBOUND if sender == OWNER_ID else Direction.INBOUND,
            timestamp=ts, body=f"msg {mid}", kind=kind, reaction=reaction,
            target_guid=target, thread_parent=thread,
        )
        prior.append(msg)
        messages.append(msg)
    messages.sort(key=lambda m: (m.chat_ref, m.timestamp, m.id))
    return SyntheticLog(messages, chats)


def responsiveness_log(seed: int = 0, exchanges_per_chat: int = 60) -> SyntheticLog:
    """Owner replies less often and more slowly as chats get bigger."""
    rng = random.Random(seed)
    profile = {2: (0.9, 15.0), 4: (0.7, 60.0), 6: (0.5, 180.0), 12: (0.25, 480.0)}
    chats, messages = [], []
    mid = 0
    for c, (size, (p_reply, mean_latency)) in enumerate(sorted(profile.items()), start=1):
        for copy in range(3):
            chat = _chat(10 * c + copy, [f"g{c}{copy}-{k}" for k in range(size - 1)])
            chats.append(chat)
            t = START
            for _ in range(exchanges_per_chat):
                t += timedelta(minutes=rng.uniform(600, 3000))
                mid += 1
                messages.append(Message(mid, f"R{mid}", chat.id, rng.choice(sorted(chat.participants)),
                                        Direction.INBOUND, t, "hey"))
                if rng.random() < p_reply:
                    mid += 1
                    lag = min(rng.expovariate(1.0 / mean_latency), 1400.0)
                    messages.append(Message(mid, f"R{mid}", chat.id, OWNER_ID, Direction.OUTBOUND,
                                            t + timedelta(minutes=lag), "ok"))
    messages.sort(key=lambda m: (m.chat_ref, m.timestamp, m.id))
    return SyntheticLog(messages, chats)


def planted_corpus(num_topics: int = 3, vocab: int = 60, docs: int = 3000, doc_len: int = 8,
                   seed: int = 2024, word_concentration: float = 0.1,
                   topic_concentration: float = 0.5) -> tuple[list[TokenDoc], np.ndarray]:
    """Documents sampled from known topic-word distributions.

    Returns the documents (words ``w00``..``wNN``) and the true topic-word
    matrix indexed by word number.
    """
    rng = np.random.default_rng(seed)
    phi = rng.dirichlet(np.full(vocab, word_concentration), size=num_topics)
    out = []
    for d in range(docs):
        theta = rng.dirichlet(np.full(num_topics, topic_concentration))
        z = rng.choice(num_topics, size=doc_len, p=theta)
        words = [int(rng.choice(vocab, p=phi[k])) for k in z]
        out.append(TokenDoc(d, tuple(f"w{w:02d}" for w in words)))
    return out, phi


SPORTS = ("ball", "game", "score")
COOKING = ("pasta", "oven", "recipe")


def two_block_corpus(docs_per_block: int = 40, doc_len: int = 6, seed: int = 3) -> list[TokenDoc]:
    """Documents drawn from one of two disjoint vocabularies, interleaved."""
    rng = random.Random(seed)
    out = []
    for i in range(2 * docs_per_block):
        vocab = SPORTS if i % 2 == 0 else COOKING
        out.append(TokenDoc(i + 1, tuple(rng.choice(vocab) for _ in range(doc_len))))
    return out
