"""Behavioral metrics over ingested messages.

Two notions of "reply" are used:

* responsiveness (group-size buckets): the device owner answered an inbound
  message, by a later outbound message within the reply window, a tapback,
  or a threaded reply;
* conversation starters: anyone other than the author answered, by the same
  three routes.

Tapback and threaded replies count regardless of elapsed time. "Later" means
later in the chat's ``(timestamp, id)`` order.
"""

from __future__ import annotations

import math
import statistics
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .sentiment import Label, SentimentResult
from .store import OWNER_ID, SIZE_BUCKETS, Chat, Message, SizeBucket

DAY_MINUTES = 1440.0
REPLY_WINDOW = 1440.0
MEMBERSHIP_THRESHOLD = 0.3
STARTER_GAP = 180.0
STARTER_WEIGHTS = (0.4, 0.3, 0.3)
WINDOWS = ("day", "week", "month", "quarter", "year")

REPLY_DEFINITIONS = {
    "responsiveness": "inbound message answered by the device owner: later outbound message within "
                      "the reply window, or an owner tapback/threaded reply at any delay",
    "starter": "message answered by anyone other than its author: later message from another "
               "sender within the reply window, or a tapback/threaded reply by another sender at any delay",
}


class DirectionFilter(str, Enum):
    ALL = "all"
    INBOUND = "inbound"
    OUTBOUND = "outbound"

    def accepts(self, msg: Message) -> bool:
        if self is DirectionFilter.ALL:
            return True
        return msg.direction.value == self.value


@dataclass(frozen=True)
class ReluctanceRecord:
    message_id: int
    response_minutes: Optional[float]
    reluctance: float


@dataclass(frozen=True)
class TopicReluctance:
    topic: int
    avg_reluctance: float
    member_count: int
    weighted_score: float


@dataclass(frozen=True)
class PrevalencePoint:
    window_start: datetime
    topic: int
    mean_theta: float


@dataclass(frozen=True)
class ResponsivenessBucket:
    bucket: SizeBucket
    reply_rate: float
    median_response_minutes: Optional[float]
    message_count: int


@dataclass(frozen=True)
class StarterTopicScore:
    topic: int
    reply_rate: float
    speed_score: float
    starter_prob: float
    starter_score: float
    member_count: int


@dataclass(frozen=True)
class SentimentWindow:
    window_start: datetime
    counts: dict[Label, int]
    proportions: dict[Label, float]


def minutes_between(a: datetime, b: datetime) -> float:
    return (b - a).total_seconds() / 60.0


def window_start(ts: datetime, window: str) -> datetime:
    """Start of the calendar-aligned window containing ``ts``."""
    day = ts.replace(hour=0, minute=0, second=0, microsecond=0)
    if window == "day":
        return day
    if window == "week":
        return datetime.fromordinal(day.toordinal() - day.weekday()).replace(tzinfo=ts.tzinfo)
    if window == "month":
        return day.replace(day=1)
    if window == "quarter":
        return day.replace(month=3 * ((day.month - 1) // 3) + 1, day=1)
    if window == "year":
        return day.replace(month=1, day=1)
    raise ValueError(f"unknown window {window!r}; expected one of {', '.join(WINDOWS)}")


class ConversationIndex:
    """Per-chat timelines plus reply lookups, built once per message set."""

    def __init__(self, messages: Iterable[Message]):
        by_chat: dict[int, list[Message]] = defaultdict(list)
        for m in messages:
            by_chat[m.chat_ref].append(m)
        self.timelines = {c: sorted(ms, key=lambda m: (m.timestamp, m.id)) for c, ms in by_chat.items()}
        self.position: dict[int, tuple[int, int]] = {}
        self.next_other: dict[int, Optional[Message]] = {}
        self.next_outbound: dict[int, Optional[Message]] = {}
        for chat, tl in self.timelines.items():
            outbound: Optional[Message] = None
            for p in range(len(tl) - 1, -1, -1):
                m = tl[p]
                self.position[m.id] = (chat, p)
                self.next_outbound[m.id] = outbound
                if m.sender == OWNER_ID:
                    outbound = m
                if p + 1 == len(tl):
                    self.next_other[m.id] = None
                elif tl[p + 1].sender != m.sender:
                    self.next_other[m.id] = tl[p + 1]
                else:
                    # same sender follows: its next other-sender message is ours too
                    self.next_other[m.id] = self.next_other[tl[p + 1].id]
        self.reactions: dict[str, list[Message]] = defaultdict(list)
        self.thread_replies: dict[str, list[Message]] = defaultdict(list)
        for tl in self.timelines.values():
            for m in tl:
                if m.target_guid:
                    self.reactions[m.target_guid].append(m)
                if m.thread_parent:
                    self.thread_replies[m.thread_parent].append(m)

    def timeline(self, chat: int) -> list[Message]:
        return self.timelines.get(chat, [])

    def previous(self, msg: Message) -> Optional[Message]:
        chat, p = self.position[msg.id]
        return self.timelines[chat][p - 1] if p > 0 else None

    def response_minutes(self, msg: Message, reply_window: float = REPLY_WINDOW,
                         owner_only: bool = False) -> Optional[float]:
        """Minutes until the earliest qualifying reply to ``msg``, or None."""
        events: list[float] = []
        nxt = self.next_outbound[msg.id] if owner_only else self.next_other[msg.id]
        if nxt is not None and nxt.sender != msg.sender:
            delta = minutes_between(msg.timestamp, nxt.timestamp)
            if delta <= reply_window:
                events.append(delta)
        for linked in (self.reactions.get(msg.guid, ()), self.thread_replies.get(msg.guid, ())):
            for r in linked:
                if r.sender == msg.sender or r.id == msg.id:
                    continue
                if owner_only and r.sender != OWNER_ID:
                    continue
                events.append(max(0.0, minutes_between(msg.timestamp, r.timestamp)))
        return min(events) if events else None


def reluctance_score(inbound: Message, chat_timeline: Sequence[Message]) -> ReluctanceRecord:
    """Reluctance of one inbound message against the first later outbound one."""
    pos = next(i for i, m in enumerate(chat_timeline) if m.id == inbound.id)
    for later in chat_timeline[pos + 1:]:
        if later.sender == OWNER_ID:
            minutes = minutes_between(inbound.timestamp, later.timestamp)
            return ReluctanceRecord(inbound.id, minutes, min(minutes / DAY_MINUTES, 1.0))
    return ReluctanceRecord(inbound.id, None, 1.0)


def reluctance_records(index: ConversationIndex, drop_unanswered: bool = False) -> list[ReluctanceRecord]:
    """Reluctance for every inbound message, in timeline order."""
    out = []
    for chat in sorted(index.timelines):
        for m in index.timelines[chat]:
            if not m.is_inbound:
                continue
            nxt = index.next_outbound[m.id]
            if nxt is None:
                if not drop_unanswered:
                    out.append(ReluctanceRecord(m.id, None, 1.0))
                continue
            minutes = minutes_between(m.timestamp, nxt.timestamp)
            out.append(ReluctanceRecord(m.id, minutes, min(minutes / DAY_MINUTES, 1.0)))
    return out


def topic_avg_reluctance(records: Sequence[ReluctanceRecord],
                         thetas: Mapping[int, np.ndarray]) -> dict[int, float]:
    """Topic-probability-weighted mean reluctance per topic.

    Topics whose summed probability is zero are left out.
    """
    rows = [(thetas[r.message_id], r.reluctance) for r in records if r.message_id in thetas]
    if not rows:
        return {}
    weights = np.vstack([t for t, _ in rows])
    rel = np.array([x for _, x in rows])
    num = (weights * rel[:, None]).sum(axis=0)
    den = weights.sum(axis=0)
    return {t: float(num[t] / den[t]) for t in range(weights.shape[1]) if den[t] > 0}


def member_counts(message_ids: Iterable[int], thetas: Mapping[int, np.ndarray], num_topics: int,
                  threshold: float = MEMBERSHIP_THRESHOLD) -> dict[int, int]:
    counts = dict.fromkeys(range(num_topics), 0)
    for mid in message_ids:
        theta = thetas.get(mid)
        if theta is None:
            continue
        for t in np.flatnonzero(theta > threshold):
            counts[int(t)] += 1
    return counts


def weighted_reluctance(avg: Mapping[int, float], counts: Mapping[int, int]) -> list[TopicReluctance]:
    """Scale each topic's reluctance by ln(1 + members) and rank descending."""
    ranked = [
        TopicReluctance(t, a, counts.get(t, 0), a * math.log1p(counts.get(t, 0)))
        for t, a in avg.items()
    ]
    ranked.sort(key=lambda r: (-r.weighted_score, r.topic))
    return ranked


def prevalence_over_time(messages: Iterable[Message], thetas: Mapping[int, np.ndarray],
                         window: str = "month") -> list[PrevalencePoint]:
    """Mean topic probability per calendar window over all messages."""
    sums: dict[datetime, np.ndarray] = {}
    counts: dict[datetime, int] = defaultdict(int)
    for m in messages:
        theta = thetas.get(m.id)
        if theta is None:
            continue
        key = window_start(m.timestamp, window)
        if key in sums:
            sums[key] = sums[key] + theta
        else:
            sums[key] = np.array(theta, dtype=float)
        counts[key] += 1
    points = []
    for key in sorted(sums):
        mean = sums[key] / counts[key]
        points.extend(PrevalencePoint(key, t, float(v)) for t, v in enumerate(mean))
    return points


def overall_prevalence(messages: Iterable[Message], thetas: Mapping[int, np.ndarray]) -> dict[int, float]:
    rows = [thetas[m.id] for m in messages if m.id in thetas]
    if not rows:
        return {}
    mean = np.vstack(rows).mean(axis=0)
    return {t: float(v) for t, v in enumerate(mean)}


def has_reply(msg: Message, index: ConversationIndex, reply_window: float = REPLY_WINDOW) -> bool:
    return index.response_minutes(msg, reply_window) is not None


def bucket_responsiveness(messages: Iterable[Message], chats: Mapping[int, Chat], index: ConversationIndex,
                          reply_window: float = REPLY_WINDOW) -> list[ResponsivenessBucket]:
    """Owner reply rate and median owner response time per group-size bucket."""
    totals: dict[SizeBucket, int] = defaultdict(int)
    times: dict[SizeBucket, list[float]] = defaultdict(list)
    for m in messages:
        if not m.is_inbound:
            continue
        bucket = chats[m.chat_ref].size_bucket
        totals[bucket] += 1
        minutes = index.response_minutes(m, reply_window, owner_only=True)
        if minutes is not None:
            times[bucket].append(minutes)
    out = []
    for bucket in SIZE_BUCKETS:
        n = totals[bucket]
        replied = times[bucket]
        out.append(ResponsivenessBucket(
            bucket=bucket,
            reply_rate=len(replied) / n if n else 0.0,
            median_response_minutes=float(statistics.median(replied)) if replied else None,
            message_count=n,
        ))
    return out


def is_conversation_starter(msg: Message, index: ConversationIndex, starter_gap: float = STARTER_GAP) -> bool:
    prev = index.previous(msg)
    return prev is None or minutes_between(prev.timestamp, msg.timestamp) >= starter_gap


def starter_score(reply_rate: float, speed_score: float, starter_prob: float) -> float:
    w_reply, w_speed, w_start = STARTER_WEIGHTS
    return w_reply * reply_rate + w_speed * speed_score + w_start * starter_prob


def starter_scores(messages: Sequence[Message], thetas: Mapping[int, np.ndarray], index: ConversationIndex,
                   threshold: float = MEMBERSHIP_THRESHOLD, reply_window: float = REPLY_WINDOW,
                   starter_gap: float = STARTER_GAP) -> list[StarterTopicScore]:
    """Rank topics by how well their messages open conversations.

    Topics with no member message are omitted. When no member was replied to
    the speed component is 0.
    """
    members: dict[int, list[Message]] = defaultdict(list)
    for m in messages:
        theta = thetas.get(m.id)
        if theta is None:
            continue
        for t in np.flatnonzero(theta > threshold):
            members[int(t)].append(m)
    out = []
    for topic in sorted(members):
        msgs = members[topic]
        replies = [index.response_minutes(m, reply_window) for m in msgs]
        replied = [r for r in replies if r is not None]
        reply_rate = len(replied) / len(msgs)
        if replied:
            speed = min(1.0, max(0.0, 1.0 - (sum(replied) / len(replied)) / DAY_MINUTES))
        else:
            speed = 0.0
        starters = sum(1 for m in msgs if is_conversation_starter(m, index, starter_gap))
        prob = starters / len(msgs)
        out.append(StarterTopicScore(topic, reply_rate, speed, prob, starter_score(reply_rate, speed, prob), len(msgs)))
    out.sort(key=lambda s: (-s.starter_score, s.topic))
    return out


def _proportions(counts: Mapping[Label, int]) -> dict[Label, float]:
    total = sum(counts.values())
    return {lab: (counts[lab] / total if total else 0.0) for lab in Label}


def sentiment_over_time(messages: Iterable[Message], sentiments: Mapping[int, SentimentResult],
                        window: str = "month", direction: DirectionFilter = DirectionFilter.ALL,
                        exclude_tapbacks: bool = False) -> list[SentimentWindow]:
    """Label counts and proportions per calendar window; empty windows omitted."""
    buckets: dict[datetime, dict[Label, int]] = {}
    for m in messages:
        if not direction.accepts(m) or (exclude_tapbacks and m.is_tapback) or m.id not in sentiments:
            continue
        key = window_start(m.timestamp, window)
        counts = buckets.setdefault(key, dict.fromkeys(Label, 0))
        counts[sentiments[m.id].label] += 1
    return [SentimentWindow(k, buckets[k], _proportions(buckets[k])) for k in sorted(buckets)]


def sentiment_summary(messages: Iterable[Message], sentiments: Mapping[int, SentimentResult],
                      direction: DirectionFilter = DirectionFilter.ALL,
                      exclude_tapbacks: bool = False) -> dict:
    counts = dict.fromkeys(Label, 0)
    compounds = []
    for m in messages:
        if not direction.accepts(m) or (exclude_tapbacks and m.is_tapback) or m.id not in sentiments:
            continue
        res = sentiments[m.id]
        counts[res.label] += 1
        compounds.append(res.compound)
    return {
        "counts": counts,
        "proportions": _proportions(counts),
        "mean_compound": float(sum(compounds) / len(compounds)) if compounds else None,
        "total": len(compounds),
    }
