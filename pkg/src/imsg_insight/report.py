"""CSV export, de-identification, JSON report, chart data and LLM payloads."""

from __future__ import annotations

import copy
import csv
import hashlib
import hmac
import json
import os
import urllib.request
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .store import OWNER_ID, Chat, Message

SCHEMA_VERSION = 1
CSV_HEADER = ("group_size", "is_tapback", "direction", "participant", "timestamp", "content")
CHART_FILES = (
    "fig_reluctance.csv",
    "fig_prevalence.csv",
    "fig_responsiveness.csv",
    "fig_starters.csv",
    "fig_sentiment_summary.csv",
    "fig_sentiment_trend.csv",
)
API_KEY_ENV = "IMSG_INSIGHT_API_KEY"
API_URL_ENV = "IMSG_INSIGHT_API_URL"
DEFAULT_API_URL = "https://api.openai.com/v1/chat/completions"
DEFAULT_MODEL = "gpt-4"


class EmptySalt(ValueError):
    pass


class MissingApiKey(RuntimeError):
    pass


def iso_utc(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_iso_utc(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


# -- de-identification -------------------------------------------------------

def deidentify(participant_id: str, salt: bytes) -> str:
    """Keyed pseudonym ``p-<10 hex>`` for a participant; the owner stays ``me``."""
    if not salt:
        raise EmptySalt("de-identification needs a non-empty salt")
    if participant_id == OWNER_ID:
        return OWNER_ID
    digest = hmac.new(salt, participant_id.encode("utf-8"), hashlib.sha256).hexdigest()
    return "p-" + digest[:10]


class Pseudonymizer:
    """Caches pseudonyms for a run and refuses to merge two distinct ids."""

    def __init__(self, salt: bytes):
        if not salt:
            raise EmptySalt("de-identification needs a non-empty salt")
        self.salt = salt
        self.forward: dict[str, str] = {}
        self._reverse: dict[str, str] = {}

    def __call__(self, participant_id: str) -> str:
        alias = self.forward.get(participant_id)
        if alias is None:
            alias = deidentify(participant_id, self.salt)
            owner = self._reverse.setdefault(alias, participant_id)
            if owner != participant_id:
                raise RuntimeError(f"pseudonym collision on {alias}")
            self.forward[participant_id] = alias
        return alias


# -- CSV ---------------------------------------------------------------------

def write_csv(fh, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write RFC 4180 rows with LF line endings.

    Python 3.10's writer does not quote a bare carriage return when the line
    terminator is LF, so rows containing one are written fully quoted.
    """
    minimal = csv.writer(fh, lineterminator="\n")
    quoted = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_ALL)
    minimal.writerow(header)
    for row in rows:
        needs_quotes = any(isinstance(v, str) and "\r" in v for v in row)
        (quoted if needs_quotes else minimal).writerow(row)


def csv_rows(messages: Iterable[Message], chats: Mapping[int, Chat],
             pseudonymize: Optional[Pseudonymizer] = None) -> list[list[str]]:
    ordered = sorted(messages, key=lambda m: (m.timestamp, m.id))
    rows = []
    for m in ordered:
        participant = pseudonymize(m.sender) if pseudonymize else m.sender
        rows.append([
            str(chats[m.chat_ref].group_size),
            "true" if m.is_tapback else "false",
            m.direction.value,
            participant,
            iso_utc(m.timestamp),
            m.body.replace("\x00", ""),  # the csv module cannot represent NUL
        ])
    return rows


def export_csv(messages: Iterable[Message], chats: Sequence[Chat] | Mapping[int, Chat], path: str | Path,
               deidentify: bool = False, salt: Optional[bytes] = None) -> int:
    """Write one row per message; returns the number of data rows."""
    chat_map = chats if isinstance(chats, Mapping) else {c.id: c for c in chats}
    pseudo = Pseudonymizer(salt) if deidentify else None
    if deidentify and not salt:
        raise EmptySalt("de-identification needs a non-empty salt")
    rows = csv_rows(messages, chat_map, pseudo)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_csv(fh, CSV_HEADER, rows)
    return len(rows)


@dataclass(frozen=True)
class CsvRow:
    group_size: int
    is_tapback: bool
    direction: str
    participant: str
    timestamp: datetime
    content: str


def read_csv(path: str | Path) -> list[CsvRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        return [
            CsvRow(int(g), t == "true", d, p, parse_iso_utc(ts), c)
            for g, t, d, p, ts, c in reader
        ]


# -- report ------------------------------------------------------------------

def load_schema() -> dict:
    return json.loads(resources.files("imsg_insight").joinpath("data/report.schema.json").read_text("utf-8"))


def dumps_report(report: Mapping[str, Any]) -> str:
    return json.dumps(report, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def emit_report(report: Mapping[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_report(report), encoding="utf-8")
    return path


def load_report(path: str | Path) -> dict:
    report = json.loads(Path(path).read_text(encoding="utf-8"))
    if report.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema_version {report.get('schema_version')!r}")
    return report


def _write_table(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_csv(fh, header, (["" if v is None else repr(v) if isinstance(v, float) else v for v in row]
                               for row in rows))


def emit_chart_data(report: Mapping[str, Any], out_dir: str | Path) -> list[Path]:
    """Write one plain CSV per figure family into ``out_dir``."""
    out = Path(out_dir)
    paths = [out / name for name in CHART_FILES]
    rel, prev, resp, start, summ, trend = paths

    _write_table(rel, ("rank", "topic", "avg_reluctance", "member_count", "weighted_score", "top_words"), (
        (i + 1, r["topic"], r["avg_reluctance"], r["member_count"], r["weighted_score"], " ".join(r["top_words"]))
        for i, r in enumerate(report["reluctance"]["ranking"])
    ))
    _write_table(prev, ("window_start", "topic", "mean_theta"), (
        (p["window_start"], p["topic"], p["mean_theta"]) for p in report["prevalence"]["series"]
    ))
    _write_table(resp, ("bucket", "reply_rate", "median_response_minutes", "message_count"), (
        (b["bucket"], b["reply_rate"], b["median_response_minutes"], b["message_count"])
        for b in report["responsiveness"]["buckets"]
    ))
    _write_table(start, ("rank", "topic", "reply_rate", "speed_score", "starter_prob", "starter_score"), (
        (i + 1, s["topic"], s["reply_rate"], s["speed_score"], s["starter_prob"], s["starter_score"])
        for i, s in enumerate(report["starters"]["top10"])
    ))
    _write_table(summ, ("direction", "label", "count", "proportion"), (
        (direction, label, block["counts"][label], block["proportions"][label])
        for direction, block in report["sentiment"]["summary"].items()
        for label in block["counts"]
    ))
    _write_table(trend, ("direction", "window_start", "label", "count", "proportion"), (
        (direction, w["window_start"], label, w["counts"][label], w["proportions"][label])
        for direction, series in report["sentiment"]["series"].items()
        for w in series
        for label in w["counts"]
    ))
    return paths


# -- LLM payload -------------------------------------------------------------

SYSTEM_PREAMBLE = (
    "You are helping a person understand an analysis of their own iMessage history. "
    "The JSON context contains: LDA topics with their top words; topic reluctance "
    "(probability-weighted mean of min(minutes to reply / 1440, 1) over received messages, "
    "multiplied by ln(1 + number of messages with topic probability > 0.3)); monthly topic "
    "prevalence (mean topic probability); reply rate and median reply time by chat size "
    "(one-to-one, 3-4, 5-8, 9+ people); conversation-starter scores per topic "
    "(0.4 reply rate + 0.3 speed + 0.3 share of messages opening a conversation); and "
    "sentiment label counts (compound > 0.05 positive, < -0.05 negative). Participants are "
    "pseudonymous. Answer only from the context and say when it does not contain the answer."
)
DEFAULT_QUESTION = "Summarize the main patterns in my messaging behavior."


def llm_context(report: Mapping[str, Any], include_examples: bool = False) -> dict:
    """Trimmed copy of the report sized for a chat prompt.

    Topic word lists keep their top 10 words, the prevalence series keeps only
    the most prevalent topics, and the starter ranking keeps its top 10.
    """
    ctx = copy.deepcopy(dict(report))
    deidentified = bool(ctx.get("parameters", {}).get("deidentify"))
    model = ctx.get("topic_model", {})
    if "topics" in model:
        model["topics"] = [{"topic": t["topic"], "top_words": [w["word"] for w in t["top_words"][:10]]}
                           for t in model["topics"]]
    prevalence = ctx.get("prevalence", {})
    if "series" in prevalence:
        keep = set(prevalence.get("top_topics", []))
        prevalence["series"] = [p for p in prevalence["series"] if p["topic"] in keep]
    ctx.get("starters", {}).pop("ranking", None)
    for entry in ctx.get("reluctance", {}).get("ranking", []):
        if not include_examples:
            entry.pop("examples", None)
        elif not deidentified:
            for ex in entry.get("examples", []):
                ex.pop("sender", None)
    return ctx


def build_llm_payload(report: Mapping[str, Any], question: Optional[str] = None,
                      include_examples: bool = False, model: str = DEFAULT_MODEL) -> dict:
    """Chat-completions request body carrying the report as context.

    Message bodies are left out unless ``include_examples`` is set.
    """
    context = json.dumps(llm_context(report, include_examples), ensure_ascii=False, sort_keys=True)
    return {
        "model": model,
        "messages": [
            {"role": "system", "content": SYSTEM_PREAMBLE},
            {"role": "user", "content": f"Context (JSON):\n{context}\n\nQuestion: {question or DEFAULT_QUESTION}"},
        ],
    }


def send_payload(payload: Mapping[str, Any], api_key: Optional[str] = None, url: Optional[str] = None,
                 timeout: float = 60.0) -> str:
    """POST ``payload`` and return the assistant text (or the raw body).

    The key and endpoint default to the IMSG_INSIGHT_API_KEY and
    IMSG_INSIGHT_API_URL environment variables.
    """
    key = api_key or os.environ.get(API_KEY_ENV)
    if not key:
        raise MissingApiKey(f"set {API_KEY_ENV} to send requests")
    endpoint = url or os.environ.get(API_URL_ENV) or DEFAULT_API_URL
    data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
    req = urllib.request.Request(endpoint, data=data, method="POST", headers={
        "Content-Type": "application/json",
        "Authorization": f"Bearer {key}",
    })
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        body = resp.read().decode("utf-8")
    try:
        return json.loads(body)["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        return body
