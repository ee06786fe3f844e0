import csv
import io
import json
from datetime import datetime, timedelta, timezone

import jsonschema
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imsg_insight.metrics import DAY_MINUTES
from imsg_insight.pipeline import RunConfig, build_report, run_analysis
from imsg_insight.report import (
    CHART_FILES,
    CSV_HEADER,
    EmptySalt,
    MissingApiKey,
    Pseudonymizer,
    build_llm_payload,
    deidentify,
    dumps_report,
    emit_chart_data,
    export_csv,
    load_report,
    load_schema,
    csv_rows,
    read_csv,
    send_payload,
    write_csv,
)
from imsg_insight.sentiment import score
from imsg_insight.store import OWNER_ID, Chat, Direction, IngestResult, IngestSummary, Message, MessageKind, bucket_of
from imsg_insight.synth import START

UTC = timezone.utc
SALT = b"test-salt"


@pytest.fixture(scope="module")
def analysis(fixture_ingest):
    cfg = RunConfig(store_path="chat.db", seed=7)
    return run_analysis(fixture_ingest, cfg), cfg


@pytest.fixture(scope="module")
def report(analysis):
    a, cfg = analysis
    return build_report(a, cfg)


# -- CSV ---------------------------------------------------------------------------

def test_csv_row_count_and_header(fixture_ingest, tmp_path):
    path = tmp_path / "messages.csv"
    assert export_csv(fixture_ingest.messages, fixture_ingest.chats, path) == 197
    raw = path.read_bytes()
    assert raw.startswith(b"group_size,is_tapback,direction,participant,timestamp,content\n")
    assert b"\r\n" not in raw
    assert len(read_csv(path)) == 197


def test_csv_rows_ordered_by_time(fixture_ingest, tmp_path):
    path = tmp_path / "m.csv"
    export_csv(fixture_ingest.messages, fixture_ingest.chats, path)
    stamps = [r.timestamp for r in read_csv(path)]
    assert stamps == sorted(stamps)


def _message(mid, body, sender="+15551234567", minutes=0, tap=False):
    return Message(mid, f"G{mid}", 1, sender, Direction.OUTBOUND if sender == OWNER_ID else Direction.INBOUND,
                   START + timedelta(minutes=minutes), body,
                   kind=MessageKind.TAPBACK if tap else MessageKind.TEXT)


CHATS = {1: Chat(1, None, frozenset({"+15551234567"}), 2, bucket_of(2))}


def test_csv_quoting(tmp_path):
    path = tmp_path / "q.csv"
    export_csv([_message(1, 'He said "hi", then left')], CHATS, path)
    line = path.read_text(encoding="utf-8").splitlines()[1]
    assert line.endswith('"He said ""hi"", then left"')
    assert read_csv(path)[0].content == 'He said "hi", then left'


# ingestion removes NUL, so bodies never contain it
bodies = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"), min_size=1, max_size=80)


@given(st.lists(st.tuples(bodies, st.booleans(), st.booleans(), st.integers(0, 10**6)), min_size=1, max_size=25))
def test_csv_round_trip(rows):
    msgs = [_message(i, body, OWNER_ID if out else "+15551234567", minutes, tap)
            for i, (body, out, tap, minutes) in enumerate(rows)]
    buf = io.StringIO(newline="")
    write_csv(buf, CSV_HEADER, csv_rows(msgs, CHATS))
    buf.seek(0)
    reader = csv.reader(buf)
    assert tuple(next(reader)) == CSV_HEADER
    parsed = list(reader)
    expected = sorted(msgs, key=lambda m: (m.timestamp, m.id))
    assert len(parsed) == len(expected)
    for (g, tap, direction, who, ts, content), m in zip(parsed, expected):
        assert int(g) == 2
        assert (tap == "true") == m.is_tapback
        assert direction == m.direction.value
        assert who == m.sender
        assert datetime.strptime(ts, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=UTC) == m.timestamp
        assert content == m.body


def test_csv_drops_nul(tmp_path):
    path = tmp_path / "z.csv"
    export_csv([_message(1, "a\x00b")], CHATS, path)
    assert read_csv(path)[0].content == "ab"


def test_csv_quotes_bare_carriage_return(tmp_path):
    path = tmp_path / "r.csv"
    export_csv([_message(1, "\r"), _message(2, "a\rb", minutes=1)], CHATS, path)
    assert [r.content for r in read_csv(path)] == ["\r", "a\rb"]


def test_csv_file_round_trip_preserves_newlines(tmp_path):
    path = tmp_path / "n.csv"
    export_csv([_message(1, "line one\nline two\r\nthree")], CHATS, path)
    assert read_csv(path)[0].content == "line one\nline two\r\nthree"


# -- de-identification --------------------------------------------------------------------

def test_deidentify_examples():
    a = deidentify("+15551234567", SALT)
    assert a == deidentify("+15551234567", SALT)
    assert a != deidentify("+15551234567", b"other")
    assert a.startswith("p-") and len(a) == 12
    assert int(a[2:], 16) >= 0
    assert deidentify(OWNER_ID, SALT) == "me"


def test_empty_salt_rejected():
    with pytest.raises(EmptySalt):
        deidentify("x", b"")
    with pytest.raises(EmptySalt):
        Pseudonymizer(b"")
    with pytest.raises(EmptySalt):
        export_csv([], CHATS, "unused.csv", deidentify=True, salt=b"")


@given(st.sets(st.text(min_size=1, max_size=30).filter(lambda s: s != OWNER_ID), max_size=60), st.binary(min_size=1))
def test_pseudonyms_are_a_bijection(ids, salt):
    p = Pseudonymizer(salt)
    aliases = {p(i) for i in ids}
    assert len(aliases) == len(ids)
    assert all(p(i) == deidentify(i, salt) for i in ids)


def test_deidentified_csv_hides_handles(fixture_ingest, fixture_db, tmp_path):
    path = tmp_path / "d.csv"
    export_csv(fixture_ingest.messages, fixture_ingest.chats, path, deidentify=True, salt=SALT)
    text = path.read_text(encoding="utf-8")
    handles = {p.id for p in fixture_ingest.participants}
    assert handles
    for h in handles:
        assert h not in text
    participants = {r.participant for r in read_csv(path)}
    assert all(p == "me" or p.startswith("p-") for p in participants)


# -- report ---------------------------------------------------------------------------------

def test_report_validates(report):
    jsonschema.validate(report, load_schema())
    assert report["schema_version"] == 1


def test_report_parameter_echo_is_complete(report):
    assert set(report["parameters"]) == set(RunConfig.field_names())
    assert report["parameters"]["reply_window"] == 1440.0
    assert report["parameters"]["membership_threshold"] == 0.3


def test_report_sections(report):
    assert len(report["topic_model"]["topics"]) == 30
    assert all(len(t["top_words"]) <= 30 for t in report["topic_model"]["topics"])
    assert len(report["prevalence"]["top_topics"]) == 5
    assert len(report["starters"]["top10"]) <= 10
    assert [b["bucket"] for b in report["responsiveness"]["buckets"]] == ["OneToOne", "Small", "Medium", "Large"]
    for entry in report["reluctance"]["ranking"]:
        assert len(entry["examples"]) <= 5


def test_report_is_deterministic(analysis, fixture_ingest):
    a, cfg = analysis
    again = run_analysis(fixture_ingest, cfg)
    assert dumps_report(build_report(a, cfg)) == dumps_report(build_report(again, cfg))


def test_salt_never_written(analysis):
    a, cfg = analysis
    salty = RunConfig(**{**cfg.__dict__, "deidentify": True, "salt": "s3cret-salt"})
    text = dumps_report(build_report(a, salty, Pseudonymizer(b"s3cret-salt")))
    assert "s3cret-salt" not in text


def test_deidentified_examples_use_pseudonyms(analysis, fixture_ingest):
    a, cfg = analysis
    text = dumps_report(build_report(a, cfg, Pseudonymizer(SALT)))
    for p in fixture_ingest.participants:
        assert p.id not in text


def test_zero_inbound_report_is_valid():
    msgs = [Message(i, f"G{i}", 1, OWNER_ID, Direction.OUTBOUND, START + timedelta(hours=i),
                    "hello there friend" if i % 2 else "pasta tonight friend") for i in range(12)]
    chats = [Chat(1, None, frozenset({"+1"}), 2, bucket_of(2))]
    ingested = IngestResult(msgs, chats, [], IngestSummary(12, 12, 0, 0))
    cfg = RunConfig(topics=2, iterations=40, burn_in=20)
    rep = build_report(run_analysis(ingested, cfg), cfg)
    jsonschema.validate(rep, load_schema())
    assert rep["reluctance"]["ranking"] == []
    assert rep["reluctance"]["records"] == 0


def test_load_report_checks_version(tmp_path, report):
    path = tmp_path / "r.json"
    path.write_text(dumps_report(report))
    assert load_report(path) == json.loads(dumps_report(report))
    path.write_text(json.dumps({**report, "schema_version": 2}))
    with pytest.raises(ValueError):
        load_report(path)


# -- report / CSV coherence -------------------------------------------------------------------

def test_sentiment_counts_recomputable_from_csv(report, fixture_ingest, tmp_path):
    path = tmp_path / "c.csv"
    export_csv(fixture_ingest.messages, fixture_ingest.chats, path)
    rows = read_csv(path)
    for direction in ("all", "inbound", "outbound"):
        counts = {"Positive": 0, "Neutral": 0, "Negative": 0}
        for r in rows:
            if direction in ("all", r.direction):
                counts[score(r.content).label.value] += 1
        assert report["sentiment"]["summary"][direction]["counts"] == counts


def test_bucket_counts_and_reluctance_recomputable_from_csv(report, fixture_ingest, tmp_path):
    path = tmp_path / "c.csv"
    export_csv(fixture_ingest.messages, fixture_ingest.chats, path)
    rows = read_csv(path)
    # each fixture chat has a distinct group size, so group_size identifies the chat
    for b in report["responsiveness"]["buckets"]:
        n = sum(1 for r in rows if r.direction == "inbound" and bucket_of(r.group_size).value == b["bucket"])
        assert b["message_count"] == n
    for entry in report["responsiveness"]["per_chat"]:
        tl = [r for r in rows if r.group_size == entry["group_size"]]
        scores = []
        for i, r in enumerate(tl):
            if r.direction != "inbound":
                continue
            nxt = next((x for x in tl[i + 1:] if x.direction == "outbound"), None)
            if nxt is None:
                scores.append(1.0)
            else:
                scores.append(min((nxt.timestamp - r.timestamp).total_seconds() / 60 / DAY_MINUTES, 1.0))
        assert entry["mean_reluctance"] == pytest.approx(sum(scores) / len(scores), abs=1e-9)


def test_per_topic_reluctance_matches_records(report, analysis):
    a, _ = analysis
    rel = {r.message_id: r.reluctance for r in a.reluctance}
    for entry in report["reluctance"]["ranking"]:
        t = entry["topic"]
        num = sum(a.thetas[m][t] * r for m, r in rel.items())
        den = sum(a.thetas[m][t] for m in rel)
        assert entry["avg_reluctance"] == pytest.approx(num / den, abs=1e-9)


# -- chart data --------------------------------------------------------------------------------

def test_chart_files(report, tmp_path):
    paths = emit_chart_data(report, tmp_path)
    assert [p.name for p in paths] == list(CHART_FILES)
    with open(tmp_path / "fig_starters.csv", encoding="utf-8") as fh:
        assert len(list(csv.reader(fh))) - 1 <= 10
    with open(tmp_path / "fig_prevalence.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(report["prevalence"]["series"]) <= 24 * 30


def test_empty_sections_give_header_only_files(report, tmp_path):
    empty = json.loads(json.dumps(report))
    empty["reluctance"]["ranking"] = []
    empty["starters"]["top10"] = []
    emit_chart_data(empty, tmp_path)
    assert (tmp_path / "fig_reluctance.csv").read_text().count("\n") == 1
    assert (tmp_path / "fig_starters.csv").read_text().count("\n") == 1


# -- LLM payload ---------------------------------------------------------------------------------

def test_payload_structure(report):
    payload = build_llm_payload(report, "what are my most reluctant topics?")
    roles = [m["role"] for m in payload["messages"]]
    assert roles == ["system", "user"]
    user = payload["messages"][1]["content"]
    assert "what are my most reluctant topics?" in user
    context = json.loads(user.split("Context (JSON):\n", 1)[1].split("\n\nQuestion:", 1)[0])
    assert [r["topic"] for r in context["reluctance"]["ranking"]] == \
        [r["topic"] for r in report["reluctance"]["ranking"]]


def test_payload_has_no_bodies_by_default(report, fixture_ingest):
    text = json.dumps(build_llm_payload(report))
    example_bodies = {ex["body"] for r in report["reluctance"]["ranking"] for ex in r["examples"]}
    assert example_bodies
    for body in example_bodies:
        assert json.dumps(body)[1:-1] not in text
    assert '"examples"' not in text


def _context(payload):
    user = payload["messages"][1]["content"]
    return json.loads(user.split("Context (JSON):\n", 1)[1].split("\n\nQuestion:", 1)[0])


def test_payload_examples_opt_in(report):
    ctx = _context(build_llm_payload(report, include_examples=True))
    examples = [ex for r in ctx["reluctance"]["ranking"] for ex in r["examples"]]
    assert examples
    # the report is not de-identified, so senders are withheld from the prompt
    assert all("body" in ex and "sender" not in ex for ex in examples)


def test_payload_keeps_pseudonymous_senders(analysis):
    a, cfg = analysis
    rep = build_report(a, RunConfig(**{**cfg.__dict__, "deidentify": True, "salt": "x"}), Pseudonymizer(b"x"))
    ctx = _context(build_llm_payload(rep, include_examples=True))
    senders = {ex["sender"] for r in ctx["reluctance"]["ranking"] for ex in r["examples"]}
    assert senders and all(s.startswith("p-") for s in senders)


def test_send_without_key(report, monkeypatch):
    monkeypatch.delenv("IMSG_INSIGHT_API_KEY", raising=False)
    with pytest.raises(MissingApiKey):
        send_payload(build_llm_payload(report))
