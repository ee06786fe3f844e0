"""Command-line front end: ``export``, ``analyze``, ``ask`` and ``inspect``.

Exit codes: 0 on success, 1 for user or data errors (bad paths, locked or
foreign stores, too few messages, missing API key), 2 for internal errors.
Diagnostics go to stderr; summaries go to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import secrets
import shutil
import sys
import tempfile
import urllib.error
from dataclasses import fields
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .lda import save_model
from .metrics import WINDOWS
from .pipeline import CorpusTooSmall, RunConfig, build_report, one_screen_summary, run_analysis
from .report import (
    CHART_FILES,
    EmptySalt,
    MissingApiKey,
    Pseudonymizer,
    build_llm_payload,
    emit_chart_data,
    emit_report,
    export_csv,
    iso_utc,
    load_report,
    send_payload,
)
from .store import IngestResult, StoreError, load
from .text import load_stoplist

log = logging.getLogger("imsg_insight")

CSV_NAME = "messages.csv"
REPORT_NAME = "report.json"
MODEL_NAME = "model.json"
PAYLOAD_NAME = "llm_payload.json"


class UserError(Exception):
    """Anything the user can fix; reported with exit code 1."""


# -- configuration -----------------------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, value: Any) -> Any:
    default = RunConfig.__dataclass_fields__[name].default
    if isinstance(value, str):
        text = value.strip()
        if isinstance(default, bool):
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise UserError(f"config: {name} expects true/false, got {value!r}")
        if name == "alpha" and text.lower() in {"", "none", "auto"}:
            return None
        try:
            if isinstance(default, int) and not isinstance(default, bool):
                return int(text)
            if isinstance(default, float) or name == "alpha":
                return float(text)
        except ValueError:
            raise UserError(f"config: {name} expects a number, got {value!r}") from None
        if default is None and text.lower() in {"", "none"}:
            return None
        return text
    return value


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a JSON object or ``key = value`` lines into RunConfig overrides."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as err:
        raise UserError(f"cannot read config file {p}: {err.strerror or err}") from None
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as err:
            raise UserError(f"config file {p} is not valid JSON: {err}") from None
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UserError(f"{p}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
    known = set(RunConfig.field_names())
    out = {}
    for key, value in raw.items():
        name = key.replace("-", "_")
        if name not in known:
            raise UserError(f"config file {p}: unknown key {key!r}")
        out[name] = _coerce(name, value)
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """RunConfig defaults, then the config file, then explicit flags."""
    values: dict[str, Any] = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        if f.name in vars(args):
            values[f.name] = getattr(args, f.name)
    return RunConfig(**values)


# -- argument parsing --------------------------------------------------------

def _add_store_args(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--db", dest="store_path", default=S, help="path to chat.db (required)")
    p.add_argument("--out", dest="output_dir", default=S, help="output directory (default: out)")
    p.add_argument("--config", default=None, help="JSON or key=value file; flags take precedence")
    p.add_argument("--copy-store", dest="copy_store", action="store_true", default=S,
                   help="read from a temporary copy of the store (avoids locks on the live file)")
    p.add_argument("--stoplist", default=S, help="replacement artifact stoplist file")


def _add_privacy_args(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--deidentify", action="store_true", default=S, help="replace handles with keyed pseudonyms")
    p.add_argument("--salt", default=S, help="pseudonym key; a random one is generated and printed if absent")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="imsg-insight", description="Analyze an iMessage chat.db store.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="ingest the store and write messages.csv")
    _add_store_args(p)
    _add_privacy_args(p)

    p = sub.add_parser("analyze", help="run the full pipeline and write report.json plus chart data")
    _add_store_args(p)
    _add_privacy_args(p)
    p.add_argument("--lexicon", default=S, help="replacement sentiment lexicon (token<TAB>valence)")
    p.add_argument("--seed", type=int, default=S, help="sampler seed (default: 0)")
    p.add_argument("--topics", type=int, default=S, help="number of topics K (default: 30)")
    p.add_argument("--iterations", type=int, default=S, help="Gibbs sweeps (default: 400)")
    p.add_argument("--burn-in", dest="burn_in", type=int, default=S, help="sweeps discarded (default: 200)")
    p.add_argument("--alpha", type=float, default=S, help="document-topic prior (default: 1/K)")
    p.add_argument("--beta", type=float, default=S, help="topic-word prior (default: 0.01)")
    p.add_argument("--min-df", dest="min_df", type=int, default=S,
                   help="drop words in fewer documents (default: 2)")
    p.add_argument("--window", choices=WINDOWS, default=S, help="time bucket for series (default: month)")
    p.add_argument("--reply-window", dest="reply_window", type=float, default=S,
                   help="minutes within which a message counts as a reply (default: 1440)")
    p.add_argument("--membership-threshold", dest="membership_threshold", type=float, default=S,
                   help="theta above which a message belongs to a topic (default: 0.3)")
    p.add_argument("--starter-gap", dest="starter_gap", type=float, default=S,
                   help="silence in minutes that makes a conversation starter (default: 180)")
    p.add_argument("--pos-threshold", dest="pos_threshold", type=float, default=S,
                   help="compound above which a message is Positive (default: 0.05)")
    p.add_argument("--neg-threshold", dest="neg_threshold", type=float, default=S,
                   help="compound below which a message is Negative (default: -0.05)")
    p.add_argument("--drop-unanswered", dest="drop_unanswered", action="store_true", default=S,
                   help="leave never-answered messages out of reluctance instead of scoring 1.0")
    p.add_argument("--exclude-tapbacks", dest="exclude_tapbacks", action="store_true", default=S,
                   help="leave reactions out of sentiment counts")

    p = sub.add_parser("ask", help="build an LLM request from a report; send it only with --send")
    p.add_argument("question", nargs="?", default=None)
    p.add_argument("--report", default=None, help="report path (default: <out>/report.json)")
    p.add_argument("--out", dest="output_dir", default="out",
                   help="directory holding the report and payload (default: out)")
    p.add_argument("--include-examples", action="store_true", help="include example message bodies")
    p.add_argument("--send", action="store_true", help="POST the payload (needs IMSG_INSIGHT_API_KEY)")
    p.add_argument("--model", default=None, help="model name placed in the payload")

    p = sub.add_parser("inspect", help="list chats, or dump one chat's timeline")
    _add_store_args(p)
    _add_privacy_args(p)
    p.add_argument("--chat", type=int, default=None, help="chat id to dump")
    return parser


# -- commands ----------------------------------------------------------------

def _pseudonymizer(cfg: RunConfig) -> Optional[Pseudonymizer]:
    if not cfg.deidentify:
        return None
    if cfg.salt is None:
        cfg.salt = secrets.token_hex(16)
        print(f"generated salt (keep it to reproduce pseudonyms): {cfg.salt}", file=sys.stderr)
    if not cfg.salt:
        raise EmptySalt("de-identification needs a non-empty salt")
    return Pseudonymizer(cfg.salt.encode("utf-8"))


def _ingest(cfg: RunConfig) -> IngestResult:
    if not cfg.store_path:
        raise UserError("--db is required")
    stoplist = load_stoplist(cfg.stoplist) if cfg.stoplist else None
    return load(cfg.store_path, copy=cfg.copy_store, stoplist=stoplist)


def cmd_export(cfg: RunConfig) -> int:
    pseudo = _pseudonymizer(cfg)
    ingested = _ingest(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_csv(ingested.messages, ingested.chat_map(), out / CSV_NAME,
               deidentify=pseudo is not None, salt=pseudo.salt if pseudo else None)
    print(json.dumps(ingested.summary.as_dict(), indent=2))
    return 0


def cmd_analyze(cfg: RunConfig) -> int:
    pseudo = _pseudonymizer(cfg)
    ingested = _ingest(cfg)
    analysis = run_analysis(ingested, cfg)
    report = build_report(analysis, cfg, pseudo)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    moved: list[Path] = []
    try:
        emit_report(report, staging / REPORT_NAME)
        save_model(analysis.model, staging / MODEL_NAME)
        emit_chart_data(report, staging)
        for name in (REPORT_NAME, MODEL_NAME) + CHART_FILES:
            (staging / name).replace(out / name)
            moved.append(out / name)
    except BaseException:
        for path in moved:
            path.unlink(missing_ok=True)
        raise
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    print(one_screen_summary(report))
    return 0


def cmd_ask(args: argparse.Namespace) -> int:
    out = Path(args.output_dir)
    report_path = Path(args.report) if args.report else out / REPORT_NAME
    if not report_path.is_file():
        raise UserError(f"report not found: {report_path} (run analyze first)")
    report = load_report(report_path)
    kwargs = {"model": args.model} if args.model else {}
    payload = build_llm_payload(report, args.question, args.include_examples, **kwargs)
    out.mkdir(parents=True, exist_ok=True)
    payload_path = out / PAYLOAD_NAME
    payload_path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"payload written to {payload_path}", file=sys.stderr)
    if args.send:
        print(send_payload(payload))
    return 0


def cmd_inspect(cfg: RunConfig, chat_id: Optional[int]) -> int:
    pseudo = _pseudonymizer(cfg)
    alias = pseudo or (lambda s: s)
    ingested = _ingest(cfg)
    if chat_id is None:
        counts: dict[int, int] = {}
        for m in ingested.messages:
            counts[m.chat_ref] = counts.get(m.chat_ref, 0) + 1
        print("chat\tsize\tbucket\tmessages\tname")
        for chat in ingested.chats:
            print(f"{chat.id}\t{chat.group_size}\t{chat.size_bucket.value}\t{counts.get(chat.id, 0)}\t"
                  f"{chat.display_name or ''}")
        return 0
    if chat_id not in ingested.chat_map():
        raise UserError(f"no chat with id {chat_id}")
    for m in ingested.messages:
        if m.chat_ref == chat_id:
            kind = m.kind.value if m.reaction is None else f"{m.kind.value}:{m.reaction.value}"
            print(f"{iso_utc(m.timestamp)}\t{m.direction.value}\t{alias(m.sender)}\t{kind}\t{m.body}")
    return 0


# -- entry point -------------------------------------------------------------

USER_ERRORS = (UserError, StoreError, FileNotFoundError, CorpusTooSmall, EmptySalt, MissingApiKey,
               urllib.error.URLError, OSError, ValueError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "ask":
            return cmd_ask(args)
        cfg = resolve_config(args)
        if args.command == "export":
            return cmd_export(cfg)
        if args.command == "analyze":
            return cmd_analyze(cfg)
        return cmd_inspect(cfg, args.chat)
    except USER_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # anything else is a bug
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
