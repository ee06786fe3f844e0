"""End-to-end analysis: clean -> LDA -> sentiment -> metrics -> report dict."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

import numpy as np

from . import metrics as mx
from .lda import DocTopics, LdaConfig, TopicModel, top_words, train
from .report import SCHEMA_VERSION, Pseudonymizer, iso_utc
from .sentiment import Label, Lexicon, SentimentResult, default_lexicon, load_lexicon, score
from .store import IngestResult, Message
from .text import TokenDoc, build_corpus, clean_tokens

MIN_MESSAGES = 10
TOP_WORDS_REPORTED = 30
TOP_PREVALENT = 5
TOP_STARTERS = 10


class CorpusTooSmall(ValueError):
    pass


@dataclass
class RunConfig:
    store_path: str = ""
    output_dir: str = "out"
    copy_store: bool = False
    seed: int = 0
    topics: int = 30
    iterations: int = 400
    burn_in: int = 200
    alpha: Optional[float] = None
    beta: float = 0.01
    min_df: int = 2
    window: str = "month"
    reply_window: float = mx.REPLY_WINDOW
    membership_threshold: float = mx.MEMBERSHIP_THRESHOLD
    starter_gap: float = mx.STARTER_GAP
    pos_threshold: float = 0.05
    neg_threshold: float = -0.05
    drop_unanswered: bool = False
    exclude_tapbacks: bool = False
    deidentify: bool = False
    salt: Optional[str] = None
    stoplist: Optional[str] = None
    lexicon: Optional[str] = None
    examples_per_topic: int = 5

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def lda_config(self) -> LdaConfig:
        return LdaConfig(num_topics=self.topics, alpha=self.alpha, beta=self.beta,
                         iterations=self.iterations, burn_in=self.burn_in, seed=self.seed)

    def echo(self) -> dict[str, Any]:
        """Parameter block for the report; the salt itself is never written."""
        out = asdict(self)
        out["salt"] = "<redacted>" if self.salt else None
        out["alpha"] = self.lda_config().doc_alpha
        return out


@dataclass
class Analysis:
    ingest: IngestResult
    model: TopicModel
    doc_topics: list[DocTopics]
    thetas: dict[int, np.ndarray]
    sentiments: dict[int, SentimentResult]
    reluctance: list[mx.ReluctanceRecord]
    reluctance_ranking: list[mx.TopicReluctance]
    prevalence: list[mx.PrevalencePoint]
    overall_prevalence: dict[int, float]
    responsiveness: list[mx.ResponsivenessBucket]
    starters: list[mx.StarterTopicScore]
    index: mx.ConversationIndex
    empty_documents: int = 0
    sentiment_summary: dict[str, dict] = field(default_factory=dict)
    sentiment_series: dict[str, list[mx.SentimentWindow]] = field(default_factory=dict)


def score_messages(messages: list[Message], lexicon: Lexicon, cfg: RunConfig) -> dict[int, SentimentResult]:
    return {m.id: score(m.body, lexicon, cfg.pos_threshold, cfg.neg_threshold) for m in messages}


def run_analysis(ingested: IngestResult, cfg: RunConfig, lexicon: Optional[Lexicon] = None) -> Analysis:
    messages = ingested.messages
    if len(messages) < MIN_MESSAGES:
        raise CorpusTooSmall(f"corpus too small: {len(messages)} usable messages, need at least {MIN_MESSAGES}")
    if lexicon is None:
        lexicon = load_lexicon(cfg.lexicon) if cfg.lexicon else default_lexicon()

    docs = [TokenDoc(m.id, tuple(clean_tokens(m.body))) for m in messages]
    dictionary, corpus = build_corpus(docs, cfg.min_df)
    model, doc_topics = train(dictionary, corpus, cfg.lda_config())
    thetas = {dt.message_id: dt.theta for dt in doc_topics}
    sentiments = score_messages(messages, lexicon, cfg)

    index = mx.ConversationIndex(messages)
    records = mx.reluctance_records(index, cfg.drop_unanswered)
    avg = mx.topic_avg_reluctance(records, thetas)
    counts = mx.member_counts((r.message_id for r in records), thetas, model.num_topics, cfg.membership_threshold)
    chats = ingested.chat_map()

    analysis = Analysis(
        ingest=ingested,
        model=model,
        doc_topics=doc_topics,
        thetas=thetas,
        sentiments=sentiments,
        reluctance=records,
        reluctance_ranking=mx.weighted_reluctance(avg, counts),
        prevalence=mx.prevalence_over_time(messages, thetas, cfg.window),
        overall_prevalence=mx.overall_prevalence(messages, thetas),
        responsiveness=mx.bucket_responsiveness(messages, chats, index, cfg.reply_window),
        starters=mx.starter_scores(messages, thetas, index, cfg.membership_threshold, cfg.reply_window,
                                   cfg.starter_gap),
        index=index,
        empty_documents=sum(corpus.empty_flags),
    )
    for direction in mx.DirectionFilter:
        analysis.sentiment_summary[direction.value] = mx.sentiment_summary(
            messages, sentiments, direction, cfg.exclude_tapbacks)
        analysis.sentiment_series[direction.value] = mx.sentiment_over_time(
            messages, sentiments, cfg.window, direction, cfg.exclude_tapbacks)
    return analysis


def _labels(d: dict[Label, Any]) -> dict[str, Any]:
    return {lab.value: d[lab] for lab in Label}


def _examples(analysis: Analysis, topic: int, n: int, alias) -> list[dict]:
    by_id = {m.id: m for m in analysis.ingest.messages}
    scored = []
    for rec in analysis.reluctance:
        prob = float(analysis.thetas[rec.message_id][topic])
        weight = rec.reluctance * prob
        if weight > 0:
            scored.append((weight, rec, prob))
    scored.sort(key=lambda x: (-x[0], x[1].message_id))
    out = []
    for _, rec, prob in scored[:n]:
        msg = by_id[rec.message_id]
        out.append({
            "sender": alias(msg.sender),
            "timestamp": iso_utc(msg.timestamp),
            "body": msg.body,
            "reluctance": rec.reluctance,
            "topic_prob": prob,
        })
    return out


def _per_chat(analysis: Analysis, cfg: RunConfig) -> list[dict]:
    rel = {r.message_id: r.reluctance for r in analysis.reluctance}
    out = []
    for chat in analysis.ingest.chats:
        tl = analysis.index.timeline(chat.id)
        inbound = [m for m in tl if m.is_inbound]
        times = [t for t in (analysis.index.response_minutes(m, cfg.reply_window, owner_only=True)
                             for m in inbound) if t is not None]
        rels = [rel[m.id] for m in inbound if m.id in rel]
        out.append({
            "chat": chat.id,
            "group_size": chat.group_size,
            "size_bucket": chat.size_bucket.value,
            "inbound": len(inbound),
            "outbound": len(tl) - len(inbound),
            "reply_rate": len(times) / len(inbound) if inbound else None,
            "median_response_minutes": float(np.median(times)) if times else None,
            "mean_reluctance": sum(rels) / len(rels) if rels else None,
        })
    return out


def build_report(analysis: Analysis, cfg: RunConfig, pseudonymize: Optional[Pseudonymizer] = None) -> dict:
    """Assemble the versioned JSON-ready report."""
    alias = pseudonymize or (lambda s: s)
    model = analysis.model
    messages = analysis.ingest.messages
    topics = [
        {"topic": t, "top_words": [{"word": w, "probability": p} for w, p in top_words(model, t, TOP_WORDS_REPORTED)]}
        for t in range(model.num_topics)
    ]
    words_of = {t["topic"]: [w["word"] for w in t["top_words"][:10]] for t in topics}
    overall = analysis.overall_prevalence
    top_topics = sorted(overall, key=lambda t: (-overall[t], t))[:TOP_PREVALENT]
    starters = [
        {"topic": s.topic, "reply_rate": s.reply_rate, "speed_score": s.speed_score,
         "starter_prob": s.starter_prob, "starter_score": s.starter_score, "member_count": s.member_count,
         "top_words": words_of[s.topic]}
        for s in analysis.starters
    ]
    newest = max(m.timestamp for m in messages)
    return {
        "schema_version": SCHEMA_VERSION,
        "generated_at": iso_utc(newest),
        "parameters": cfg.echo(),
        "ingest": analysis.ingest.summary.as_dict(),
        "definitions": {
            "reply": dict(mx.REPLY_DEFINITIONS),
            "reluctance": "min(minutes to next outbound message / 1440, 1); 1 when never answered",
            "weighted_score": "avg_reluctance * ln(1 + member_count)",
            "generated_at": "timestamp of the newest analysed message",
        },
        "topic_model": {
            "num_topics": model.num_topics,
            "alpha": model.config.doc_alpha,
            "beta": model.config.beta,
            "iterations": model.config.iterations,
            "burn_in": model.config.burn_in,
            "sample_every": model.config.sample_every,
            "seed": model.config.seed,
            "vocabulary_size": len(model.dictionary),
            "documents": len(analysis.doc_topics),
            "empty_documents": analysis.empty_documents,
            "topics": topics,
        },
        "reluctance": {
            "records": len(analysis.reluctance),
            "unanswered": sum(1 for r in analysis.reluctance if r.response_minutes is None),
            "ranking": [
                {"topic": r.topic, "avg_reluctance": r.avg_reluctance, "member_count": r.member_count,
                 "weighted_score": r.weighted_score, "top_words": words_of[r.topic],
                 "examples": _examples(analysis, r.topic, cfg.examples_per_topic, alias)}
                for r in analysis.reluctance_ranking
            ],
        },
        "prevalence": {
            "window": cfg.window,
            "top_topics": top_topics,
            "overall": [{"topic": t, "mean_theta": overall[t]} for t in sorted(overall)],
            "series": [
                {"window_start": iso_utc(p.window_start), "topic": p.topic, "mean_theta": p.mean_theta}
                for p in analysis.prevalence
            ],
        },
        "responsiveness": {
            "buckets": [
                {"bucket": b.bucket.value, "reply_rate": b.reply_rate,
                 "median_response_minutes": b.median_response_minutes, "message_count": b.message_count}
                for b in analysis.responsiveness
            ],
            "per_chat": _per_chat(analysis, cfg),
        },
        "starters": {"ranking": starters, "top10": starters[:TOP_STARTERS]},
        "sentiment": {
            "summary": {
                d: {"counts": _labels(s["counts"]), "proportions": _labels(s["proportions"]),
                    "mean_compound": s["mean_compound"], "total": s["total"]}
                for d, s in analysis.sentiment_summary.items()
            },
            "series": {
                d: [{"window_start": iso_utc(w.window_start), "counts": _labels(w.counts),
                     "proportions": _labels(w.proportions)} for w in series]
                for d, series in analysis.sentiment_series.items()
            },
        },
    }


def one_screen_summary(report: dict) -> str:
    lines = []
    ranking = report["reluctance"]["ranking"]
    if ranking:
        r = ranking[0]
        lines.append(f"most reluctant topic: {r['topic']} (score {r['weighted_score']:.3f}) "
                     f"[{' '.join(r['top_words'][:6])}]")
    else:
        lines.append("most reluctant topic: n/a (no inbound messages)")
    starters = report["starters"]["top10"]
    if starters:
        s = starters[0]
        lines.append(f"top starter topic: {s['topic']} (score {s['starter_score']:.3f}) "
                     f"[{' '.join(s['top_words'][:6])}]")
    else:
        lines.append("top starter topic: n/a")
    props = report["sentiment"]["summary"]["all"]["proportions"]
    lines.append("sentiment: " + ", ".join(f"{k.lower()} {v:.1%}" for k, v in props.items()))
    for b in report["responsiveness"]["buckets"]:
        med = b["median_response_minutes"]
        lines.append(f"  {b['bucket']:<9} reply rate {b['reply_rate']:.2f}  "
                     f"median {'-' if med is None else f'{med:.1f} min'}  (n={b['message_count']})")
    return "\n".join(lines)
