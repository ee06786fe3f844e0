"""Lexicon- and rule-based sentiment scoring (VADER rule set).

Scoring runs on the raw message body: capitalization, punctuation and emoji
all carry signal, so nothing from :mod:`imsg_insight.text` is applied first.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

B_INCR = 0.293
B_DECR = -0.293
C_INCR = 0.733
N_SCALAR = -0.74
NORMALIZATION_ALPHA = 15
EXCLAMATION_INCR = 0.292
EXCLAMATION_CAP = 4
QUESTION_INCR = 0.18
QUESTION_MAX = 0.96

POS_THRESHOLD = 0.05
NEG_THRESHOLD = -0.05

NEGATIONS = frozenset([
    "aint", "arent", "cannot", "cant", "couldnt", "darent", "didnt", "doesnt",
    "ain't", "aren't", "can't", "couldn't", "daren't", "didn't", "doesn't",
    "dont", "hadnt", "hasnt", "havent", "isnt", "mightnt", "mustnt", "neither",
    "don't", "hadn't", "hasn't", "haven't", "isn't", "mightn't", "mustn't",
    "neednt", "needn't", "never", "none", "nope", "nor", "not", "nothing", "nowhere",
    "oughtnt", "shant", "shouldnt", "uhuh", "wasnt", "werent",
    "oughtn't", "shan't", "shouldn't", "uh-uh", "wasn't", "weren't",
    "without", "wont", "wouldnt", "won't", "wouldn't", "rarely", "seldom", "despite",
])

_UP = [
    "absolutely", "amazingly", "awfully", "completely", "considerable", "considerably",
    "decidedly", "deeply", "effing", "enormous", "enormously", "entirely", "especially",
    "exceptional", "exceptionally", "extreme", "extremely", "fabulously", "flipping",
    "flippin", "frackin", "fracking", "fricking", "frickin", "frigging", "friggin",
    "fully", "fuckin", "fucking", "fuggin", "fugging", "greatly", "hella", "highly",
    "hugely", "incredible", "incredibly", "intensely", "major", "majorly", "more",
    "most", "particularly", "purely", "quite", "really", "remarkably", "so",
    "substantially", "thoroughly", "total", "totally", "tremendous", "tremendously",
    "uber", "unbelievably", "unusually", "utter", "utterly", "very",
]
_DOWN = [
    "almost", "barely", "hardly", "just enough", "kind of", "kinda", "kindof", "kind-of",
    "less", "little", "marginal", "marginally", "occasional", "occasionally", "partly",
    "scarce", "scarcely", "slight", "slightly", "somewhat", "sort of", "sorta", "sortof",
    "sort-of",
]
BOOSTERS = {**{w: B_INCR for w in _UP}, **{w: B_DECR for w in _DOWN}}

SPECIAL_CASES = {
    "the shit": 3, "the bomb": 3, "bad ass": 1.5, "badass": 1.5, "bus stop": 0.0,
    "yeah right": -2, "kiss of death": -1.5, "to die for": 3, "beating heart": 3.5,
}


class Label(str, Enum):
    POSITIVE = "Positive"
    NEUTRAL = "Neutral"
    NEGATIVE = "Negative"


@dataclass(frozen=True)
class SentimentResult:
    neg: float
    neu: float
    pos: float
    compound: float
    label: Label


@dataclass(frozen=True)
class Lexicon:
    valences: Mapping[str, float]
    boosters: Mapping[str, float]
    negations: frozenset[str]
    emoji: Mapping[str, str]


def _read_data(name: str) -> str:
    return resources.files("imsg_insight").joinpath(f"data/{name}").read_text("utf-8")


def parse_valences(raw: str) -> dict[str, float]:
    """Parse ``token<TAB>valence`` lines; ``#`` starts a comment line."""
    out = {}
    for lineno, line in enumerate(raw.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) < 2:
            raise ValueError(f"lexicon line {lineno}: expected token<TAB>valence")
        value = float(parts[1])
        if not math.isfinite(value):
            raise ValueError(f"lexicon line {lineno}: non-finite valence")
        out[parts[0]] = value
    return out


def _parse_emoji(raw: str) -> dict[str, str]:
    out = {}
    for line in raw.splitlines():
        # '#' alone may start a keycap emoji, so comments need "# "
        if not line.strip() or line.startswith("# "):
            continue
        emoji, description = line.split("\t")[:2]
        out[emoji] = description
    return out


def load_lexicon(path: Optional[str | Path] = None) -> Lexicon:
    """Load the bundled lexicon, or replace its word valences from ``path``."""
    raw = _read_data("lexicon.tsv") if path is None else Path(path).read_text(encoding="utf-8")
    return Lexicon(
        valences=parse_valences(raw),
        boosters=dict(BOOSTERS),
        negations=NEGATIONS,
        emoji=_parse_emoji(_read_data("emoji.tsv")),
    )


_DEFAULT: Optional[Lexicon] = None


def default_lexicon() -> Lexicon:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_lexicon()
    return _DEFAULT


def classify(compound: float, pos_threshold: float = POS_THRESHOLD,
             neg_threshold: float = NEG_THRESHOLD) -> Label:
    if compound > pos_threshold:
        return Label.POSITIVE
    if compound < neg_threshold:
        return Label.NEGATIVE
    return Label.NEUTRAL


def normalize_score(score: float, alpha: float = NORMALIZATION_ALPHA) -> float:
    return max(-1.0, min(1.0, score / math.sqrt(score * score + alpha)))


def _strip_punct(token: str) -> str:
    # leaves short tokens alone so emoticons like ":)" survive
    stripped = token.strip(string.punctuation)
    return token if len(stripped) <= 2 else stripped


def _expand_emoji(text: str, emoji: Mapping[str, str]) -> str:
    out = []
    prev_space = True
    for ch in text:
        description = emoji.get(ch)
        if description is not None:
            if not prev_space:
                out.append(" ")
            out.append(description)
            prev_space = False
        else:
            out.append(ch)
            prev_space = ch == " "
    return "".join(out).strip()


class _Scorer:
    def __init__(self, words: list[str], lex: Lexicon):
        self.words = words
        self.lower = [w.lower() for w in words]
        self.lex = lex
        caps = sum(1 for w in words if w.isupper())
        self.cap_diff = 0 < len(words) - caps < len(words)

    def negated(self, word: str) -> bool:
        return word in self.lex.negations or "n't" in word

    def booster(self, i: int, valence: float) -> float:
        word = self.words[i]
        scalar = self.lex.boosters.get(self.lower[i], 0.0)
        if scalar == 0.0:
            return 0.0
        if valence < 0:
            scalar = -scalar
        if word.isupper() and self.cap_diff:
            scalar += C_INCR if valence > 0 else -C_INCR
        return scalar

    def valence(self, i: int) -> float:
        lower, words, lex = self.lower, self.words, self.lex.valences
        item = lower[i]
        if item not in lex:
            return 0.0
        base = lex[item]
        valence = base
        last = len(words) - 1
        # "no" directly before another lexicon word acts as a negator, not a word
        if item == "no" and i != last and lower[i + 1] in lex:
            valence = 0.0
        if (i > 0 and lower[i - 1] == "no") or (i > 1 and lower[i - 2] == "no") or (
            i > 2 and lower[i - 3] == "no" and lower[i - 1] in ("or", "nor")
        ):
            valence = base * N_SCALAR
        if words[i].isupper() and self.cap_diff:
            valence += C_INCR if valence > 0 else -C_INCR
        for dist in range(3):
            j = i - (dist + 1)
            if i > dist and lower[j] not in lex:
                s = self.booster(j, valence)
                if s != 0:
                    s *= (1.0, 0.95, 0.9)[dist]
                valence += s
                valence = self.negation(valence, dist, i)
                if dist == 2:
                    valence = self.idioms(valence, i)
        return self.least(valence, i)

    def negation(self, valence: float, dist: int, i: int) -> float:
        w = self.lower
        if dist == 0:
            if self.negated(w[i - 1]):
                valence *= N_SCALAR
        elif dist == 1:
            if w[i - 2] == "never" and w[i - 1] in ("so", "this"):
                valence *= 1.25
            elif w[i - 2] == "without" and w[i - 1] == "doubt":
                pass
            elif self.negated(w[i - 2]):
                valence *= N_SCALAR
        else:
            if (w[i - 3] == "never" and w[i - 2] in ("so", "this")) or w[i - 1] in ("so", "this"):
                valence *= 1.25
            elif w[i - 3] == "without" and (w[i - 2] == "doubt" or w[i - 1] == "doubt"):
                pass
            elif self.negated(w[i - 3]):
                valence *= N_SCALAR
        return valence

    def idioms(self, valence: float, i: int) -> float:
        w = self.lower
        seqs = [
            f"{w[i - 1]} {w[i]}",
            f"{w[i - 2]} {w[i - 1]} {w[i]}",
            f"{w[i - 2]} {w[i - 1]}",
            f"{w[i - 3]} {w[i - 2]} {w[i - 1]}",
            f"{w[i - 3]} {w[i - 2]}",
        ]
        for seq in seqs:
            if seq in SPECIAL_CASES:
                valence = SPECIAL_CASES[seq]
                break
        if len(w) - 1 > i:
            pair = f"{w[i]} {w[i + 1]}"
            if pair in SPECIAL_CASES:
                valence = SPECIAL_CASES[pair]
        if len(w) - 1 > i + 1:
            triple = f"{w[i]} {w[i + 1]} {w[i + 2]}"
            if triple in SPECIAL_CASES:
                valence = SPECIAL_CASES[triple]
        for ngram in (seqs[3], seqs[4], seqs[2]):
            if ngram in self.lex.boosters:
                valence += self.lex.boosters[ngram]
        return valence

    def least(self, valence: float, i: int) -> float:
        w, lex = self.lower, self.lex.valences
        if i > 1 and w[i - 1] not in lex and w[i - 1] == "least":
            if w[i - 2] not in ("at", "very"):
                valence *= N_SCALAR
        elif i > 0 and w[i - 1] not in lex and w[i - 1] == "least":
            valence *= N_SCALAR
        return valence

    def sentiments(self) -> list[float]:
        out = []
        for i, item in enumerate(self.lower):
            if item in self.lex.boosters:
                out.append(0.0)
            elif item == "kind" and i < len(self.lower) - 1 and self.lower[i + 1] == "of":
                out.append(0.0)
            else:
                out.append(self.valence(i))
        if "but" in self.lower:
            # contrastive conjunction: clause after "but" dominates
            b = self.lower.index("but")
            out = [s * 0.5 if k < b else s * 1.5 if k > b else s for k, s in enumerate(out)]
        return out


def _punctuation_emphasis(text: str) -> float:
    ep = min(text.count("!"), EXCLAMATION_CAP) * EXCLAMATION_INCR
    qm = text.count("?")
    if qm <= 1:
        return ep
    return ep + (qm * QUESTION_INCR if qm <= 3 else QUESTION_MAX)


def score(text: str, lexicon: Optional[Lexicon] = None, pos_threshold: float = POS_THRESHOLD,
          neg_threshold: float = NEG_THRESHOLD) -> SentimentResult:
    """Score ``text``; see the module docstring for the rules applied.

    Empty or whitespace-only input scores all zeros and is Neutral.
    """
    lex = lexicon or default_lexicon()
    text = _expand_emoji(text, lex.emoji)
    words = [_strip_punct(t) for t in text.split()]
    if not words:
        return SentimentResult(0.0, 0.0, 0.0, 0.0, Label.NEUTRAL)
    sentiments = _Scorer(words, lex).sentiments()

    amp = _punctuation_emphasis(text)
    total = float(sum(sentiments))
    if total > 0:
        total += amp
    elif total < 0:
        total -= amp
    compound = normalize_score(total)

    pos_sum = sum(s + 1 for s in sentiments if s > 0)
    neg_sum = sum(s - 1 for s in sentiments if s < 0)
    neu_count = sum(1 for s in sentiments if s == 0)
    if pos_sum > abs(neg_sum):
        pos_sum += amp
    elif pos_sum < abs(neg_sum):
        neg_sum -= amp
    mass = pos_sum + abs(neg_sum) + neu_count
    return SentimentResult(
        neg=abs(neg_sum / mass),
        neu=abs(neu_count / mass),
        pos=abs(pos_sum / mass),
        compound=compound,
        label=classify(compound, pos_threshold, neg_threshold),
    )
