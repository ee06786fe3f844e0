"""Message text normalization, tokenization and corpus construction.

Bodies are lowercased and punctuation is replaced by spaces; there is no
stemming, lemmatization or stopword removal because short messages lose too
much signal under either.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

DEFAULT_MIN_DF = 2


class EmptyCorpus(ValueError):
    """No document retains a single token after dictionary filtering."""


def load_stoplist(path: Optional[str | Path] = None) -> frozenset[str]:
    """Load an artifact stoplist (one token per line, ``#`` comments).

    Without a path the bundled list is used.
    """
    if path is None:
        raw = resources.files("imsg_insight").joinpath("data/artifact_stoplist.txt").read_text("utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    words = set()
    for line in raw.splitlines():
        line = line.strip()
        if line and not line.startswith("# ") and line != "#":
            words.add(line.lower())
    return frozenset(words)


def strip_artifacts(text: str, stoplist: Iterable[str]) -> str:
    """Drop whitespace-delimited tokens whose lowercase form is in ``stoplist``.

    Text without any artifact token is returned unchanged (including its
    original whitespace); otherwise surviving tokens are joined by one space.
    """
    stop = stoplist if isinstance(stoplist, (set, frozenset)) else set(stoplist)
    tokens = text.split()
    kept = [t for t in tokens if t.lower() not in stop]
    if len(kept) == len(tokens):
        return text
    return " ".join(kept)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def normalize(text: str) -> str:
    """Lowercase ``text`` and replace each run of punctuation with one space.

    Symbols (emoji, currency, math) are not punctuation and pass through.

    >>> normalize("OMG!! See you @5pm.")
    'omg  see you  5pm '
    """
    out = []
    in_run = False
    for ch in text.lower():
        if _is_punct(ch):
            if not in_run:
                out.append(" ")
                in_run = True
        else:
            out.append(ch)
            in_run = False
    return "".join(out)


def tokenize(text: str) -> list[str]:
    return text.split()


def clean_tokens(text: str) -> list[str]:
    """normalize + tokenize in one step."""
    return tokenize(normalize(text))


@dataclass(frozen=True)
class TokenDoc:
    message_id: int
    tokens: tuple[str, ...]


@dataclass
class Dictionary:
    """Bidirectional word/id map with document frequencies.

    Ids are assigned in sorted word order so that the mapping does not depend
    on document order.
    """

    id2word: list[str] = field(default_factory=list)
    dfs: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.word2id = {w: i for i, w in enumerate(self.id2word)}

    def __len__(self) -> int:
        return len(self.id2word)

    def __contains__(self, word: str) -> bool:
        return word in self.word2id

    def doc2bow(self, tokens: Sequence[str]) -> list[tuple[int, int]]:
        """Bag-of-words for ``tokens``; out-of-vocabulary words are dropped."""
        counts: dict[int, int] = {}
        for tok in tokens:
            wid = self.word2id.get(tok)
            if wid is not None:
                counts[wid] = counts.get(wid, 0) + 1
        return sorted(counts.items())


@dataclass
class Corpus:
    message_ids: list[int]
    bows: list[list[tuple[int, int]]]

    @property
    def empty_flags(self) -> list[bool]:
        return [not bow for bow in self.bows]

    def __len__(self) -> int:
        return len(self.bows)


def build_corpus(docs: Sequence[TokenDoc], min_df: int = DEFAULT_MIN_DF) -> tuple[Dictionary, Corpus]:
    """Build the dictionary and bag-of-words corpus.

    Words in fewer than ``min_df`` documents are dropped. Documents left with
    no tokens stay in the corpus (flagged via ``Corpus.empty_flags``) so that
    every message keeps a topic distribution.

    Raises:
        EmptyCorpus: if no document keeps any token.
    """
    df: dict[str, int] = {}
    for doc in docs:
        for word in set(doc.tokens):
            df[word] = df.get(word, 0) + 1
    vocab = sorted(w for w, n in df.items() if n >= min_df)
    dictionary = Dictionary(id2word=vocab, dfs=[df[w] for w in vocab])
    bows = [dictionary.doc2bow(doc.tokens) for doc in docs]
    if not any(bows):
        raise EmptyCorpus("no document has a token with document frequency >= %d" % min_df)
    return dictionary, Corpus(message_ids=[d.message_id for d in docs], bows=bows)
