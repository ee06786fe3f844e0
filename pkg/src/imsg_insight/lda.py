"""Latent Dirichlet allocation trained by collapsed Gibbs sampling.

Randomness comes from a counter-based generator: every uniform draw is a
hash of ``(seed, message_id, sweep, token position)``. Documents are swept in
ascending message-id order, so results are bit-identical across runs and do
not depend on the order documents are handed in.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numba
import numpy as np

from .text import Corpus, Dictionary

FORMAT_VERSION = 1


class TopicOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class LdaConfig:
    num_topics: int = 30
    alpha: Optional[float] = None  # None -> 1 / num_topics
    beta: float = 0.01
    iterations: int = 400
    burn_in: int = 200
    sample_every: int = 10
    seed: int = 0
    infer_iterations: int = 100
    infer_burn_in: int = 50

    def __post_init__(self) -> None:
        if self.num_topics < 1:
            raise ValueError("num_topics must be >= 1")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not self.iterations > self.burn_in >= 0:
            raise ValueError("need iterations > burn_in >= 0")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if not self.infer_iterations > self.infer_burn_in >= 0:
            raise ValueError("need infer_iterations > infer_burn_in >= 0")

    @property
    def doc_alpha(self) -> float:
        return 1.0 / self.num_topics if self.alpha is None else float(self.alpha)


@dataclass(frozen=True)
class DocTopics:
    message_id: int
    theta: np.ndarray


@dataclass
class TopicModel:
    config: LdaConfig
    phi: np.ndarray
    dictionary: Dictionary
    log_likelihood: list[tuple[int, float]] = field(default_factory=list)

    @property
    def num_topics(self) -> int:
        return self.phi.shape[0]


# -- counter-based RNG -------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SWEEP_MUL = np.uint64(0xD1B54A32D192ED03)


@numba.njit(cache=True)
def _splitmix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _uniform(key, sweep, pos):
    h = _splitmix(key ^ _splitmix(np.uint64(sweep) * _SWEEP_MUL + np.uint64(pos)))
    return np.float64(h >> np.uint64(11)) * (1.0 / 9007199254740992.0)


def _doc_keys(seed: int, message_ids: Sequence[int]) -> np.ndarray:
    mask = (1 << 64) - 1
    base = _py_splitmix(seed & mask)
    return np.array([_py_splitmix(base ^ (int(m) & mask)) for m in message_ids], dtype=np.uint64)


def _py_splitmix(z: int) -> int:
    mask = (1 << 64) - 1
    z = (z + 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


# -- kernels -----------------------------------------------------------------

@numba.njit(cache=True)
def _draw(p, u):
    total = 0.0
    for k in range(p.shape[0]):
        total += p[k]
        p[k] = total
    target = u * total
    for k in range(p.shape[0]):
        if target < p[k]:
            return k
    return p.shape[0] - 1


@numba.njit(cache=True)
def _log_likelihood(nkw, nk, beta):
    K, V = nkw.shape
    ll = K * (math.lgamma(V * beta) - V * math.lgamma(beta))
    for k in range(K):
        for w in range(V):
            ll += math.lgamma(nkw[k, w] + beta)
        ll -= math.lgamma(nk[k] + V * beta)
    return ll


@numba.njit(cache=True)
def _gibbs(doc_ptr, words, keys, K, V, alpha, beta, iterations, sample_at, ll_at):
    D = doc_ptr.shape[0] - 1
    N = words.shape[0]
    z = np.empty(N, dtype=np.int64)
    ndk = np.zeros((D, K), dtype=np.int64)
    nkw = np.zeros((K, V), dtype=np.int64)
    nk = np.zeros(K, dtype=np.int64)
    for d in range(D):
        for i in range(doc_ptr[d], doc_ptr[d + 1]):
            k = int(_uniform(keys[d], 0, i - doc_ptr[d]) * K)
            if k >= K:
                k = K - 1
            z[i] = k
            ndk[d, k] += 1
            nkw[k, words[i]] += 1
            nk[k] += 1

    phi_acc = np.zeros((K, V))
    theta_acc = np.zeros((D, K))
    lls = np.zeros(iterations)
    p = np.empty(K)
    vbeta = V * beta
    kalpha = K * alpha
    for sweep in range(1, iterations + 1):
        for d in range(D):
            start = doc_ptr[d]
            for i in range(start, doc_ptr[d + 1]):
                w = words[i]
                k = z[i]
                ndk[d, k] -= 1
                nkw[k, w] -= 1
                nk[k] -= 1
                for t in range(K):
                    p[t] = (ndk[d, t] + alpha) * (nkw[t, w] + beta) / (nk[t] + vbeta)
                k = _draw(p, _uniform(keys[d], sweep, i - start))
                z[i] = k
                ndk[d, k] += 1
                nkw[k, w] += 1
                nk[k] += 1
        if ll_at[sweep - 1]:
            lls[sweep - 1] = _log_likelihood(nkw, nk, beta)
        if sample_at[sweep - 1]:
            for k in range(K):
                denom = nk[k] + vbeta
                for w in range(V):
                    phi_acc[k, w] += (nkw[k, w] + beta) / denom
            for d in range(D):
                denom = (doc_ptr[d + 1] - doc_ptr[d]) + kalpha
                for k in range(K):
                    theta_acc[d, k] += (ndk[d, k] + alpha) / denom
    return phi_acc, theta_acc, lls


@numba.njit(cache=True)
def _fold_in(doc_ptr, words, keys, phi, alpha, iterations, burn_in):
    K = phi.shape[0]
    D = doc_ptr.shape[0] - 1
    theta = np.zeros((D, K))
    p = np.empty(K)
    kalpha = K * alpha
    for d in range(D):
        start = doc_ptr[d]
        end = doc_ptr[d + 1]
        n = end - start
        if n == 0:
            for k in range(K):
                theta[d, k] = 1.0 / K
            continue
        z = np.empty(n, dtype=np.int64)
        ndk = np.zeros(K, dtype=np.int64)
        for j in range(n):
            k = int(_uniform(keys[d], 0, j) * K)
            if k >= K:
                k = K - 1
            z[j] = k
            ndk[k] += 1
        samples = 0
        for sweep in range(1, iterations + 1):
            for j in range(n):
                w = words[start + j]
                ndk[z[j]] -= 1
                for t in range(K):
                    p[t] = (ndk[t] + alpha) * phi[t, w]
                k = _draw(p, _uniform(keys[d], sweep, j))
                z[j] = k
                ndk[k] += 1
            if sweep > burn_in:
                samples += 1
                for k in range(K):
                    theta[d, k] += (ndk[k] + alpha) / (n + kalpha)
        for k in range(K):
            theta[d, k] /= samples
    return theta


# -- public API --------------------------------------------------------------

def _flatten(bows: Sequence[Sequence[tuple[int, int]]]) -> tuple[np.ndarray, np.ndarray]:
    ptr = [0]
    flat: list[int] = []
    for bow in bows:
        for wid, count in bow:
            flat.extend([wid] * count)
        ptr.append(len(flat))
    return np.asarray(ptr, dtype=np.int64), np.asarray(flat, dtype=np.int64)


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    return m / m.sum(axis=1, keepdims=True)


def _schedule(config: LdaConfig) -> np.ndarray:
    n = config.iterations
    sample_at = np.zeros(n, dtype=np.bool_)
    for s in range(config.burn_in + 1, n + 1):
        if (s - config.burn_in) % config.sample_every == 0:
            sample_at[s - 1] = True
    if not sample_at.any():
        sample_at[-1] = True
    return sample_at


def train(dictionary: Dictionary, corpus: Corpus, config: LdaConfig = LdaConfig(),
          track_likelihood: bool = False) -> tuple[TopicModel, list[DocTopics]]:
    """Fit LDA on ``corpus`` and return the model plus per-message topic mixes.

    phi and theta are averaged over post-burn-in samples taken every
    ``config.sample_every`` sweeps. Documents with no tokens get the uniform
    distribution. With ``track_likelihood`` the collapsed log p(w | z) is
    recorded after every sweep (costs O(K*V) per sweep).
    """
    order = sorted(range(len(corpus)), key=lambda i: corpus.message_ids[i])
    ids = [corpus.message_ids[i] for i in order]
    doc_ptr, words = _flatten([corpus.bows[i] for i in order])
    keys = _doc_keys(config.seed, ids)
    K, V = config.num_topics, len(dictionary)
    sample_at = _schedule(config)
    ll_at = np.full(config.iterations, track_likelihood, dtype=np.bool_)
    phi_acc, theta_acc, lls = _gibbs(doc_ptr, words, keys, K, V, config.doc_alpha, config.beta,
                                     config.iterations, sample_at, ll_at)
    phi = _normalize_rows(phi_acc)
    theta = _normalize_rows(theta_acc)
    history = [(s + 1, float(lls[s])) for s in range(config.iterations) if ll_at[s]]
    model = TopicModel(config=config, phi=phi, dictionary=dictionary, log_likelihood=history)
    by_id = {mid: theta[row] for row, mid in enumerate(ids)}
    return model, [DocTopics(mid, by_id[mid]) for mid in corpus.message_ids]


def infer_many(model: TopicModel, bows: Sequence[Sequence[tuple[int, int]]],
               message_ids: Sequence[int]) -> list[DocTopics]:
    """Fold unseen documents into a trained model (phi held fixed)."""
    V = model.phi.shape[1]
    clean = [[(w, c) for w, c in bow if 0 <= w < V] for bow in bows]
    doc_ptr, words = _flatten(clean)
    keys = _doc_keys(model.config.seed, message_ids)
    cfg = model.config
    theta = _fold_in(doc_ptr, words, keys, model.phi, cfg.doc_alpha, cfg.infer_iterations, cfg.infer_burn_in)
    theta = _normalize_rows(theta)
    return [DocTopics(mid, theta[i]) for i, mid in enumerate(message_ids)]


def infer(model: TopicModel, tokens: Sequence[str], message_id: int = 0) -> DocTopics:
    """Topic mix for one tokenized document; OOV words are ignored."""
    bow = model.dictionary.doc2bow(tokens)
    return infer_many(model, [bow], [message_id])[0]


def top_words(model: TopicModel, topic: int, n: int = 30) -> list[tuple[str, float]]:
    """The ``n`` most probable words of ``topic`` (ties: lower word id first)."""
    if not 0 <= topic < model.num_topics:
        raise TopicOutOfRange(f"topic {topic} not in [0, {model.num_topics})")
    row = model.phi[topic]
    order = np.lexsort((np.arange(row.shape[0]), -row))[:n]
    return [(model.dictionary.id2word[i], float(row[i])) for i in order]


def topic_members(doc_topics: Sequence[DocTopics], topic: int, threshold: float = 0.3) -> set[int]:
    """Ids of messages whose probability for ``topic`` strictly exceeds ``threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    return {dt.message_id for dt in doc_topics if dt.theta[topic] > threshold}


def save_model(model: TopicModel, path: str | Path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.config),
        "dictionary": {"words": model.dictionary.id2word, "dfs": model.dictionary.dfs},
        "phi": model.phi.tolist(),
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path: str | Path) -> TopicModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {version!r}")
    dictionary = Dictionary(id2word=list(doc["dictionary"]["words"]), dfs=list(doc["dictionary"]["dfs"]))
    phi = np.asarray(doc["phi"], dtype=np.float64)
    return TopicModel(config=LdaConfig(**doc["config"]), phi=phi, dictionary=dictionary)
