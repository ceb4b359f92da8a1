"""Topic modeling: vocabulary, phrase detection, LDA via collapsed Gibbs
sampling, NPMI coherence and coherence-driven model selection."""

from __future__ import annotations

import itertools
import logging
import math
import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

Corpus = list[list[str]]

NPMI_EPS = 1e-12
PHRASE_DISCOUNT = 5.0

STOPWORDS = frozenset(
    """
    a about above after again against all also am an and any are as at be because been
    before being below between both but by can could did do does doing down during each
    et al few for from further had has have having he her here hers herself him himself
    his how i if in into is it its itself just may me might more most must my myself no
    nor not now of off on once only or other our ours ourselves out over own same she
    should so some such than that the their theirs them themselves then there these
    they this those through to too under until up upon us using used very was we were
    what when where which while who whom why will with within without would you your
    yours yourself yourselves via per however thus therefore among across e g i e
    """.split()
)

_TOKEN_RE = re.compile(r"[^\W_]+(?:[-'][^\W_]+)*")


def preprocess(text: str, stopwords: Iterable[str] = STOPWORDS) -> list[str]:
    """Lowercase, tokenize on word characters, drop stopwords and bare numbers."""
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    return [
        tok
        for tok in _TOKEN_RE.findall(text.lower())
        if tok not in stop and not tok.isdigit()
    ]


@dataclass
class Vocabulary:
    terms: list[str]
    doc_frequency: dict[str, int]

    def __post_init__(self) -> None:
        self.index = {t: i for i, t in enumerate(self.terms)}

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self.index


def document_frequencies(corpus: Corpus) -> Counter:
    df: Counter = Counter()
    for doc in corpus:
        df.update(set(doc))
    return df


def build_vocabulary(corpus: Corpus, no_below: int = 1, no_above: float = 1.0) -> Vocabulary:
    """Keep terms in at least ``no_below`` documents and at most a ``no_above`` share."""
    if no_below < 1:
        raise ValueError("no_below must be >= 1")
    if not 0 < no_above <= 1:
        raise ValueError("no_above must lie in (0, 1]")
    n_docs = len(corpus)
    if n_docs == 0:
        return Vocabulary([], {})
    df = document_frequencies(corpus)
    kept = sorted(t for t, n in df.items() if n >= no_below and n / n_docs <= no_above)
    return Vocabulary(kept, {t: df[t] for t in kept})


def phrase_score(count_ab: int, count_a: int, count_b: int, total: int) -> float:
    return (count_ab - PHRASE_DISCOUNT) * total / (count_a * count_b)


def _fuse_pass(corpus: Corpus, threshold: float) -> Corpus:
    unigrams: Counter = Counter()
    bigrams: Counter = Counter()
    for doc in corpus:
        unigrams.update(doc)
        bigrams.update(zip(doc, doc[1:]))
    total = sum(unigrams.values())

    out = []
    for doc in corpus:
        fused = []
        i = 0
        while i < len(doc):
            if i + 1 < len(doc):
                a, b = doc[i], doc[i + 1]
                if phrase_score(bigrams[a, b], unigrams[a], unigrams[b], total) >= threshold:
                    fused.append(f"{a}_{b}")
                    i += 2
                    continue
            fused.append(doc[i])
            i += 1
        out.append(fused)
    return out


def form_ngrams(corpus: Corpus, bigram_threshold: float, trigram_threshold: float) -> Corpus:
    """Fuse collocations greedily left to right, then again over the fused stream."""
    if bigram_threshold <= 0 or trigram_threshold <= 0:
        raise ValueError("thresholds must be positive")
    return _fuse_pass(_fuse_pass(corpus, bigram_threshold), trigram_threshold)


@dataclass(frozen=True)
class LdaConfig:
    num_topics: int = 10
    alpha: float | None = None
    eta: float = 0.01
    iterations: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_topics < 2:
            raise ValueError("num_topics must be >= 2")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")

    @property
    def doc_prior(self) -> float:
        return self.alpha if self.alpha is not None else 1.0 / self.num_topics


@dataclass
class LdaModel:
    theta: np.ndarray
    phi: np.ndarray
    vocab: Vocabulary
    config: LdaConfig

    @property
    def num_topics(self) -> int:
        return self.phi.shape[0]

    def top_words(self, topic: int, n: int = 10) -> list[str]:
        order = np.argsort(-self.phi[topic], kind="stable")[:n]
        return [self.vocab.terms[i] for i in order]


def _encode(corpus: Corpus, vocab: Vocabulary) -> list[list[int]]:
    return [[vocab.index[t] for t in doc if t in vocab.index] for doc in corpus]


def train_lda(corpus: Corpus, vocab: Vocabulary, cfg: LdaConfig) -> LdaModel:
    """Seeded collapsed Gibbs sampler; estimates come from the final sweep's counts."""
    if not corpus:
        raise ValueError("corpus is empty")
    if len(vocab) == 0:
        raise ValueError("vocabulary is empty")

    k = cfg.num_topics
    V = len(vocab)
    alpha = cfg.doc_prior
    eta = cfg.eta
    v_eta = V * eta
    docs = _encode(corpus, vocab)
    rng = np.random.default_rng(cfg.seed)

    # Plain lists: per-token updates on tiny arrays are faster than numpy here.
    n_dt = [[0] * k for _ in docs]
    n_tw = [[0] * V for _ in range(k)]
    n_t = [0] * k
    z = []
    for d, doc in enumerate(docs):
        zd = rng.integers(0, k, size=len(doc)).tolist()
        for w, t in zip(doc, zd):
            n_dt[d][t] += 1
            n_tw[t][w] += 1
            n_t[t] += 1
        z.append(zd)

    topics = range(k)
    for _ in range(cfg.iterations):
        for d, doc in enumerate(docs):
            if not doc:
                continue
            zd = z[d]
            ndt = n_dt[d]
            draws = rng.random(len(doc)).tolist()
            for i, w in enumerate(doc):
                t = zd[i]
                ndt[t] -= 1
                n_tw[t][w] -= 1
                n_t[t] -= 1
                weights = [(ndt[s] + alpha) * (n_tw[s][w] + eta) / (n_t[s] + v_eta) for s in topics]
                u = draws[i] * sum(weights)
                acc = 0.0
                new = k - 1
                for s in topics:
                    acc += weights[s]
                    if u < acc:
                        new = s
                        break
                zd[i] = new
                ndt[new] += 1
                n_tw[new][w] += 1
                n_t[new] += 1

    ndt_arr = np.asarray(n_dt, dtype=float).reshape(len(docs), k)
    ntw_arr = np.asarray(n_tw, dtype=float)
    doc_len = ndt_arr.sum(axis=1, keepdims=True)
    theta = (ndt_arr + alpha) / (doc_len + k * alpha)
    phi = (ntw_arr + eta) / (ntw_arr.sum(axis=1, keepdims=True) + v_eta)
    return LdaModel(theta, phi, vocab, cfg)


@dataclass
class CooccurrenceStats:
    """Boolean document-level occurrence counts."""

    n_docs: int
    postings: dict[str, frozenset[int]] = field(default_factory=dict)

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> CooccurrenceStats:
        postings: dict[str, set[int]] = {}
        for d, doc in enumerate(corpus):
            for w in set(doc):
                postings.setdefault(w, set()).add(d)
        return cls(len(corpus), {w: frozenset(s) for w, s in postings.items()})

    def df(self, w: str) -> int:
        return len(self.postings.get(w, ()))

    def df_pair(self, wi: str, wj: str) -> int:
        return len(self.postings.get(wi, frozenset()) & self.postings.get(wj, frozenset()))


def npmi(wi: str, wj: str, stats: CooccurrenceStats, eps: float = NPMI_EPS) -> float:
    """Normalized PMI from document co-occurrence, smoothed by ``eps`` joint counts.

    Pairs present in every document have joint probability 1, where the
    normalizer vanishes; they score 1.0, the limit for perfect co-occurrence.
    """
    D = stats.n_docs
    if D == 0:
        raise ValueError("no documents")
    df_i, df_j = stats.df(wi), stats.df(wj)
    if df_i < 1 or df_j < 1:
        raise ValueError(f"word never occurs: {wi if df_i < 1 else wj!r}")
    df_ij = stats.df_pair(wi, wj)
    if df_ij == D:
        return 1.0
    p_i, p_j = df_i / D, df_j / D
    p_ij = (df_ij + eps) / D
    return math.log(p_ij / (p_i * p_j)) / -math.log(p_ij)


def topic_coherence(top_words: Sequence[str], stats: CooccurrenceStats, eps: float = NPMI_EPS) -> float:
    """Mean NPMI over all unordered pairs of ``top_words``."""
    if len(top_words) < 2:
        raise ValueError("coherence needs at least two words")
    pairs = list(itertools.combinations(top_words, 2))
    return math.fsum(npmi(a, b, stats, eps) for a, b in pairs) / len(pairs)


@dataclass
class CandidateScore:
    config: LdaConfig
    coherence: float
    topic_coherences: list[float]


@dataclass
class GridResult:
    best: LdaModel
    best_index: int
    scores: list[CandidateScore]

    @property
    def best_score(self) -> CandidateScore:
        return self.scores[self.best_index]


def score_model(model: LdaModel, stats: CooccurrenceStats, top_n: int = 10) -> list[float]:
    n = min(top_n, len(model.vocab))
    return [topic_coherence(model.top_words(t, n), stats) for t in range(model.num_topics)]


def _train_and_score(args: tuple[Corpus, Vocabulary, LdaConfig, int]) -> tuple[LdaModel, list[float]]:
    corpus, vocab, cfg, top_n = args
    model = train_lda(corpus, vocab, cfg)
    stats = CooccurrenceStats.from_corpus(_encode_terms(corpus, vocab))
    return model, score_model(model, stats, top_n)


def _encode_terms(corpus: Corpus, vocab: Vocabulary) -> Corpus:
    return [[t for t in doc if t in vocab.index] for doc in corpus]


def grid_search(
    corpus: Corpus,
    vocab: Vocabulary,
    space: Sequence[LdaConfig],
    top_n: int = 10,
    workers: int = 1,
) -> GridResult:
    """Train one model per config and keep the highest mean topic coherence.

    Ties go to the earliest config. With ``workers > 1`` candidates train in
    separate processes; results are gathered in config order either way.
    """
    if not space:
        raise ValueError("search space is empty")
    jobs = [(corpus, vocab, cfg, top_n) for cfg in space]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_and_score, jobs))
    else:
        results = [_train_and_score(job) for job in jobs]

    scores = [
        CandidateScore(cfg, math.fsum(per_topic) / len(per_topic), per_topic)
        for cfg, (_, per_topic) in zip(space, results)
    ]
    best_index = 0
    for i, s in enumerate(scores):
        if s.coherence > scores[best_index].coherence:
            best_index = i
    for s in scores:
        logger.info("num_topics=%d coherence=%.4f", s.config.num_topics, s.coherence)
    return GridResult(results[best_index][0], best_index, scores)


def assign_dominant_topic(model: LdaModel, doc_index: int) -> int:
    """Most probable topic for a document; ties go to the lowest topic id."""
    return int(np.argmax(model.theta[doc_index]))


def model_to_dict(model: LdaModel, topic_coherences: Sequence[float] | None = None, top_n: int = 10) -> dict[str, Any]:
    return {
        "config": asdict(model.config),
        "vocab": model.vocab.terms,
        "theta": model.theta.tolist(),
        "phi": model.phi.tolist(),
        "top_words": [model.top_words(t, top_n) for t in range(model.num_topics)],
        "topic_coherence": list(topic_coherences) if topic_coherences is not None else None,
        "dominant_topics": [assign_dominant_topic(model, d) for d in range(model.theta.shape[0])],
    }
