"""Embedding-based unification of free-text terms onto a canonical vocabulary."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SynonymDictionary = Mapping[str, Sequence[str]]


class EmbeddingProvider(Protocol):
    dimension: int

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbeddingProvider:
    """Deterministic, model-free provider for tests and offline runs.

    Every lowercased whitespace token seeds its own fixed random unit vector;
    a text embeds to the renormalized mean of its token vectors. Identical
    texts therefore get identical vectors and unrelated tokens are nearly
    orthogonal in high dimension.
    """

    def __init__(self, dimension: int = 64) -> None:
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
            vec = np.random.default_rng(seed).standard_normal(self.dimension)
            vec /= np.linalg.norm(vec)
            self._cache[token] = vec
        return vec

    def embed(self, text: str) -> np.ndarray:
        tokens = text.lower().split() or [""]
        mean = np.mean([self._token_vector(t) for t in tokens], axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0:
            return self._token_vector(text.lower())
        return mean / norm

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        return np.vstack([self.embed(t) for t in texts])


@dataclass(frozen=True)
class CanonicalIndex:
    phrases: tuple[str, ...]
    vectors: np.ndarray
    label_map: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.phrases) != len(self.label_map) or len(self.phrases) != len(self.vectors):
            raise ValueError("phrases, vectors and label_map must align")

    def __len__(self) -> int:
        return len(self.phrases)


@dataclass(frozen=True)
class UnifyConfig:
    threshold: float = 0.55

    def __post_init__(self) -> None:
        if not -1.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [-1, 1]")


class UnknownDictionaryError(KeyError):
    """No precomputed index exists for the requested dictionary key."""


def _phrases_for(dictionary: SynonymDictionary) -> tuple[list[str], list[str]]:
    phrases: list[str] = []
    labels: list[str] = []
    seen: set[str] = set()
    for canonical, synonyms in dictionary.items():
        for phrase in [canonical, *synonyms]:
            if phrase in seen:
                continue
            seen.add(phrase)
            phrases.append(phrase)
            labels.append(canonical)
    return phrases, labels


def precompute(
    dicts: Mapping[str, SynonymDictionary], provider: EmbeddingProvider
) -> dict[str, CanonicalIndex]:
    """Embed every canonical term and synonym once per dictionary.

    The canonical term counts as its own synonym. Empty dictionaries are
    skipped with a warning; a dictionary whose embedding fails is left out and
    the failure is logged.
    """
    indices: dict[str, CanonicalIndex] = {}
    for key, dictionary in dicts.items():
        if not dictionary:
            logger.warning("Skipping empty synonym dictionary: %s", key)
            continue
        phrases, labels = _phrases_for(dictionary)
        try:
            vectors = np.asarray(provider.embed_batch(phrases), dtype=float)
            if vectors.shape != (len(phrases), provider.dimension):
                raise ValueError(f"provider returned shape {vectors.shape}")
            if not np.all(np.isfinite(vectors)):
                raise ValueError("provider returned non-finite values")
        except Exception as exc:
            logger.error("Embedding generation failed for dictionary %s: %s", key, exc)
            continue
        indices[key] = CanonicalIndex(tuple(phrases), vectors, tuple(labels))
    return indices


def cosine_similarity(q: Sequence[float], c: Sequence[float]) -> float:
    q = np.asarray(q, dtype=float)
    c = np.asarray(c, dtype=float)
    if q.shape != c.shape:
        raise ValueError(f"dimension mismatch: {q.shape} vs {c.shape}")
    nq = np.linalg.norm(q)
    nc = np.linalg.norm(c)
    if nq == 0 or nc == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(q, c) / (nq * nc), -1.0, 1.0))


def cosine_scores(query: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Cosine of ``query`` against every row of ``matrix``."""
    nq = np.linalg.norm(query)
    norms = np.linalg.norm(matrix, axis=1)
    if nq == 0 or np.any(norms == 0):
        raise ValueError("cosine similarity is undefined for a zero vector")
    return np.clip(matrix @ query / (norms * nq), -1.0, 1.0)


def find_best_match(
    query_vec: Sequence[float], index: CanonicalIndex | None
) -> tuple[int | None, float]:
    """Row with the highest cosine similarity; ties resolve to the lowest row."""
    if index is None or len(index) == 0:
        logger.error("Precomputed data is missing or empty.")
        return None, 0.0
    try:
        scores = cosine_scores(np.asarray(query_vec, dtype=float), index.vectors)
    except ValueError as exc:
        logger.error("Error during cosine similarity calculation: %s", exc)
        return None, 0.0
    best = int(np.argmax(scores))
    return best, float(scores[best])


def unify_term(
    term: str,
    key: str,
    indices: Mapping[str, CanonicalIndex],
    provider: EmbeddingProvider,
    cfg: UnifyConfig = UnifyConfig(),
) -> str | None:
    """Canonical term for ``term``, or ``None`` when the best score is below threshold."""
    if key not in indices:
        raise UnknownDictionaryError(key)
    query = provider.embed_batch([term])[0]
    best_idx, best_score = find_best_match(query, indices[key])
    if best_idx is None or best_score < cfg.threshold:
        return None
    return indices[key].label_map[best_idx]


class Unifier:
    """Precomputed indices bundled with their provider and threshold."""

    def __init__(
        self,
        dicts: Mapping[str, SynonymDictionary],
        provider: EmbeddingProvider,
        cfg: UnifyConfig = UnifyConfig(),
    ) -> None:
        self.dicts = dicts
        self.provider = provider
        self.cfg = cfg
        self.indices = precompute(dicts, provider)

    def unify(self, term: str, key: str) -> str | None:
        return unify_term(term, key, self.indices, self.provider, self.cfg)

    def extract_entities(self, text: str, max_ngram: int = 3) -> list[tuple[str, str]]:
        """(dictionary key, canonical term) pairs found in any 1..max_ngram word span.

        Pairs are reported once, in order of first discovery.
        """
        words = text.split()
        spans = [
            " ".join(words[i : i + n])
            for n in range(max_ngram, 0, -1)
            for i in range(len(words) - n + 1)
        ]
        found: dict[tuple[str, str], None] = {}
        for key in sorted(self.indices):
            for span in spans:
                canonical = self.unify(_strip_punct(span), key)
                if canonical is not None:
                    found.setdefault((key, canonical), None)
        return list(found)


def _strip_punct(s: str) -> str:
    return s.strip(" \t\n.,;:!?\"'()[]{}")


def load_dictionaries(data: Mapping[str, Mapping[str, Iterable[str]]]) -> dict[str, dict[str, list[str]]]:
    """Validate a ``{key: {canonical: [synonyms...]}}`` mapping."""
    out: dict[str, dict[str, list[str]]] = {}
    for key, dictionary in data.items():
        if not isinstance(dictionary, Mapping):
            raise ValueError(f"dictionary {key!r} must map canonical terms to synonym lists")
        out[key] = {str(canon): [str(s) for s in syns] for canon, syns in dictionary.items()}
    return out
