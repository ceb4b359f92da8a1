from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hysem.unify import (
    CanonicalIndex,
    HashingEmbeddingProvider,
    Unifier,
    UnifyConfig,
    UnknownDictionaryError,
    cosine_similarity,
    find_best_match,
    load_dictionaries,
    precompute,
    unify_term,
)
from shared import THREE_DICTS, cosine

PROVIDER = HashingEmbeddingProvider(64)
INDICES = precompute(THREE_DICTS, PROVIDER)


def test_provider_is_deterministic_unit_and_case_insensitive():
    a = PROVIDER.embed("Zero Tillage")
    b = HashingEmbeddingProvider(64).embed("zero tillage")
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
    assert PROVIDER.embed_batch([]).shape == (0, 64)


@pytest.mark.parametrize(
    "key,canonical,phrase",
    [(k, c, p) for k, d in THREE_DICTS.items() for c, syns in d.items() for p in [c, *syns]],
)
def test_every_synonym_unifies_to_its_canonical(key, canonical, phrase):
    assert unify_term(phrase, key, INDICES, PROVIDER) == canonical
    _, score = find_best_match(PROVIDER.embed(phrase), INDICES[key])
    assert score == pytest.approx(1.0, abs=1e-12)


def test_below_threshold_term_is_rejected():
    term = "quarterly invoice reconciliation"
    _, score = find_best_match(PROVIDER.embed(term), INDICES["ML_METHODS"])
    assert score < 0.55
    assert unify_term(term, "ML_METHODS", INDICES, PROVIDER) is None


def test_threshold_is_inclusive():
    term = "random forest classifier"
    _, score = find_best_match(PROVIDER.embed(term), INDICES["ML_METHODS"])
    assert unify_term(term, "ML_METHODS", INDICES, PROVIDER, UnifyConfig(score)) == "Random Forest"
    assert unify_term(term, "ML_METHODS", INDICES, PROVIDER, UnifyConfig(np.nextafter(score, 2))) is None


def test_best_match_equals_brute_force():
    for key, index in INDICES.items():
        for phrase in ["forest model", "ozone levels", "tillage", "deep network"]:
            q = PROVIDER.embed(phrase)
            scores = [cosine(q, v) for v in index.vectors]
            best = max(range(len(scores)), key=lambda i: (scores[i], -i))
            idx, score = find_best_match(q, index)
            assert idx == best
            assert score == pytest.approx(scores[best], abs=1e-12)


def test_ties_go_to_lowest_row():
    v = np.array([1.0, 0.0])
    index = CanonicalIndex(("a", "b"), np.vstack([v, v]), ("A", "B"))
    assert find_best_match(v, index) == (0, pytest.approx(1.0))


vocab_terms = st.sampled_from(
    ["no till", "tillage", "random forest model", "svm", "ozone", "particulate", "network", "plough"]
)


@settings(max_examples=200, deadline=None)
@given(vocab_terms, st.sampled_from(sorted(THREE_DICTS)), st.floats(-1, 1), st.floats(-1, 1))
def test_threshold_monotonicity(term, key, t1, t2):
    lo, hi = sorted((t1, t2))
    strict = unify_term(term, key, INDICES, PROVIDER, UnifyConfig(hi))
    loose = unify_term(term, key, INDICES, PROVIDER, UnifyConfig(lo))
    if strict is not None:
        assert loose == strict


def test_unknown_dictionary_raises():
    with pytest.raises(UnknownDictionaryError):
        unify_term("x", "MISSING", INDICES, PROVIDER)


def test_precompute_skips_empty_dictionary(caplog):
    out = precompute({"EMPTY": {}, "A": {"x": ["y"]}}, PROVIDER)
    assert list(out) == ["A"]
    assert out["A"].phrases == ("x", "y") and out["A"].label_map == ("x", "x")
    assert "EMPTY" in caplog.text


class BrokenProvider(HashingEmbeddingProvider):
    def embed_batch(self, texts):
        raise RuntimeError("model offline")


def test_precompute_logs_provider_failure(caplog):
    assert precompute({"A": {"x": ["y"]}}, BrokenProvider(4)) == {}
    assert "model offline" in caplog.text


def test_empty_index_and_zero_vector():
    assert find_best_match([1.0], None) == (None, 0.0)
    with pytest.raises(ValueError):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])
    assert cosine_similarity([1.0, 0.0], [-2.0, 0.0]) == -1.0


def test_unifier_extracts_entities_from_text():
    unifier = Unifier(THREE_DICTS, PROVIDER)
    found = unifier.extract_entities("Does ground-level ozone exposure change random forest results?")
    assert ("POLLUTANTS", "Ozone") in found
    assert ("ML_METHODS", "Random Forest") in found


def test_load_dictionaries_validates_shape():
    assert load_dictionaries({"K": {"a": ["b"]}}) == {"K": {"a": ["b"]}}
    with pytest.raises(ValueError):
        load_dictionaries({"K": ["a"]})
