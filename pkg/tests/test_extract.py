import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instamine.corpus import Post, build_corpus
from instamine.embeddings import EmbeddingTable
from instamine.extract import (
    CATEGORIES, DistantSupervisionCache, Ontology, OntologyError, ScoringWeights, extraction_to_json,
    format_extraction, levenshtein, load_cache, load_ontology, make_extractor, rank_and_normalize,
    syntactic_similarity, tfidf, word_occurrences,
)
from oracles import cosine64, naive_levenshtein, pair_enumeration_scores

T_SCORES = {"caption": 2.0, "comment": 1.0, "usertag": 1.0, "hashtag": 3.0, "hashtag-segmented": 3.0}


def _onto(**cats):
    return Ontology.from_dict(cats)


# --- tfidf -------------------------------------------------------------------


def test_tfidf_examples():
    c = build_corpus([Post("a", "denim jacket"), Post("b", "denim"), Post("c", "silk silk")])
    assert tfidf("jacket", "b", c) == 0.0
    assert tfidf("silk", "c", c) == pytest.approx(2 * (math.log(4 / 2) + 1))
    assert tfidf("silk", "c", c) == pytest.approx(3.3863, abs=1e-4)
    c2 = build_corpus([Post("a", "denim"), Post("b", "denim")])
    assert tfidf("denim", "a", c2) == 1.0


# --- levenshtein -------------------------------------------------------------


@pytest.mark.parametrize("a,b,d", [("jeans", "jeans", 0), ("", "abc", 3), ("kitten", "sitting", 3),
                                   ("abc", "", 3), ("", "", 0), ("flaw", "lawn", 2)])
def test_levenshtein_examples(a, b, d):
    assert levenshtein(a, b) == d == naive_levenshtein(a, b)


def test_syntactic_similarity_baaag():
    assert syntactic_similarity("baaag", "bag") == pytest.approx(0.6)
    assert syntactic_similarity("bag", "bag") == 1.0


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="abc", max_size=8), st.text(alphabet="abc", max_size=8))
def test_levenshtein_symmetric_and_bounded(a, b):
    d = levenshtein(a, b)
    assert d == levenshtein(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))
    assert 0.0 <= syntactic_similarity(a, b) <= 1.0


# --- ontology, cache, weights ------------------------------------------------


def test_ontology_validation(tmp_path):
    with pytest.raises(OntologyError):
        Ontology.from_dict({"shoes": ["boot"]})
    with pytest.raises(OntologyError, match="duplicate"):
        _onto(items=["bag", "bag"])
    with pytest.raises(OntologyError, match="lowercase"):
        _onto(items=["Bag"])
    p = tmp_path / "o.json"
    p.write_text(json.dumps({"items": ["bag"]}))
    with pytest.raises(OntologyError):
        load_ontology(p)
    p.write_text(json.dumps({c: [] for c in CATEGORIES} | {"items": ["bag"]}))
    assert load_ontology(p).terms("items") == ("bag",)


def test_cache_loading(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("# comment\nbag\t0.9\napple\t0.1\n")
    cache = load_cache(p)
    assert cache.h("bag") == 0.9
    assert cache.h("unknown") == 0.5
    p.write_text("bag\t1.5\n")
    with pytest.raises(ValueError):
        load_cache(p)
    p.write_text("bag\tx\n")
    with pytest.raises(ValueError, match="line 1"):
        load_cache(p)


def test_weights_validation():
    with pytest.raises(ValueError):
        ScoringWeights(gamma=-1)
    with pytest.raises(ValueError):
        ScoringWeights({s: 0.0 for s in ("caption", "comment", "usertag", "hashtag")}, 0, 0, 0)
    with pytest.raises(ValueError):
        ScoringWeights(k=0)
    w = ScoringWeights.from_dict({"term_scores": {"caption": 5}, "k": 3})
    assert w.t("caption") == 5 and w.t("hashtag-segmented") == 3.0 and w.k == 3


# --- scoring against the pair-enumeration oracle -----------------------------

# 2-d vectors: 4 ontology terms and 3 post words
VECS = {
    "bag": [1.0, 0.0], "jeans": [0.0, 1.0], "gucci": [-1.0, 0.2], "silk": [0.6, -0.8],
    "purse": [0.9, 0.3], "denim": [0.3, 0.95], "hello": [-0.2, -1.0],
}


def _fixture():
    onto = _onto(items=["bag", "jeans"], brands=["gucci"], materials=["silk"])
    posts = [
        Post("p", "purse denim", (("u", "hello purse"),)),
        Post("q", "denim hello"),
        Post("r", "silk"),
    ]
    return onto, build_corpus(posts), EmbeddingTable.from_dict(VECS)


def _oracle(corpus, onto, sim, cache, weights, pid):
    occ = {p.id: word_occurrences(corpus.tokens(p.id)) for p in corpus.posts}
    t = dict(weights.term_scores) | {"hashtag-segmented": weights.term_scores["hashtag"]}
    return pair_enumeration_scores(occ, pid, dict(onto), sim, cache, t, weights.gamma, weights.eta,
                                   weights.alpha, weights.gate, weights.k)


@pytest.mark.parametrize("gate", [0.0, 0.45, 0.9])
def test_semcluster_matches_oracle(gate):
    onto, corpus, table = _fixture()
    cache = {"gucci": 0.8}
    weights = ScoringWeights(gamma=0.7, eta=1.3, alpha=2.0, gate=gate)
    ex = make_extractor("semcluster", onto, corpus, table, DistantSupervisionCache(cache), weights)
    # the table stores float32, so the oracle reads the stored vectors back
    vecs = {w: table.vector(w) for w in table.words}
    sim = lambda w, t: cosine64(vecs[w], vecs[t]) if w in vecs and t in vecs else None  # noqa: E731
    for p in corpus.posts:
        got = ex.extract(p)
        want = _oracle(corpus, onto, sim, cache, weights, p.id)
        for cat in CATEGORIES:
            assert [t for t, _ in got[cat]] == [t for t, _ in want[cat]], (p.id, cat)
            for (_, a), (_, b) in zip(got[cat], want[cat]):
                assert abs(a - b) < 1e-9


def test_syncluster_matches_oracle():
    onto, corpus, _ = _fixture()
    weights = ScoringWeights(gate=0.2)
    ex = make_extractor("syncluster", onto, corpus, weights=weights)
    sim = lambda w, t: 1 - naive_levenshtein(w, t) / max(len(w), len(t))  # noqa: E731
    for p in corpus.posts:
        got = ex.extract(p)
        want = _oracle(corpus, onto, sim, {}, weights, p.id)
        for cat in CATEGORIES:
            assert [t for t, _ in got[cat]] == [t for t, _ in want[cat]]
            for (_, a), (_, b) in zip(got[cat], want[cat]):
                assert abs(a - b) < 1e-9


def test_sole_contributor_ranked_first():
    onto = _onto(items=["bag", "jeans", "coat", "hat"])
    table = EmbeddingTable.from_dict({"bag": [1, 0, 0, 0], "jeans": [0, 1, 0, 0],
                                      "coat": [0, 0, 1, 0], "hat": [0, 0, 0, 1]})
    corpus = build_corpus([Post("a", "bag")])
    got = make_extractor("semcluster", onto, corpus, table).extract("a")
    assert got["items"] == [("bag", 1.0)]
    assert all(got[c] == [] for c in CATEGORIES if c != "items")


def test_empty_post_gives_empty_extraction():
    onto, _, table = _fixture()
    corpus = build_corpus([Post("e", "the and ! \U0001F60D")])
    got = make_extractor("semcluster", onto, corpus, table).extract("e")
    assert got == {c: [] for c in CATEGORIES}


def test_occurrences_are_summed():
    onto = _onto(items=["bag"])
    corpus = build_corpus([Post("a", "bag"), Post("b", "bag bag")])
    ex = make_extractor("syncluster", onto, corpus)
    once, twice = ex.scores("a")["items"]["bag"], ex.scores("b")["items"]["bag"]
    # second post: two occurrences, each with tf=2
    idf = math.log(3 / 3) + 1
    assert once == pytest.approx(2 + 0.5 + idf + 1)
    assert twice == pytest.approx(2 * (2 + 0.5 + 2 * idf + 1))


def test_output_format_lists_categories_in_order():
    onto = _onto(items=["bag", "jeans"], brands=["gucci"])
    corpus = build_corpus([Post("a", "bag bag jeans gucci"), Post("b", "jeans")])
    ranked = make_extractor("syncluster", onto, corpus).extract("a")
    text = format_extraction(ranked)
    assert text.splitlines()[0].startswith("Items: <(bag, 1.0), (jeans, ")
    assert text.splitlines()[1] == "Brands: <(gucci, 1.0)>"
    js = extraction_to_json(ranked)
    assert list(js) == list(CATEGORIES)
    assert js["items"][0] == ["bag", 1.0]


def test_hashtag_segments_use_hashtag_term_score():
    onto = _onto(styles=["street"])
    corpus = build_corpus([Post("a", "#streetstyle")])
    w = ScoringWeights({"caption": 0.0, "comment": 0.0, "usertag": 0.0, "hashtag": 7.0}, 0, 0, 0, gate=0.9)
    assert make_extractor("syncluster", onto, corpus, weights=w).scores("a")["styles"]["street"] == 7.0


# --- properties --------------------------------------------------------------

WORDS = ["bag", "bags", "baag", "jean", "jeans", "jeanz", "silk", "silky", "gucci", "guci", "red", "coat"]


def _random_corpus(rng, n=6):
    posts = []
    for i in range(n):
        cap = " ".join(rng.choice(WORDS, size=rng.integers(0, 6)))
        com = " ".join(rng.choice(WORDS, size=rng.integers(0, 4)))
        posts.append(Post(f"p{i}", cap, (("u", com),) if com else ()))
    return build_corpus(posts)


ONTO = _onto(items=["bag", "jeans", "coat"], brands=["gucci"], materials=["silk"])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_normalized_scores_in_unit_interval(seed):
    corpus = _random_corpus(np.random.default_rng(seed))
    ex = make_extractor("syncluster", ONTO, corpus)
    for p in corpus.posts:
        for cat, rows in ex.extract(p).items():
            if rows:
                assert rows[0][1] == 1.0
                assert all(0 < s <= 1 for _, s in rows)
                assert all(a[1] >= b[1] for a, b in zip(rows, rows[1:]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.25, 0.5, 2.0, 8.0]))
def test_uniform_scaling_keeps_order(seed, c):
    corpus = _random_corpus(np.random.default_rng(seed))
    base = ScoringWeights(gamma=0.5, eta=1.5, alpha=2.0)
    a = make_extractor("syncluster", ONTO, corpus, weights=base)
    b = make_extractor("syncluster", ONTO, corpus, weights=base.scaled(c))
    for p in corpus.posts:
        ra, rb = a.extract(p), b.extract(p)
        for cat in CATEGORIES:
            assert [t for t, _ in ra[cat]] == [t for t, _ in rb[cat]]
        sa, sb = a.scores(p), b.scores(p)
        for cat in CATEGORIES:
            for term, v in sa[cat].items():
                assert sb[cat][term] == c * v


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_raising_gate_never_adds_terms(seed, g1, g2):
    lo, hi = sorted((g1, g2))
    corpus = _random_corpus(np.random.default_rng(seed))
    a = make_extractor("syncluster", ONTO, corpus, weights=ScoringWeights(gate=lo, k=100))
    b = make_extractor("syncluster", ONTO, corpus, weights=ScoringWeights(gate=hi, k=100))
    for p in corpus.posts:
        for cat in CATEGORIES:
            assert {t for t, _ in b.extract(p)[cat]} <= {t for t, _ in a.extract(p)[cat]}


def test_engines_agree_on_exact_terms():
    # orthonormal vectors: cosine is 1 on exact terms and 0 elsewhere, below the gate
    terms = ["bag", "jeans", "coat", "gucci", "silk"]
    table = EmbeddingTable.from_dict({t: np.eye(5)[i] for i, t in enumerate(terms)})
    rng = np.random.default_rng(5)
    posts = [Post(f"p{i}", " ".join(rng.choice(terms, size=4))) for i in range(8)]
    corpus = build_corpus(posts)
    # a high gate keeps syncluster from matching anything but exact strings
    w = ScoringWeights(gate=0.99)
    sem = make_extractor("semcluster", ONTO, corpus, table, weights=w)
    syn = make_extractor("syncluster", ONTO, corpus, weights=w)
    for p in corpus.posts:
        assert sem.extract(p) == syn.extract(p)


def test_determinism_and_tie_break():
    assert rank_and_normalize({"b": 2.0, "a": 2.0, "c": 1.0, "z": 0.0}, 10) == [("a", 1.0), ("b", 1.0), ("c", 0.5)]
    assert rank_and_normalize({"b": 2.0, "a": 2.0}, 1) == [("a", 1.0)]
    onto, corpus, table = _fixture()
    e1 = make_extractor("semcluster", onto, corpus, table)
    e2 = make_extractor("semcluster", onto, corpus, table)
    assert [e1.extract(p) for p in corpus.posts] == [e2.extract(p) for p in corpus.posts]


def test_unknown_engine():
    onto, corpus, table = _fixture()
    with pytest.raises(ValueError, match="unknown engine"):
        make_extractor("fuzzy", onto, corpus, table)
    with pytest.raises(ValueError, match="embedding table"):
        make_extractor("semcluster", onto, corpus)
