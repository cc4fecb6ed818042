"""Ranked fashion-attribute extraction against a five-category ontology.

Every (word occurrence, ontology term) pair whose similarity clears a gate
contributes

    t(source) + gamma * h(term) + eta * tfidf(word) + alpha * sim(word, term)

to the term's score. Per category the top-k terms are kept and divided by
the category maximum. ``semcluster`` uses embedding cosine for ``sim``;
``syncluster`` uses a normalized Levenshtein similarity.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .corpus import HASHTAG_SEGMENTED, WORD, Corpus, Post, Token
from .embeddings import EmbeddingTable, cosine

CATEGORIES = ("items", "brands", "patterns", "materials", "styles")
ENGINES = ("semcluster", "syncluster")
NEUTRAL_SENSE = 0.5

RankedExtraction = dict[str, list[tuple[str, float]]]


class OntologyError(ValueError):
    pass


@dataclass(frozen=True)
class Ontology:
    categories: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        if set(self.categories) != set(CATEGORIES):
            raise OntologyError(f"ontology categories must be exactly {CATEGORIES}")
        for cat, terms in self.categories.items():
            if len(set(terms)) != len(terms):
                raise OntologyError(f"duplicate term in category {cat!r}")
            for t in terms:
                if t != t.lower() or not t.strip():
                    raise OntologyError(f"term {t!r} in {cat!r} must be non-empty lowercase")

    @classmethod
    def from_dict(cls, d: Mapping[str, list[str]]) -> "Ontology":
        """Missing categories become empty; unknown ones are rejected."""
        extra = set(d) - set(CATEGORIES)
        if extra:
            raise OntologyError(f"unknown ontology categories: {sorted(extra)}")
        return cls({c: tuple(d.get(c, ())) for c in CATEGORIES})

    def terms(self, category: str) -> tuple[str, ...]:
        return self.categories[category]

    def __iter__(self):
        return ((c, self.categories[c]) for c in CATEGORIES)


def load_ontology(path) -> Ontology:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise OntologyError("ontology file must hold a JSON object")
    if set(d) != set(CATEGORIES):
        raise OntologyError(f"ontology categories must be exactly {CATEGORIES}, got {sorted(d)}")
    return Ontology({c: tuple(d[c]) for c in CATEGORIES})


@dataclass(frozen=True)
class DistantSupervisionCache:
    """Offline term -> probability-of-fashion-sense table."""

    probs: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for term, p in self.probs.items():
            if not (0.0 <= p <= 1.0) or math.isnan(p):
                raise ValueError(f"probability for {term!r} outside [0, 1]: {p}")

    def h(self, term: str) -> float:
        return self.probs.get(term, NEUTRAL_SENSE)


def load_cache(path) -> DistantSupervisionCache:
    probs = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise ValueError(f"line {lineno}: expected term<TAB>probability")
            try:
                probs[row[0]] = float(row[1])
            except ValueError:
                raise ValueError(f"line {lineno}: non-numeric probability {row[1]!r}") from None
    return DistantSupervisionCache(probs)


DEFAULT_TERM_SCORES = {"caption": 2.0, "comment": 1.0, "usertag": 1.0, "hashtag": 3.0}


@dataclass(frozen=True)
class ScoringWeights:
    term_scores: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_TERM_SCORES))
    gamma: float = 1.0
    eta: float = 1.0
    alpha: float = 1.0
    k: int = 10
    gate: float = 0.45

    def __post_init__(self):
        missing = set(DEFAULT_TERM_SCORES) - set(self.term_scores)
        if missing:
            raise ValueError(f"term scores missing sources: {sorted(missing)}")
        vals = [self.gamma, self.eta, self.alpha, *self.term_scores.values()]
        if any(v < 0 for v in vals):
            raise ValueError("weights must be non-negative")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one weight must be positive")
        if self.k < 1:
            raise ValueError("k must be a positive integer")

    def t(self, source: str) -> float:
        return self.term_scores["hashtag" if source == HASHTAG_SEGMENTED else source]

    def scaled(self, c: float) -> "ScoringWeights":
        return ScoringWeights(
            {s: c * v for s, v in self.term_scores.items()},
            c * self.gamma, c * self.eta, c * self.alpha, self.k, self.gate,
        )

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScoringWeights":
        d = dict(d)
        if "term_scores" in d:
            d["term_scores"] = {**DEFAULT_TERM_SCORES, **d["term_scores"]}
        return cls(**d)


# --- string similarity -------------------------------------------------------


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (two-row dynamic programme)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def syntactic_similarity(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


# --- scoring -----------------------------------------------------------------


def _post_id(post: Post | str) -> str:
    return post if isinstance(post, str) else post.id


def word_occurrences(tokens: tuple[Token, ...] | list[Token]) -> list[tuple[str, str]]:
    """(normalized word, source) for every word token, in stream order."""
    return [(t.normalized, t.source) for t in tokens if t.kind == WORD and t.normalized]


def idf(word: str, corpus: Corpus) -> float:
    return math.log((1 + corpus.N) / (1 + corpus.df.get(word, 0))) + 1.0


def tfidf(word: str, post: Post | str, corpus: Corpus) -> float:
    """Raw in-post count times smoothed idf, ln((1+N)/(1+df)) + 1."""
    tf = sum(1 for w, _ in word_occurrences(corpus.tokens(_post_id(post))) if w == word)
    if tf == 0:
        return 0.0
    return tf * idf(word, corpus)


Similarity = Callable[[str, str], "float | None"]


class Extractor:
    """Ranks ontology terms for posts of one corpus with a fixed similarity.

    Pairwise similarities are memoized across posts.
    """

    def __init__(
        self,
        ontology: Ontology,
        corpus: Corpus,
        similarity: Similarity,
        cache: DistantSupervisionCache | None = None,
        weights: ScoringWeights | None = None,
    ):
        self.ontology = ontology
        self.corpus = corpus
        self.similarity = similarity
        self.cache = cache or DistantSupervisionCache()
        self.weights = weights or ScoringWeights()
        self._sims: dict[str, dict[str, list[tuple[str, float]]]] = {}

    def _matches(self, word: str) -> dict[str, list[tuple[str, float]]]:
        got = self._sims.get(word)
        if got is None:
            gate = self.weights.gate
            got = {}
            for cat, terms in self.ontology:
                hits = []
                for term in terms:
                    s = self.similarity(word, term)
                    if s is not None and s >= gate:
                        hits.append((term, s))
                got[cat] = hits
            self._sims[word] = got
        return got

    def scores(self, post: Post | str) -> dict[str, dict[str, float]]:
        """Un-normalized summed score per category and term."""
        pid = _post_id(post)
        occ = word_occurrences(self.corpus.tokens(pid))
        w = self.weights
        tf = Counter(word for word, _ in occ)
        tfidfs = {word: n * idf(word, self.corpus) for word, n in tf.items()}
        out: dict[str, dict[str, float]] = {c: {} for c in CATEGORIES}
        for word, source in occ:
            base = w.t(source) + w.eta * tfidfs[word]
            for cat, hits in self._matches(word).items():
                acc = out[cat]
                for term, s in hits:
                    r = base + w.gamma * self.cache.h(term) + w.alpha * s
                    acc[term] = acc.get(term, 0.0) + r
        return out

    def extract(self, post: Post | str) -> RankedExtraction:
        ranked: RankedExtraction = {}
        for cat, sc in self.scores(post).items():
            ranked[cat] = rank_and_normalize(sc, self.weights.k)
        return ranked


def rank_and_normalize(scores: Mapping[str, float], k: int) -> list[tuple[str, float]]:
    items = sorted(((t, s) for t, s in scores.items() if s > 0), key=lambda ts: (-ts[1], ts[0]))[:k]
    if not items:
        return []
    top = items[0][1]
    return [(t, s / top) for t, s in items]


def embedding_similarity(table: EmbeddingTable) -> Similarity:
    return lambda word, term: cosine(word, term, table)


def make_extractor(
    engine: str,
    ontology: Ontology,
    corpus: Corpus,
    table: EmbeddingTable | None = None,
    cache: DistantSupervisionCache | None = None,
    weights: ScoringWeights | None = None,
) -> Extractor:
    if engine == "semcluster":
        if table is None:
            raise ValueError("semcluster needs an embedding table")
        sim = embedding_similarity(table)
    elif engine == "syncluster":
        sim = syntactic_similarity
    else:
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    return Extractor(ontology, corpus, sim, cache, weights)


def semcluster_extract(post, ontology, table, cache, weights, corpus) -> RankedExtraction:
    return make_extractor("semcluster", ontology, corpus, table, cache, weights).extract(post)


def syncluster_extract(post, ontology, cache, weights, corpus) -> RankedExtraction:
    return make_extractor("syncluster", ontology, corpus, None, cache, weights).extract(post)


def extraction_to_json(ranked: RankedExtraction) -> dict[str, list[list]]:
    return {cat: [[t, s] for t, s in ranked.get(cat, [])] for cat in CATEGORIES}


def format_extraction(ranked: RankedExtraction, digits: int = 2) -> str:
    """Human-readable rendering, e.g. ``Items: <(bag, 1.0), (jeans, 0.3)>``."""
    lines = []
    for cat in CATEGORIES:
        pairs = ", ".join(f"({t}, {round(s, digits)})" for t, s in ranked.get(cat, []))
        lines.append(f"{cat.capitalize()}: <{pairs}>")
    return "\n".join(lines)
