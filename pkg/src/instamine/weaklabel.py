"""Labeling functions and their combination into probabilistic multi-labels.

Each class gets its own conditionally independent "two-coin" model: a
labeling function ``j`` votes on an item with probability ``beta_j`` and,
when it votes, is right with probability ``alpha_j``. Parameters are fitted
by EM on the marginal likelihood with the class indicator latent; posteriors
of the 13 per-class models are concatenated into one label vector per post.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import WORD, Corpus, Post, lemmatize
from .embeddings import EmbeddingTable, cosine
from .extract import Extractor, Ontology, syntactic_similarity

CLASSES = (
    "dresses",
    "coats",
    "blouses & tunics",
    "bags",
    "accessories",
    "skirts",
    "shoes",
    "jumpers & cardigans",
    "jeans",
    "jackets",
    "tights & socks",
    "tops & t-shirts",
    "trousers & shorts",
)

# Default item-term -> class map used by the text labeling functions.
CLASS_KEYWORDS: dict[str, tuple[str, ...]] = {
    "dresses": ("dress", "gown", "sundress", "maxi", "midi"),
    "coats": ("coat", "parka", "trench", "overcoat", "puffer"),
    "blouses & tunics": ("blouse", "tunic"),
    "bags": ("bag", "handbag", "purse", "tote", "clutch", "backpack"),
    "accessories": (
        "accessory", "necklace", "earring", "bracelet", "ring", "scarf", "hat",
        "belt", "sunglasses", "watch",
    ),
    "skirts": ("skirt", "miniskirt"),
    "shoes": ("shoe", "sneaker", "heel", "boot", "sandal", "loafer", "flat", "pump", "mule"),
    "jumpers & cardigans": ("jumper", "cardigan", "sweater", "pullover", "knitwear"),
    "jeans": ("jeans",),
    "jackets": ("jacket", "blazer", "bomber"),
    "tights & socks": ("tights", "sock", "stocking", "hosiery"),
    "tops & t-shirts": ("top", "tee", "t-shirt", "tshirt", "tank", "cami", "shirt"),
    "trousers & shorts": ("trousers", "shorts", "pants", "leggings", "chinos"),
}

Vote = frozenset | None  # None is Abstain


class LabelError(ValueError):
    pass


class UnidentifiableWarning(UserWarning):
    pass


def default_term_classes() -> dict[str, frozenset[str]]:
    out: dict[str, set[str]] = {}
    for cls, kws in CLASS_KEYWORDS.items():
        for kw in kws:
            out.setdefault(kw, set()).add(cls)
    return {k: frozenset(v) for k, v in out.items()}


def classes_for_term(term: str, term_classes: Mapping[str, frozenset[str]] | None = None) -> frozenset[str]:
    mapping = default_term_classes() if term_classes is None else term_classes
    if term in mapping:
        return mapping[term]
    return mapping.get(lemmatize(term), frozenset())


# --- vote matrix -------------------------------------------------------------


@dataclass(frozen=True)
class VoteMatrix:
    post_ids: tuple[str, ...]
    lf_ids: tuple[str, ...]
    votes: tuple[tuple[Vote, ...], ...]
    classes: tuple[str, ...] = CLASSES

    def __post_init__(self):
        if len(set(self.lf_ids)) != len(self.lf_ids):
            raise LabelError("labeling-function ids must be unique")
        if len(self.votes) != len(self.post_ids):
            raise LabelError("vote rows do not match post ids")
        known = set(self.classes)
        for pid, row in zip(self.post_ids, self.votes):
            if len(row) != len(self.lf_ids):
                raise LabelError(f"post {pid!r}: row length {len(row)} != {len(self.lf_ids)} LFs")
            for lf, v in zip(self.lf_ids, row):
                if v is None:
                    continue
                if not v:
                    raise LabelError(f"post {pid!r}, LF {lf!r}: empty vote (use Abstain)")
                bad = set(v) - known
                if bad:
                    raise LabelError(f"post {pid!r}, LF {lf!r}: unknown class {sorted(bad)[0]!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.post_ids), len(self.lf_ids)

    def column(self, lf: str) -> list[Vote]:
        j = self.lf_ids.index(lf)
        return [row[j] for row in self.votes]


def per_class_votes(matrix: VoteMatrix, cls: str, mode: str = "complete") -> np.ndarray:
    """Binarize votes for one class into {+1, -1, 0}.

    ``mode="complete"`` reads a firing LF as a full label set (classes it does
    not name get -1); ``mode="partial"`` treats those as abstentions instead.
    """
    if cls not in matrix.classes:
        raise LabelError(f"unknown class {cls!r}")
    if mode not in ("complete", "partial"):
        raise ValueError(f"unknown binarization mode {mode!r}")
    neg = -1 if mode == "complete" else 0
    n, m = matrix.shape
    out = np.zeros((n, m), dtype=np.int8)
    for i, row in enumerate(matrix.votes):
        for j, v in enumerate(row):
            if v is not None:
                out[i, j] = 1 if cls in v else neg
    return out


def majority_from_votes(V: np.ndarray) -> np.ndarray:
    """Strict majority of non-abstaining votes; ties are negative."""
    return (V == 1).sum(axis=1) > (V == -1).sum(axis=1)


def majority_vote(matrix: VoteMatrix, mode: str = "complete") -> tuple[np.ndarray, np.ndarray]:
    """Binary labels (n x C) and a per-post no-signal flag."""
    labels = np.column_stack(
        [majority_from_votes(per_class_votes(matrix, c, mode)) for c in matrix.classes]
    ) if matrix.post_ids else np.zeros((0, len(matrix.classes)), dtype=bool)
    no_signal = np.array([all(v is None for v in row) for row in matrix.votes], dtype=bool)
    return labels.astype(bool), no_signal


# --- labeling functions ------------------------------------------------------


class LabelingFunction:
    """Base class: ``vote`` returns a frozenset of classes or None (abstain)."""

    name = "lf"

    def vote(self, post: Post, corpus: Corpus) -> Vote:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class AbstainLF(LabelingFunction):
    def __init__(self, name: str = "abstain"):
        self.name = name

    def vote(self, post, corpus):
        return None


def _item_words(corpus: Corpus, post: Post) -> list[str]:
    seen, out = set(), []
    for tok in corpus.tokens(post.id):
        if tok.kind == WORD and tok.normalized and tok.normalized not in seen:
            seen.add(tok.normalized)
            out.append(tok.normalized)
    return out


class SemClusterLF(LabelingFunction):
    """Votes for the classes of the top-ranked extracted item terms."""

    def __init__(self, extractor: Extractor, term_classes=None, top_k: int = 3,
                 min_score: float = 0.5, name: str = "semcluster"):
        self.extractor = extractor
        self.term_classes = default_term_classes() if term_classes is None else term_classes
        self.top_k = top_k
        self.min_score = min_score
        self.name = name

    def vote(self, post, corpus):
        ranked = self.extractor.extract(post)["items"][: self.top_k]
        classes = set()
        for term, score in ranked:
            if score >= self.min_score:
                classes |= classes_for_term(term, self.term_classes)
        return frozenset(classes) or None


class _KeywordLF(LabelingFunction):
    def __init__(self, ontology: Ontology, term_classes=None, min_similarity: float = 0.8):
        self.items = tuple(ontology.terms("items"))
        self.term_classes = default_term_classes() if term_classes is None else term_classes
        self.min_similarity = min_similarity
        self._memo: dict[str, frozenset[str]] = {}

    def similarity(self, word: str, term: str) -> float | None:
        raise NotImplementedError

    def _classes_for_word(self, word: str) -> frozenset[str]:
        got = self._memo.get(word)
        if got is None:
            acc = set()
            for term in self.items:
                s = self.similarity(word, term)
                if s is not None and s >= self.min_similarity:
                    acc |= classes_for_term(term, self.term_classes)
            got = self._memo[word] = frozenset(acc)
        return got

    def vote(self, post, corpus):
        classes = set()
        for w in _item_words(corpus, post):
            classes |= self._classes_for_word(w)
        return frozenset(classes) or None


class KeywordSyntacticLF(_KeywordLF):
    """Item keywords matched by normalized Levenshtein similarity."""

    def __init__(self, ontology, term_classes=None, min_similarity: float = 0.8,
                 name: str = "keyword_syntactic"):
        super().__init__(ontology, term_classes, min_similarity)
        self.name = name

    def similarity(self, word, term):
        return syntactic_similarity(word, term)


class KeywordSemanticLF(_KeywordLF):
    """Item keywords matched by embedding cosine."""

    def __init__(self, ontology, table: EmbeddingTable, term_classes=None,
                 min_similarity: float = 0.8, name: str = "keyword_semantic"):
        super().__init__(ontology, term_classes, min_similarity)
        self.table = table
        self.name = name

    def similarity(self, word, term):
        return cosine(word, term, self.table)


class ExternalVoteLF(LabelingFunction):
    """Precomputed votes (e.g. image classifiers); unlisted posts abstain."""

    def __init__(self, name: str, votes: Mapping[str, Vote]):
        self.name = name
        self.votes = dict(votes)

    def vote(self, post, corpus):
        return self.votes.get(post.id)


def load_vote_file(path, post_ids: Iterable[str] | None = None,
                   classes: Sequence[str] = CLASSES) -> list[ExternalVoteLF]:
    """Read ``{"post_id", "lf", "classes": [..] | null}`` JSONL into LFs."""
    known_posts = None if post_ids is None else set(post_ids)
    known = set(classes)
    per_lf: dict[str, dict[str, Vote]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pid, lf, cls = rec["post_id"], rec["lf"], rec["classes"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise LabelError(f"{path}: line {lineno}: malformed vote record") from None
            if known_posts is not None and pid not in known_posts:
                raise LabelError(f"{path}: line {lineno}: unknown post id {pid!r}")
            if cls is None:
                vote = None
            else:
                bad = [c for c in cls if c not in known]
                if bad:
                    raise LabelError(
                        f"{path}: line {lineno}: post {pid!r}, LF {lf!r}: unknown class {bad[0]!r}"
                    )
                if not cls:
                    raise LabelError(f"{path}: line {lineno}: post {pid!r}, LF {lf!r}: empty vote")
                vote = frozenset(cls)
            per_lf.setdefault(lf, {})[pid] = vote
    return [ExternalVoteLF(name, votes) for name, votes in per_lf.items()]


def apply_lfs(corpus: Corpus, lfs: Sequence[LabelingFunction],
              classes: Sequence[str] = CLASSES) -> VoteMatrix:
    """Fill the vote matrix one labeling function (column) at a time."""
    known = set(classes)
    columns = []
    for lf in lfs:
        col = []
        for post in corpus.posts:
            v = lf.vote(post, corpus)
            if v is not None:
                v = frozenset(v)
                bad = v - known
                if bad:
                    raise LabelError(f"post {post.id!r}, LF {lf.name!r}: unknown class {sorted(bad)[0]!r}")
                if not v:
                    v = None
            col.append(v)
        columns.append(col)
    rows = tuple(tuple(col[i] for col in columns) for i in range(len(corpus.posts)))
    return VoteMatrix(tuple(p.id for p in corpus.posts), tuple(lf.name for lf in lfs), rows, tuple(classes))


# --- generative model --------------------------------------------------------

ALPHA_MIN, ALPHA_MAX = 0.01, 0.99
ALPHA_INIT = 0.7


class NumericError(RuntimeError):
    pass


@dataclass
class EMConfig:
    max_iter: int = 1000
    tol: float = 1e-6
    seed: int = 0  # EM is deterministic; recorded for provenance only
    prior: float = 0.5
    mode: str = "complete"

    def __post_init__(self):
        if not (0.0 < self.prior < 1.0):
            raise ValueError("class prior must lie in (0, 1)")


@dataclass
class ClassParams:
    """Fitted two-coin parameters for one class."""

    lf_ids: tuple[str, ...]
    alpha: np.ndarray
    beta: np.ndarray
    prior: float
    n_iter: int = 0
    converged: bool = False
    unidentifiable: bool = False
    loglik: list[float] = field(default_factory=list)

    @property
    def log_odds_weights(self) -> np.ndarray:
        return np.log(self.alpha) - np.log1p(-self.alpha)


def _class_loglik(V: np.ndarray, alpha: np.ndarray, beta: np.ndarray, prior: float) -> float:
    pos = V == 1
    neg = V == -1
    fire = pos | neg
    la, lna = np.log(alpha), np.log1p(-alpha)
    with np.errstate(divide="ignore"):
        lb = np.log(beta)
        lnb = np.log1p(-beta)
    abst = np.where(~fire, lnb, 0.0).sum(axis=1) + np.where(fire, lb, 0.0).sum(axis=1)
    a_pos = np.where(pos, la, 0.0).sum(axis=1) + np.where(neg, lna, 0.0).sum(axis=1)
    a_neg = np.where(pos, lna, 0.0).sum(axis=1) + np.where(neg, la, 0.0).sum(axis=1)
    per_item = np.logaddexp(math.log(prior) + a_pos, math.log1p(-prior) + a_neg) + abst
    return float(per_item.sum())


def class_log_odds(V: np.ndarray, weights: np.ndarray, prior: float) -> np.ndarray:
    """logit(prior) + sum of +w over +1 votes - sum of w over -1 votes.

    Positive and negative evidence are accumulated separately, LF by LF, so
    equal weights with equal counts cancel exactly.
    """
    n = V.shape[0]
    pos = np.zeros(n)
    neg = np.zeros(n)
    for j in range(V.shape[1]):
        pos = pos + np.where(V[:, j] == 1, weights[j], 0.0)
        neg = neg + np.where(V[:, j] == -1, weights[j], 0.0)
    return (math.log(prior) - math.log1p(-prior)) + (pos - neg)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def posterior_from_votes(V: np.ndarray, alpha: np.ndarray, prior: float) -> np.ndarray:
    w = np.log(alpha) - np.log1p(-alpha)
    return _sigmoid(class_log_odds(V, w, prior))


def fit_two_coin(V: np.ndarray, config: EMConfig | None = None, lf_ids: Sequence[str] | None = None) -> ClassParams:
    """EM for one class on an n x m matrix of {+1, -1, 0} votes."""
    cfg = config or EMConfig()
    V = np.asarray(V)
    n, m = V.shape if V.ndim == 2 else (0, 0)
    if n == 0 or m == 0:
        raise LabelError("empty vote matrix")
    ids = tuple(lf_ids) if lf_ids is not None else tuple(f"lf{j}" for j in range(m))
    fire = V != 0
    coverage = fire.sum(axis=0)
    if coverage.sum() == 0:
        raise LabelError("zero coverage")
    beta = coverage / n
    alpha = np.full(m, ALPHA_INIT)
    prior = cfg.prior
    ll = _class_loglik(V, alpha, beta, prior)
    params = ClassParams(ids, alpha, beta, prior, loglik=[ll])
    if (coverage > 0).sum() < 2:
        warnings.warn("fewer than two contributing labeling functions; model unidentifiable",
                      UnidentifiableWarning, stacklevel=2)
        params.unidentifiable = True
        return params

    pos = (V == 1).astype(float)
    neg = (V == -1).astype(float)
    safe_cov = np.where(coverage > 0, coverage, 1)
    for it in range(1, cfg.max_iter + 1):
        q = posterior_from_votes(V, alpha, prior)
        correct = q @ pos + (1.0 - q) @ neg
        new_alpha = np.where(coverage > 0, correct / safe_cov, alpha)
        alpha = np.clip(new_alpha, ALPHA_MIN, ALPHA_MAX)
        new_ll = _class_loglik(V, alpha, beta, prior)
        if new_ll < ll - 1e-9 * max(1.0, abs(ll)):
            raise NumericError(f"EM log-likelihood decreased at iteration {it}: {ll} -> {new_ll}")
        params.loglik.append(new_ll)
        params.n_iter = it
        done = abs(new_ll - ll) < cfg.tol
        ll = new_ll
        if done:
            params.converged = True
            break
    params.alpha = alpha
    return params


def fit_generative(matrix: VoteMatrix, cls: str, config: EMConfig | None = None) -> ClassParams:
    cfg = config or EMConfig()
    if not matrix.post_ids or not matrix.lf_ids:
        raise LabelError("empty vote matrix")
    return fit_two_coin(per_class_votes(matrix, cls, cfg.mode), cfg, matrix.lf_ids)


@dataclass
class LabelModel:
    """One fitted two-coin block per class, in class order."""

    classes: tuple[str, ...]
    params: dict[str, ClassParams]
    mode: str = "complete"

    def to_json(self) -> dict:
        out: dict = {}
        for c in self.classes:
            p = self.params[c]
            out[c] = {lf: {"alpha": float(a), "beta": float(b)}
                      for lf, a, b in zip(p.lf_ids, p.alpha, p.beta)}
        out["priors"] = {c: self.params[c].prior for c in self.classes}
        out["mode"] = self.mode
        return out

    @classmethod
    def from_json(cls, d: Mapping, classes: Sequence[str] = CLASSES) -> "LabelModel":
        priors = d["priors"]
        missing = [c for c in classes if c not in d]
        if missing:
            raise LabelError(f"label model has no block for class {missing[0]!r}")
        params = {}
        for c in classes:
            block = d[c]
            ids = tuple(block)
            params[c] = ClassParams(
                ids,
                np.array([block[lf]["alpha"] for lf in ids], dtype=float),
                np.array([block[lf]["beta"] for lf in ids], dtype=float),
                float(priors[c]),
            )
        return cls(tuple(classes), params, d.get("mode", "complete"))


def fit_label_model(matrix: VoteMatrix, config: EMConfig | None = None,
                    priors: Mapping[str, float] | None = None) -> LabelModel:
    """Fit the per-class models independently.

    Classes no LF ever votes on keep the initialization and are flagged
    unidentifiable rather than failing the whole fit.
    """
    cfg = config or EMConfig()
    params = {}
    for c in matrix.classes:
        c_cfg = EMConfig(cfg.max_iter, cfg.tol, cfg.seed, (priors or {}).get(c, cfg.prior), cfg.mode)
        V = per_class_votes(matrix, c, cfg.mode)
        if not (V != 0).any():
            m = len(matrix.lf_ids)
            params[c] = ClassParams(matrix.lf_ids, np.full(m, ALPHA_INIT), np.zeros(m),
                                    c_cfg.prior, unidentifiable=True)
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnidentifiableWarning)
            params[c] = fit_two_coin(V, c_cfg, matrix.lf_ids)
    return LabelModel(tuple(matrix.classes), params, cfg.mode)


def posterior_labels(model: LabelModel, matrix: VoteMatrix) -> np.ndarray:
    """p(Y_c = 1 | votes) per post and class, columns in class order."""
    n = len(matrix.post_ids)
    out = np.empty((n, len(model.classes)))
    for k, c in enumerate(model.classes):
        p = model.params[c]
        idx = [p.lf_ids.index(lf) for lf in matrix.lf_ids]
        V = per_class_votes(matrix, c, model.mode)
        out[:, k] = posterior_from_votes(V, p.alpha[idx], p.prior)
    return out


def threshold_posteriors(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Strictly-above-threshold labels; an exact 0.5 is negative, matching the vote tie rule."""
    return probs > threshold
