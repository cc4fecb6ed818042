"""Corpus measurements: lexical noise, out-of-vocabulary rates, text distributions."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .corpus import (
    EMOJI, HASHTAG, MENTION, NUMBER, ONLINE_KINDS, PUNCT, URL,
    Corpus, Token, lemmatize, raw_tokens, tokenize,
)

NOISE_KINDS = {"emoji": EMOJI, "hashtag": HASHTAG, "mention": MENTION, "url": URL}
MIN_BIN_FREQUENCY = 15


class StatsError(ValueError):
    pass


@dataclass
class NoiseReport:
    total_tokens: int
    n_posts: int
    counts: dict[str, int]
    fractions: dict[str, float]
    per_post: dict[str, float]
    strip_online_tokens: bool
    oov_denominator: int

    def to_json(self) -> dict:
        return asdict(self)


def in_vocabulary(tok: Token, vocab: frozenset[str] | set[str]) -> bool:
    low = tok.surface.lower()
    return low in vocab or lemmatize(low) in vocab


def lexical_noise(corpus: Corpus, vocabularies: Mapping[str, set[str] | frozenset[str]],
                  strip_online_tokens: bool = False) -> NoiseReport:
    """Fractions and per-post averages of online-specific and OOV tokens.

    Punctuation and numbers are never OOV. Without stripping, hashtags,
    mentions, emoji and URLs count as OOV; with stripping they are removed and
    the OOV fraction is taken over the remaining tokens.
    """
    if corpus.N == 0:
        raise StatsError("empty corpus")
    counts: Counter[str] = Counter()
    total = 0
    stripped = 0
    for post in corpus.posts:
        for tok in raw_tokens(post):
            total += 1
            for name, kind in NOISE_KINDS.items():
                if tok.kind == kind:
                    counts[name] += 1
            if tok.kind in ONLINE_KINDS:
                if strip_online_tokens:
                    stripped += 1
                    continue
                for vname in vocabularies:
                    counts[f"oov_{vname}"] += 1
                continue
            if tok.kind in (PUNCT, NUMBER):
                continue
            for vname, vocab in vocabularies.items():
                if not in_vocabulary(tok, vocab):
                    counts[f"oov_{vname}"] += 1
    names = list(NOISE_KINDS) + [f"oov_{v}" for v in vocabularies]
    denom = total - stripped
    fractions = {}
    for name in names:
        d = denom if name.startswith("oov_") else total
        fractions[name] = counts[name] / d if d else 0.0
    per_post = {name: counts[name] / corpus.N for name in names}
    return NoiseReport(total, corpus.N, {n: counts[n] for n in names}, fractions, per_post,
                       strip_online_tokens, denom)


@dataclass
class PowerLawFit:
    slope: float
    intercept: float
    r2: float
    n_bins: int
    min_bin_frequency: int


@dataclass
class DistributionReport:
    n_posts: int
    histogram: dict[int, int]
    fit: PowerLawFit | None
    mean_caption_length: float
    mean_comment_length: float | None
    mean_comment_count: float
    extra: dict = field(default_factory=dict)

    @property
    def slope(self) -> float | None:
        return None if self.fit is None else self.fit.slope

    def to_json(self) -> dict:
        d = asdict(self)
        # pairs rather than an object: JSON keys are strings and would sort "10" before "2"
        d["histogram"] = [[k, v] for k, v in sorted(self.histogram.items())]
        d["slope"] = self.slope
        return d


def fit_power_law(histogram: Mapping[int, int], min_bin_frequency: int = MIN_BIN_FREQUENCY) -> PowerLawFit | None:
    """Least squares of log2 frequency on log2 value over unit bins.

    Bins with value 0 or frequency 0 are unusable. Only bins with at least
    ``min_bin_frequency`` observations enter the fit, unless fewer than three
    such bins exist, in which case every usable bin is used. Returns None with
    fewer than three usable bins.
    """
    usable = sorted((v, f) for v, f in histogram.items() if v > 0 and f > 0)
    if len(usable) < 3:
        return None
    chosen = [(v, f) for v, f in usable if f >= min_bin_frequency]
    threshold = min_bin_frequency
    if len(chosen) < 3:
        chosen, threshold = usable, 1
    x = np.log2([v for v, _ in chosen])
    y = np.log2([f for _, f in chosen])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(float(slope), float(intercept), min(1.0, max(0.0, r2)), len(chosen), threshold)


def text_distribution(corpus: Corpus, min_bin_frequency: int = MIN_BIN_FREQUENCY) -> DistributionReport:
    """Histogram of comments per post, its power-law fit, and mean lengths in tokens."""
    if corpus.N == 0:
        raise StatsError("empty corpus")
    hist = Counter(len(p.comments) for p in corpus.posts)
    cap_lens = [len(tokenize(p.caption)) for p in corpus.posts]
    com_lens = [len(tokenize(text)) for p in corpus.posts for _, text in p.comments]
    return DistributionReport(
        n_posts=corpus.N,
        histogram=dict(sorted(hist.items())),
        fit=fit_power_law(hist, min_bin_frequency),
        mean_caption_length=sum(cap_lens) / corpus.N,
        mean_comment_length=(sum(com_lens) / len(com_lens)) if com_lens else None,
        mean_comment_count=sum(len(p.comments) for p in corpus.posts) / corpus.N,
    )


def language_distribution(tags: Mapping[str, str]) -> dict[str, float]:
    """Share of comments per language from an external ``comment id -> language`` map.

    No identifier is bundled; tags come from whatever tool the caller ran.
    """
    if not tags:
        raise StatsError("no language tags")
    counts = Counter(tags.values())
    n = len(tags)
    return {lang: c / n for lang, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))}


def load_language_tags(path) -> dict[str, str]:
    """TSV ``comment_id<TAB>language`` as produced by an external identifier."""
    tags = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise StatsError(f"line {lineno}: expected comment_id<TAB>language")
            tags[parts[0]] = parts[1]
    return tags


def histogram_of(values) -> dict[int, int]:
    return dict(sorted(Counter(int(v) for v in values).items()))

