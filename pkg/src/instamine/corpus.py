"""Post ingestion and social-media text normalization.

Posts arrive as JSONL records and are turned into provenance-tagged token
streams: every token remembers whether it came from the caption, a comment,
a user tag or a segmented hashtag. Document frequencies are counted per post
over normalized word tokens.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from importlib import resources
from typing import Iterable, Mapping, Sequence

WORD = "word"
HASHTAG = "hashtag"
MENTION = "mention"
EMOJI = "emoji"
URL = "url"
PUNCT = "punct"
NUMBER = "number"
KINDS = (WORD, HASHTAG, MENTION, EMOJI, URL, PUNCT, NUMBER)

CAPTION = "caption"
COMMENT = "comment"
USERTAG = "usertag"
HASHTAG_SEGMENTED = "hashtag-segmented"
SOURCES = (CAPTION, COMMENT, USERTAG, HASHTAG_SEGMENTED)

ONLINE_KINDS = frozenset({HASHTAG, MENTION, EMOJI, URL})
_UNNORMALIZED_KINDS = frozenset({EMOJI, URL, PUNCT})


class CorpusError(ValueError):
    """Raised for malformed post records."""


@dataclass(frozen=True)
class Post:
    id: str
    caption: str = ""
    comments: tuple[tuple[str, str], ...] = ()
    usertags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Token:
    surface: str
    kind: str
    source: str = CAPTION
    normalized: str | None = None


# --- bundled resources -------------------------------------------------------


def _data_lines(name: str) -> list[str]:
    text = resources.files("instamine").joinpath("data").joinpath(name).read_text("utf-8")
    return [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


def read_word_list(path) -> frozenset[str]:
    """One lowercase word per line; blank lines ignored."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(ln.strip().lower() for ln in fh if ln.strip())


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    return frozenset(_data_lines("stopwords.txt"))


@lru_cache(maxsize=None)
def default_vocabulary() -> frozenset[str]:
    """General-English word list used for OOV measurements."""
    return frozenset(_data_lines("english.txt"))


@lru_cache(maxsize=None)
def _lemma_exceptions() -> dict[str, str]:
    return dict(ln.split("\t") for ln in _data_lines("lemma_exceptions.tsv"))


def load_unigrams(path=None) -> dict[str, float]:
    """Unigram probabilities from a ``word<TAB>count`` file (bundled by default)."""
    if path is None:
        lines = _data_lines("unigrams.tsv")
    else:
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip() and not ln.startswith("#")]
    counts: dict[str, float] = {}
    for ln in lines:
        parts = ln.split("\t")
        counts[parts[0].lower()] = float(parts[1]) if len(parts) > 1 else 1.0
    total = sum(counts.values())
    return {w: c / total for w, c in counts.items()}


@lru_cache(maxsize=None)
def default_unigrams() -> Mapping[str, float]:
    return load_unigrams()


# --- tokenizer ---------------------------------------------------------------


def _emoji_class() -> str:
    parts = []
    for ln in _data_lines("emoji_ranges.txt"):
        lo, hi = (int(x, 16) for x in ln.split())
        parts.append(re.escape(chr(lo)) if lo == hi else f"{re.escape(chr(lo))}-{re.escape(chr(hi))}")
    return "".join(parts)


_EMOJI = f"[{_emoji_class()}]"
_EMOJI_MOD = "[\ufe0f\ufe0e\u20e3\U0001F3FB-\U0001F3FF]"
_FLAG = "[\U0001F1E6-\U0001F1FF]{1,2}"

_TOKEN_RE = re.compile(
    rf"""
    (?P<url>[A-Za-z][A-Za-z0-9+.\-]*://\S+)
  | (?P<hashtag>\#\w+)
  | (?P<mention>@\w+)
  | (?P<emoji>{_FLAG}|{_EMOJI}{_EMOJI_MOD}*(?:\u200d{_EMOJI}{_EMOJI_MOD}*)*)
  | (?P<number>\d+(?:[.,]\d+)+(?!\w))
  | (?P<word>\w+(?:['’\-]\w+)*)
  | (?P<punct>\S)
    """,
    re.VERBOSE,
)


def _classify_word(surface: str) -> str:
    if surface.isdigit():
        return NUMBER
    if not any(ch.isalnum() for ch in surface):
        return PUNCT
    return WORD


def tokenize(text: str, source: str = CAPTION) -> list[Token]:
    """Split ``text`` into social-media tokens.

    Every non-whitespace character ends up in exactly one token.
    """
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        surface = m.group()
        if kind == WORD:
            kind = _classify_word(surface)
        tokens.append(Token(surface, kind, source))
    return tokens


# --- normalization -----------------------------------------------------------

_VOWELS = set("aeiouy")


def lemmatize(word: str) -> str:
    """Dictionary-then-suffix lemmatizer for lowercase English words."""
    w = word.lower()
    exc = _lemma_exceptions()
    if w in exc:
        return exc[w]
    if len(w) <= 3 or not w.isalpha():
        return w
    if w.endswith("ies") and len(w) > 4:
        return w[:-3] + "y"
    if w.endswith("sses"):
        return w[:-2]
    if w.endswith(("xes", "ches", "shes", "zes")):
        return w[:-2]
    if w.endswith(("ss", "us", "is")):
        return w
    if w.endswith("s"):
        return w[:-1]
    if w.endswith("ing"):
        return _strip_verbal(w, 3)
    if w.endswith("ed") and not w.endswith("eed"):
        return _strip_verbal(w, 2)
    return w


def _strip_verbal(w: str, n: int) -> str:
    stem = w[:-n]
    if len(stem) < 3 or not (_VOWELS & set(stem)):
        return w
    if len(stem) > 3 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS and stem[-1] not in "lsz":
        stem = stem[:-1]
    return stem


def normalize(tokens: Sequence[Token], stopwords: Iterable[str] | None = None) -> list[Token]:
    """Lowercase + lemmatize word tokens and drop stopwords.

    Normalized forms are computed from the surface, so applying this twice is
    the same as applying it once.
    """
    stop = default_stopwords() if stopwords is None else frozenset(stopwords)
    out = []
    for tok in tokens:
        if tok.kind == WORD:
            low = tok.surface.lower()
            if low in stop:
                continue
            out.append(replace(tok, normalized=lemmatize(low)))
        elif tok.kind in _UNNORMALIZED_KINDS:
            out.append(replace(tok, normalized=None))
        else:
            out.append(replace(tok, normalized=tok.surface.lower()))
    return out


# --- hashtag segmentation ----------------------------------------------------

_TIE_EPS = 1e-9


def unknown_word_logprob(word: str) -> float:
    """log10 probability assigned to out-of-model words: 10^(-7 len)."""
    return -7.0 * len(word)


def segmentation_logprob(segments: Sequence[str], unigrams: Mapping[str, float]) -> float:
    total = 0.0
    for seg in segments:
        p = unigrams.get(seg.lower())
        total += math.log10(p) if p else unknown_word_logprob(seg)
    return total


def segment_hashtag(tag: str, unigrams: Mapping[str, float] | None = None) -> list[str]:
    """Most probable split of a hashtag body into unigram-model words.

    Ties (within 1e-9 in log10 space) go to fewer segments, then to the
    lexicographically smaller segment list.
    """
    if not tag.startswith("#"):
        raise ValueError(f"not a hashtag: {tag!r}")
    body = tag[1:]
    if not body:
        raise ValueError("empty hashtag body")
    model = default_unigrams() if unigrams is None else unigrams
    lower = body.lower()
    n = len(body)

    def logp(i: int, j: int) -> float:
        p = model.get(lower[i:j])
        return math.log10(p) if p else unknown_word_logprob(lower[i:j])

    # best[i] = (score, n_segments, segments) for body[i:]
    best: list[tuple[float, int, list[str]] | None] = [None] * (n + 1)
    best[n] = (0.0, 0, [])
    for i in range(n - 1, -1, -1):
        cand = None
        for j in range(i + 1, n + 1):
            score, nseg, segs = best[j]
            c = (logp(i, j) + score, nseg + 1, [body[i:j]] + segs)
            if cand is None or _better(c, cand):
                cand = c
        best[i] = cand
    return best[0][2]


def _better(a, b) -> bool:
    if abs(a[0] - b[0]) > _TIE_EPS:
        return a[0] > b[0]
    if a[1] != b[1]:
        return a[1] < b[1]
    return a[2] < b[2]


# --- posts and corpora -------------------------------------------------------


def post_tokens(
    post: Post,
    stopwords: Iterable[str] | None = None,
    unigrams: Mapping[str, float] | None = None,
) -> list[Token]:
    """Normalized tokens for one post, tagged with the field they came from.

    Each hashtag is kept and additionally expanded into its segmented words.
    """
    stop = default_stopwords() if stopwords is None else frozenset(stopwords)
    raw: list[Token] = tokenize(post.caption, CAPTION)
    for _, text in post.comments:
        raw.extend(tokenize(text, COMMENT))
    for tag in post.usertags:
        raw.extend(tokenize(tag, USERTAG))
    out = []
    for tok in normalize(raw, stop):
        out.append(tok)
        if tok.kind == HASHTAG:
            segs = [Token(s, WORD, HASHTAG_SEGMENTED) for s in segment_hashtag(tok.surface, unigrams)]
            out.extend(normalize(segs, stop))
    return out


def raw_tokens(post: Post) -> list[Token]:
    """Un-normalized tokenizer output over every text field of a post."""
    toks = tokenize(post.caption, CAPTION)
    for _, text in post.comments:
        toks.extend(tokenize(text, COMMENT))
    for tag in post.usertags:
        toks.extend(tokenize(tag, USERTAG))
    return toks


def word_terms(tokens: Iterable[Token]) -> list[str]:
    return [t.normalized for t in tokens if t.kind == WORD and t.normalized]


@dataclass(frozen=True)
class Corpus:
    posts: tuple[Post, ...]
    streams: Mapping[str, tuple[Token, ...]] = field(repr=False)
    df: Mapping[str, int] = field(repr=False)

    @property
    def N(self) -> int:
        return len(self.posts)

    def __len__(self) -> int:
        return len(self.posts)

    def __iter__(self):
        return iter(self.posts)

    def tokens(self, post_id: str) -> tuple[Token, ...]:
        return self.streams[post_id]

    def get(self, post_id: str) -> Post:
        return self._index[post_id]

    @cached_property
    def _index(self) -> dict[str, Post]:
        return {p.id: p for p in self.posts}


def build_corpus(
    posts: Iterable[Post],
    stopwords: Iterable[str] | None = None,
    unigrams: Mapping[str, float] | None = None,
) -> Corpus:
    stop = default_stopwords() if stopwords is None else frozenset(stopwords)
    posts = tuple(posts)
    streams: dict[str, tuple[Token, ...]] = {}
    df: Counter[str] = Counter()
    for p in posts:
        if p.id in streams:
            raise CorpusError(f"duplicate post id {p.id!r}")
        toks = tuple(post_tokens(p, stop, unigrams))
        streams[p.id] = toks
        df.update(set(word_terms(toks)))
    return Corpus(posts, streams, dict(df))


def post_from_record(rec: dict) -> Post:
    if not isinstance(rec, dict):
        raise CorpusError("record is not a JSON object")
    pid = rec.get("id")
    if not isinstance(pid, str) or not pid:
        raise CorpusError("missing or empty 'id'")
    caption = rec.get("caption", "")
    comments = rec.get("comments", [])
    usertags = rec.get("usertags", [])
    if not isinstance(caption, str):
        raise CorpusError("'caption' must be a string")
    if not isinstance(comments, list) or not isinstance(usertags, list):
        raise CorpusError("'comments' and 'usertags' must be arrays")
    parsed = []
    for c in comments:
        if not isinstance(c, dict) or not isinstance(c.get("text"), str):
            raise CorpusError("comment must be an object with a 'text' string")
        parsed.append((str(c.get("user", "")), c["text"]))
    if not all(isinstance(t, str) for t in usertags):
        raise CorpusError("'usertags' must contain strings")
    return Post(pid, caption, tuple(parsed), tuple(usertags))


def post_to_record(post: Post) -> dict:
    return {
        "id": post.id,
        "caption": post.caption,
        "comments": [{"user": u, "text": t} for u, t in post.comments],
        "usertags": list(post.usertags),
    }


def parse_posts(
    stream: Iterable[str],
    stopwords: Iterable[str] | None = None,
    unigrams: Mapping[str, float] | None = None,
) -> Corpus:
    """Build a Corpus from JSONL lines, preserving input order."""
    posts = []
    seen = set()
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            post = post_from_record(json.loads(line))
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        except CorpusError as exc:
            raise CorpusError(f"line {lineno}: {exc}") from None
        if post.id in seen:
            raise CorpusError(f"line {lineno}: duplicate post id {post.id!r}")
        seen.add(post.id)
        posts.append(post)
    return build_corpus(posts, stopwords, unigrams)


def load_corpus(path, stopwords=None, unigrams=None) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_posts(fh, stopwords, unigrams)
