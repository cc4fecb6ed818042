"""Deterministic synthetic data: label-model samplers, a bundled toy corpus,
and the hand-built misspelling fixture used to compare the two extractors.

Everything here is a pure function of its seed, so the committed files under
``data/`` can be regenerated byte for byte with ``write_synthetic_bundle`` and
``write_misspelling_fixture``.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import WORD, Post, lemmatize, post_to_record, post_tokens
from .embeddings import EmbeddingTable, save_table
from .extract import CATEGORIES
from .weaklabel import CLASS_KEYWORDS, CLASSES


def data_dir(*parts: str) -> Path:
    """Filesystem path of a bundled resource directory."""
    base = resources.files("instamine").joinpath("data")
    for p in parts:
        base = base.joinpath(p)
    return Path(str(base))


# --- label-model samplers ----------------------------------------------------


def sample_two_coin(n: int, alpha: Sequence[float], beta: Sequence[float], prior: float,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Latent y in {0,1} and an n x m matrix of {+1,-1,0} votes.

    LF j fires with probability ``beta[j]``; a firing LF reports the true
    sign with probability ``alpha[j]`` and the opposite sign otherwise.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    m = len(alpha)
    y = (rng.random(n) < prior).astype(np.int8)
    sign = 2 * y.astype(np.int8) - 1
    fire = rng.random((n, m)) < beta
    correct = rng.random((n, m)) < alpha
    V = np.where(correct, sign[:, None], -sign[:, None]) * fire
    return y, V.astype(np.int8)


def sample_multilabel_votes(Y: np.ndarray, alpha: Sequence[float], beta: Sequence[float],
                            rng: np.random.Generator) -> list[list[frozenset | None]]:
    """Set-valued votes from per-class two-coin LFs over an n x C truth matrix.

    A firing LF decides every class independently and is right with
    probability ``alpha[j]``. A firing LF whose set comes out empty abstains.
    """
    n, C = Y.shape
    out = []
    for i in range(n):
        row = []
        for a, b in zip(alpha, beta):
            if rng.random() >= b:
                row.append(None)
                continue
            keep = rng.random(C) < a
            named = np.where(keep, Y[i], 1 - Y[i]).astype(bool)
            vote = frozenset(CLASSES[c] for c in np.flatnonzero(named))
            row.append(vote or None)
        out.append(row)
    return out


def zipf_sample(n: int, exponent: float, seed: int) -> np.ndarray:
    """Discrete power-law draws on 1, 2, ... with P(k) proportional to k^-exponent."""
    if exponent <= 1.0:
        raise ValueError("exponent must exceed 1")
    return np.random.default_rng(seed).zipf(exponent, size=n)


# --- bundled synthetic corpus ------------------------------------------------

BRANDS = ("gucci", "zara", "prada", "chanel", "levis", "nike", "mango", "dior")
PATTERNS = ("floral", "striped", "plaid", "polka", "leopard", "checked")
MATERIALS = ("denim", "leather", "silk", "wool", "cotton", "lace", "suede")
STYLES = ("boho", "vintage", "casual", "streetwear", "chic", "minimalist", "preppy")

# Terms with an everyday non-fashion sense get a lower sense probability.
AMBIGUOUS = {"flat": 0.2, "pump": 0.25, "top": 0.4, "watch": 0.3, "ring": 0.35, "tank": 0.2,
             "trench": 0.3, "mule": 0.15, "heel": 0.4, "boot": 0.45, "clutch": 0.35, "mango": 0.3}

FILLER = ("today", "weekend", "sunny", "coffee", "city", "walk", "friends", "summer", "night",
          "party", "office", "look", "outfit", "style", "love", "new", "wearing", "favourite",
          "brunch", "travel")
OPENERS = ("loving my new", "wearing my", "obsessed with this", "finally got the", "new in:",
           "today's pick:", "can't stop wearing my", "throwback to the")
COMMENTS = ("love it 😍", "so cute!!", "where is the {item} from?", "need this {item}", "gorgeous 🔥",
            "@{user} look at this", "omg 😍😍", "yes queen", "link pls", "great {material}",
            "shop it here http://shop.example.com/{n}", "the {item} is perfect ❤️")
HASHTAGS = ("#ootd", "#fashion", "#streetstyle", "#outfitoftheday", "#style", "#instafashion",
            "#fashionblogger", "#lookbook")
EMOJI = ("😍", "🔥", "✨", "❤️", "👗", "👜", "👠", "💯")

SYNTHETIC_SEED = 20240601
SYNTHETIC_POSTS = 400
SYNTHETIC_DIM = 64
VISION_LFS = (("vision_a", 0.92, 0.8), ("vision_b", 0.85, 0.6), ("vision_c", 0.75, 0.7),
              ("vision_d", 0.62, 0.5))


def synthetic_ontology() -> dict[str, list[str]]:
    items = []
    for cls in CLASSES:
        for t in CLASS_KEYWORDS[cls]:
            if t not in items:
                items.append(t)
    return {"items": items, "brands": list(BRANDS), "patterns": list(PATTERNS),
            "materials": list(MATERIALS), "styles": list(STYLES)}


def _misspell(word: str, rng: np.random.Generator) -> str:
    """Vowel stretching or letter doubling, as seen in captions."""
    vowels = [i for i, ch in enumerate(word) if ch in "aeiou"]
    if vowels and rng.random() < 0.6:
        i = vowels[int(rng.integers(len(vowels)))]
        return word[:i] + word[i] * int(rng.integers(2, 4)) + word[i + 1:]
    return word + word[-1]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def synthetic_embeddings(posts: Sequence[Post], ontology: dict[str, list[str]], misspellings: dict[str, str],
                         rng: np.random.Generator, dim: int = SYNTHETIC_DIM) -> EmbeddingTable:
    """Class-clustered vectors: terms near their class direction, misspellings near their term."""
    vecs: dict[str, np.ndarray] = {}
    class_dir = {c: _unit(rng.normal(size=dim)) for c in CLASSES}
    for c in CLASSES:
        for t in CLASS_KEYWORDS[c]:
            vecs.setdefault(t, _unit(class_dir[c] + 0.9 * _unit(rng.normal(size=dim))))
    for cat in ("brands", "patterns", "materials", "styles"):
        centre = _unit(rng.normal(size=dim))
        for t in ontology[cat]:
            vecs.setdefault(t, _unit(centre + 1.5 * _unit(rng.normal(size=dim))))
    # post words arrive lemmatized ("striped" -> "stripe"); keep them beside their term
    for cat in CATEGORIES:
        for t in ontology[cat]:
            if lemmatize(t) != t and lemmatize(t) not in vecs:
                misspellings.setdefault(lemmatize(t), t)
    for wrong, right in sorted(misspellings.items()):
        vecs[wrong] = _unit(vecs[right] + 0.15 * _unit(rng.normal(size=dim)))
    words = set()
    for p in posts:
        words.update(t.normalized for t in post_tokens(p) if t.kind == WORD and t.normalized)
    for w in sorted(words - set(vecs)):
        vecs[w] = _unit(rng.normal(size=dim))
    return EmbeddingTable.from_dict({w: vecs[w] for w in sorted(vecs)})


def synthetic_bundle(seed: int = SYNTHETIC_SEED, n_posts: int = SYNTHETIC_POSTS) -> dict:
    """Posts, ontology, embeddings, cache, vision votes and gold for the toy corpus."""
    rng = np.random.default_rng(seed)
    ontology = synthetic_ontology()
    class_weights = np.linspace(2.0, 1.0, len(CLASSES))
    class_weights /= class_weights.sum()
    posts, gold, truth = [], [], []
    misspellings: dict[str, str] = {}
    users = [f"user{i}" for i in range(1, 40)]
    for i in range(n_posts):
        n_cls = 1 if rng.random() < 0.7 else 2
        cls_idx = sorted(rng.choice(len(CLASSES), size=n_cls, replace=False, p=class_weights))
        items, surfaces = [], []
        for c in cls_idx:
            terms = CLASS_KEYWORDS[CLASSES[c]]
            term = terms[int(rng.integers(len(terms)))]
            items.append(term)
            surface = term
            if rng.random() < 0.25:
                surface = _misspell(term, rng)
                if lemmatize(surface) != term:
                    misspellings[lemmatize(surface)] = term
            surfaces.append(surface)
        material = MATERIALS[int(rng.integers(len(MATERIALS)))] if rng.random() < 0.5 else None
        brand = BRANDS[int(rng.integers(len(BRANDS)))] if rng.random() < 0.4 else None
        pattern = PATTERNS[int(rng.integers(len(PATTERNS)))] if rng.random() < 0.3 else None
        style = STYLES[int(rng.integers(len(STYLES)))] if rng.random() < 0.3 else None
        words = [OPENERS[int(rng.integers(len(OPENERS)))]]
        for extra in (pattern, material):
            if extra:
                words.append(extra)
        words.append(" and ".join(surfaces))
        if brand:
            words.append(f"by {brand.capitalize()}")
        words.extend(FILLER[int(j)] for j in rng.choice(len(FILLER), size=int(rng.integers(1, 4)), replace=False))
        if style:
            words.append(f"#{style}")
        words.extend(HASHTAGS[int(j)] for j in rng.choice(len(HASHTAGS), size=int(rng.integers(0, 4)), replace=False))
        words.extend(EMOJI[int(j)] for j in rng.integers(len(EMOJI), size=int(rng.integers(0, 3))))
        caption = " ".join(words)
        n_comments = min(int(rng.zipf(2.0)) - 1, 40)
        comments = []
        for _ in range(n_comments):
            tpl = COMMENTS[int(rng.integers(len(COMMENTS)))]
            text = tpl.format(item=items[0], material=material or "colour", user=users[int(rng.integers(len(users)))],
                              n=int(rng.integers(1000)))
            comments.append((users[int(rng.integers(len(users)))], text))
        usertags = tuple([brand] if brand and rng.random() < 0.5 else [])
        pid = f"s{i:04d}"
        posts.append(Post(pid, caption, tuple(comments), usertags))
        cats = {"items": sorted(set(items)), "brands": [brand] if brand else [],
                "patterns": [pattern] if pattern else [], "materials": [material] if material else [],
                "styles": [style] if style else []}
        gold.append({"post_id": pid, "categories": cats, "classes": [CLASSES[c] for c in cls_idx]})
        row = np.zeros(len(CLASSES), dtype=np.int8)
        row[cls_idx] = 1
        truth.append(row)
    Y = np.stack(truth)
    table = synthetic_embeddings(posts, ontology, misspellings, rng)
    cache = {t: AMBIGUOUS.get(t, 0.9) for cat in CATEGORIES for t in ontology[cat]}
    votes = {}
    alphas = [a for _, a, _ in VISION_LFS]
    betas = [b for _, _, b in VISION_LFS]
    rows = sample_multilabel_votes(Y, alphas, betas, rng)
    for j, (name, _, _) in enumerate(VISION_LFS):
        votes[name] = [{"post_id": p.id, "lf": name, "classes": None if r[j] is None else sorted(r[j], key=CLASSES.index)}
                       for p, r in zip(posts, rows)]
    return {"posts": posts, "ontology": ontology, "embeddings": table, "cache": cache,
            "votes": votes, "gold": gold, "truth": Y}


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def _write_cache(path: Path, cache: dict[str, float]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for term in sorted(cache):
            fh.write(f"{term}\t{cache[term]:.4f}\n")


def write_synthetic_bundle(out_dir, seed: int = SYNTHETIC_SEED, n_posts: int = SYNTHETIC_POSTS) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    b = synthetic_bundle(seed, n_posts)
    paths = {
        "corpus": out / "posts.jsonl",
        "ontology": out / "ontology.json",
        "embeddings": out / "embeddings.txt",
        "cache": out / "cache.tsv",
        "gold": out / "gold.jsonl",
    }
    _write_jsonl(paths["corpus"], (post_to_record(p) for p in b["posts"]))
    with open(paths["ontology"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(b["ontology"], fh, indent=1, sort_keys=True)
        fh.write("\n")
    save_table(b["embeddings"], paths["embeddings"])
    _write_cache(paths["cache"], b["cache"])
    _write_jsonl(paths["gold"], b["gold"])
    for name, recs in b["votes"].items():
        paths[f"votes_{name}"] = out / f"votes_{name}.jsonl"
        _write_jsonl(paths[f"votes_{name}"], recs)
    return paths


# --- misspelling fixture -----------------------------------------------------
#
# Three item terms a right angle apart in 2-d. Spelling variants and synonyms
# sit within 12 degrees of their term; look-alike words with unrelated senses
# (boat/coat, bog/bag, beans/jeans) point at 270 degrees, away from every
# item. Filler words have no vector. Two variants are left out of the table
# on purpose so that the edit-distance matcher wins a few posts.

FIXTURE_TERMS = {"bag": 0.0, "jeans": 90.0, "coat": 180.0}
FIXTURE_VARIANTS = {
    "baaag": ("bag", 4.0), "bagg": ("bag", -3.0), "handbag": ("bag", 8.0), "purse": ("bag", -12.0),
    "jeanz": ("jeans", 2.0), "denim": ("jeans", -6.0), "jeanss": ("jeans", 3.0),
    "coaat": ("coat", 5.0), "parka": ("coat", -9.0), "overcoat": ("coat", 11.0),
}
FIXTURE_OOV_VARIANTS = {"baagg": "bag", "cooat": "coat"}
FIXTURE_LOOKALIKES = {"boat": 268.0, "goat": 272.0, "bog": 266.0, "beans": 274.0}

# (caption, comments, gold items)
FIXTURE_POSTS = (
    ("my new baaag for the weekend", ("love the baaag",), ("bag",)),
    ("sailing on the boat with my handbag", (), ("bag",)),
    ("purse of the day", ("so cute",), ("bag",)),
    ("the goat stole my parka", (), ("coat",)),
    ("cosy overcoat weather", ("need it",), ("coat",)),
    ("jeanz and a coaat", (), ("jeans", "coat")),
    ("denim everywhere", ("great denim",), ("jeans",)),
    ("beans for lunch then shopping for jeanss", (), ("jeans",)),
    ("lost in a bog with my purse", (), ("bag",)),
    ("boat trip in my parka", ("so warm",), ("coat",)),
    ("new jeans and bagg", (), ("jeans", "bag")),
    ("bagg from the market", (), ("bag",)),
    ("coat and handbag combo", (), ("coat", "bag")),
    ("goat farm visit in denim", (), ("jeans",)),
    ("beans beans beans and my coaat", (), ("coat",)),
    ("parka season", ("yes",), ("coat",)),
    ("a purse and a parka", (), ("bag", "coat")),
    ("the boat and a baaag", (), ("bag",)),
    ("jeanz on repeat", (), ("jeans",)),
    ("overcoat with jeanz", ("nice",), ("coat", "jeans")),
    ("handbag heaven", (), ("bag",)),
    ("bog walk in my overcoat", (), ("coat",)),
    ("denim and purse", (), ("jeans", "bag")),
    ("baagg of dreams", (), ("bag",)),
    ("cooat for winter", (), ("coat",)),
    ("goat cheese and parka", (), ("coat",)),
    ("jeanss and boat shoes", (), ("jeans",)),
    ("bag jeans coat", (), ("bag", "jeans", "coat")),
    ("beans and denim", (), ("jeans",)),
    ("coaat by the boat", (), ("coat",)),
)


def _polar(deg: float) -> np.ndarray:
    r = math.radians(deg)
    return np.array([math.cos(r), math.sin(r)])


def misspelling_fixture() -> dict:
    """Posts, ontology, 2-d embeddings, neutral cache and item gold for 30 posts."""
    vecs = {t: _polar(a) for t, a in FIXTURE_TERMS.items()}
    for v, (term, off) in FIXTURE_VARIANTS.items():
        vecs[lemmatize(v)] = _polar(FIXTURE_TERMS[term] + off)
    for v, a in FIXTURE_LOOKALIKES.items():
        vecs[lemmatize(v)] = _polar(a)
    posts, gold = [], []
    for i, (caption, comments, items) in enumerate(FIXTURE_POSTS):
        pid = f"m{i:02d}"
        posts.append(Post(pid, caption, tuple(("friend", c) for c in comments), ()))
        gold.append({"post_id": pid, "categories": {"items": sorted(items)}, "classes": []})
    ontology = {"items": sorted(FIXTURE_TERMS), "brands": [], "patterns": [], "materials": [], "styles": []}
    table = EmbeddingTable.from_dict({w: vecs[w] for w in sorted(vecs)})
    return {"posts": posts, "ontology": ontology, "embeddings": table, "cache": {}, "gold": gold}


def write_misspelling_fixture(out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    f = misspelling_fixture()
    paths = {"corpus": out / "posts.jsonl", "ontology": out / "ontology.json",
             "embeddings": out / "embeddings.txt", "cache": out / "cache.tsv", "gold": out / "gold.jsonl"}
    _write_jsonl(paths["corpus"], (post_to_record(p) for p in f["posts"]))
    with open(paths["ontology"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(f["ontology"], fh, indent=1, sort_keys=True)
        fh.write("\n")
    save_table(f["embeddings"], paths["embeddings"])
    _write_cache(paths["cache"], f["cache"])
    _write_jsonl(paths["gold"], f["gold"])
    return paths


if __name__ == "__main__":
    write_synthetic_bundle(data_dir("synthetic"))
    write_misspelling_fixture(data_dir("fixtures", "misspelling"))
