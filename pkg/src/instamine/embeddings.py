"""Word vectors in the plain-text format and cosine similarity queries."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class EmbeddingError(ValueError):
    pass


class DegenerateVectorError(EmbeddingError):
    pass


@dataclass(frozen=True)
class EmbeddingTable:
    """Immutable word -> vector table.

    Vectors are stored as float32; norms and all similarity arithmetic are
    float64.
    """

    words: tuple[str, ...]
    vectors: np.ndarray
    index: dict[str, int] = field(repr=False)
    norms: np.ndarray = field(repr=False)

    @classmethod
    def from_dict(cls, entries: dict[str, "np.typing.ArrayLike"]) -> "EmbeddingTable":
        words = tuple(entries)
        if not words:
            raise EmbeddingError("empty table")
        mat = np.asarray([np.asarray(entries[w], dtype=np.float64) for w in words], dtype=np.float32)
        return cls._build(words, mat)

    @classmethod
    def _build(cls, words, mat: np.ndarray) -> "EmbeddingTable":
        mat = np.ascontiguousarray(mat, dtype=np.float32)
        mat.setflags(write=False)
        norms = np.linalg.norm(mat.astype(np.float64), axis=1)
        norms.setflags(write=False)
        return cls(tuple(words), mat, {w: i for i, w in enumerate(words)}, norms)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def vector(self, word: str) -> np.ndarray | None:
        i = self.index.get(word)
        return None if i is None else self.vectors[i].astype(np.float64)


def load_table(path) -> EmbeddingTable:
    """Read ``<vocab-size> <dim>`` then one ``word v1 .. vd`` row per line."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingError("line 1: header must be '<vocab-size> <dimension>'")
        try:
            _, dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingError("line 1: non-integer header") from None
        if dim <= 0:
            raise EmbeddingError("line 1: dimension must be positive")
        order: dict[str, int] = {}
        rows: list[list[str]] = []
        row_lines: list[int] = []
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) - 1 != dim:
                raise EmbeddingError(
                    f"line {lineno}: expected {dim} values, found {len(parts) - 1}"
                )
            word = parts[0]
            if word in order:
                warnings.warn(f"duplicate word {word!r} at line {lineno}; keeping last", stacklevel=2)
                rows[order[word]] = parts[1:]
                row_lines[order[word]] = lineno
                continue
            order[word] = len(rows)
            rows.append(parts[1:])
            row_lines.append(lineno)
    if not rows:
        raise EmbeddingError("no vectors in file")
    try:
        mat = np.array(rows, dtype=np.float64)
    except ValueError:
        for vals, lineno in zip(rows, row_lines):
            try:
                np.array(vals, dtype=np.float64)
            except ValueError:
                raise EmbeddingError(f"line {lineno}: non-numeric value") from None
        raise
    return EmbeddingTable._build(list(order), mat)


def save_table(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for w, v in zip(table.words, table.vectors):
            fh.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")


def cosine(a: str, b: str, table: EmbeddingTable) -> float | None:
    """Cosine of two stored vectors; None when either word is missing."""
    ia, ib = table.index.get(a), table.index.get(b)
    if ia is None or ib is None:
        return None
    na, nb = table.norms[ia], table.norms[ib]
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("degenerate vector")
    if ia == ib:
        return 1.0
    va = table.vectors[ia].astype(np.float64)
    vb = table.vectors[ib].astype(np.float64)
    c = float(np.dot(va, vb) / (na * nb))
    return min(1.0, max(-1.0, c))


def nearest(word: str, k: int, table: EmbeddingTable) -> list[tuple[str, float]]:
    """Exact top-k neighbours by cosine, ties broken by word."""
    if word not in table.index:
        raise KeyError(f"word not in table: {word!r}")
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return []
    cand = []
    for j, other in enumerate(table.words):
        if other == word or table.norms[j] == 0.0:
            continue
        cand.append((other, cosine(word, other, table)))
    cand.sort(key=lambda ws: (-ws[1], ws[0]))
    return cand[:k]
