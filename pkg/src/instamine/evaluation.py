"""Ranking metrics for extraction, multi-label metrics, and the paired t-test."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

KS = (1, 3, 5, 10)


class EvaluationError(ValueError):
    pass


def _check_k(k: int) -> None:
    if k < 1:
        raise EvaluationError("k must be >= 1")


def dcg_at_k(ranked: Sequence[str], relevant: set[str], k: int) -> float:
    return sum(1.0 / math.log2(i + 2) for i, t in enumerate(ranked[:k]) if t in relevant)


def ndcg_at_k(ranked: Sequence[str], relevant: Iterable[str], k: int) -> float | None:
    """Binary-gain NDCG@k; None when there is nothing relevant."""
    _check_k(k)
    rel = set(relevant)
    if not rel:
        return None
    ideal = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(rel))))
    return dcg_at_k(ranked, rel, k) / ideal


def precision_at_k(ranked: Sequence[str], relevant: Iterable[str], k: int) -> float:
    """Hits in the top k divided by k, even when fewer than k were returned."""
    _check_k(k)
    rel = set(relevant)
    return sum(1 for t in ranked[:k] if t in rel) / k


def average_precision(ranked: Sequence[str], relevant: Iterable[str]) -> float | None:
    rel = set(relevant)
    if not rel:
        return None
    denom = min(len(rel), len(ranked))
    if denom == 0:
        return 0.0
    hits, total = 0, 0.0
    for i, t in enumerate(ranked, 1):
        if t in rel:
            hits += 1
            total += hits / i
    return total / denom


def mean_average_precision(ranked_lists: Sequence[Sequence[str]], relevant_sets: Sequence[Iterable[str]]) -> float:
    if len(ranked_lists) != len(relevant_sets):
        raise EvaluationError("ranked lists and relevant sets differ in length")
    aps = [ap for ap in map(average_precision, ranked_lists, relevant_sets) if ap is not None]
    if not aps:
        raise EvaluationError("no post with a non-empty relevant set")
    return sum(aps) / len(aps)


def ranking_report(ranked_lists: Sequence[Sequence[str]], relevant_sets: Sequence[Iterable[str]],
                   ks: Sequence[int] = KS) -> dict:
    """NDCG@k, P@k and MAP averaged over posts with a non-empty relevant set."""
    rels = [set(r) for r in relevant_sets]
    keep = [i for i, r in enumerate(rels) if r]
    out: dict = {"n_evaluated": len(keep), "n_skipped": len(rels) - len(keep)}
    if not keep:
        return out
    for k in ks:
        out[f"ndcg@{k}"] = sum(ndcg_at_k(ranked_lists[i], rels[i], k) for i in keep) / len(keep)
    for k in ks:
        out[f"p@{k}"] = sum(precision_at_k(ranked_lists[i], rels[i], k) for i in keep) / len(keep)
    out["map"] = mean_average_precision([ranked_lists[i] for i in keep], [rels[i] for i in keep])
    return out


# --- multi-label classification ----------------------------------------------


def example_scores(pred: set[str], gold: set[str]) -> tuple[float, float, float]:
    """(precision, recall, F1) for one post.

    Empty prediction and empty gold count as perfect; an empty side facing a
    non-empty one scores 0.
    """
    inter = len(pred & gold)
    if pred:
        p = inter / len(pred)
    else:
        p = 1.0 if not gold else 0.0
    if gold:
        r = inter / len(gold)
    else:
        r = 1.0 if not pred else 0.0
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


def classification_metrics(predictions: Mapping[str, Iterable[str]], gold: Mapping[str, Iterable[str]],
                           classes: Sequence[str], average: str = "example") -> dict:
    """Accuracy (per-label Hamming), precision, recall and F1.

    ``average="example"`` averages per-post scores; ``"micro"`` pools counts.
    """
    if set(predictions) != set(gold):
        missing = sorted(set(gold) ^ set(predictions))
        raise EvaluationError(f"prediction and gold ids differ, e.g. {missing[0]!r}")
    ids = sorted(gold)
    C = len(classes)
    if not ids:
        raise EvaluationError("nothing to evaluate")
    hamming = 0.0
    per = []
    tp = fp = fn = 0
    for pid in ids:
        P, G = set(predictions[pid]), set(gold[pid])
        hamming += (C - len(P ^ G)) / C
        per.append(example_scores(P, G))
        tp += len(P & G)
        fp += len(P - G)
        fn += len(G - P)
    n = len(ids)
    out = {"n": n, "accuracy": hamming / n, "average": average}
    if average == "example":
        out["precision"] = sum(s[0] for s in per) / n
        out["recall"] = sum(s[1] for s in per) / n
        out["f1"] = sum(s[2] for s in per) / n
    elif average == "micro":
        p = tp / (tp + fp) if tp + fp else 1.0 if fn == 0 else 0.0
        r = tp / (tp + fn) if tp + fn else 1.0 if fp == 0 else 0.0
        out["precision"], out["recall"] = p, r
        out["f1"] = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    else:
        raise ValueError(f"unknown averaging {average!r}")
    return out


# --- significance ------------------------------------------------------------


def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if not (0.0 <= x <= 1.0):
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed(t: float, df: float) -> float:
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Paired t statistic and two-tailed p-value with n - 1 degrees of freedom.

    Zero-variance differences give p = 1 for a zero mean and p = 0 otherwise
    (t is then 0 or +/-inf).
    """
    if len(a) != len(b):
        raise EvaluationError("paired samples differ in length")
    n = len(a)
    if n < 2:
        raise EvaluationError("paired t-test needs at least two pairs")
    d = [x - y for x, y in zip(a, b)]
    mean = math.fsum(d) / n
    var = math.fsum((x - mean) ** 2 for x in d) / (n - 1)
    if var == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / math.sqrt(var / n)
    p = min(1.0, max(0.0, student_t_two_tailed(t, n - 1)))
    return t, p


# --- gold files --------------------------------------------------------------


@dataclass
class GoldPost:
    post_id: str
    categories: dict[str, set[str]] = field(default_factory=dict)
    classes: set[str] = field(default_factory=set)


def load_gold(path, classes: Sequence[str] | None = None, categories: Sequence[str] | None = None) -> dict[str, GoldPost]:
    gold = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise EvaluationError(f"{path}: line {lineno}: malformed JSON") from None
            if "meta" in rec and "post_id" not in rec:
                continue
            pid = rec.get("post_id")
            if not isinstance(pid, str):
                raise EvaluationError(f"{path}: line {lineno}: missing post_id")
            cats = {c: set(v) for c, v in (rec.get("categories") or {}).items()}
            cls = set(rec.get("classes") or [])
            if classes is not None and not cls <= set(classes):
                raise EvaluationError(f"{path}: line {lineno}: unknown class {sorted(cls - set(classes))[0]!r}")
            if categories is not None and not set(cats) <= set(categories):
                raise EvaluationError(f"{path}: line {lineno}: unknown category")
            gold[pid] = GoldPost(pid, cats, cls)
    return gold
