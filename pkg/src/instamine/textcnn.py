"""Multi-label text CNN trained on probabilistic labels.

Embedding lookup, one VALID 1-d convolution per filter width, ReLU,
max-over-time pooling, dropout and a sigmoid output layer. The loss is the
expected binary cross-entropy against soft labels, averaged over classes and
batch. Forward and backward passes are written out in numpy.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import EMOJI, HASHTAG, NUMBER, WORD, Corpus, Post, Token, post_tokens
from .weaklabel import CLASSES

PAD_ID = 0
UNK_ID = 1
FORMAT_VERSION = 1
_MAGIC = b"INSTACNN"


class NumericError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class CnnConfig:
    vocab_size: int
    embed_dim: int = 300
    filter_widths: tuple[int, ...] = (3, 4, 5)
    num_filters: int = 128
    keep_prob: float = 0.7
    l2_constraint: float = 0.0  # read as "no constraint"
    learning_rate: float = 0.01
    batch_size: int = 256
    max_len: int = 200
    num_classes: int = 13
    epochs: int = 10
    seed: int = 0
    optimizer: str = "adam"
    dtype: str = "float64"
    init_scale: float = 0.05
    shuffle: bool = True
    padding: str = "VALID"
    activation: str = "relu"

    def __post_init__(self):
        self.filter_widths = tuple(int(w) for w in self.filter_widths)
        positive = ("vocab_size", "embed_dim", "num_filters", "batch_size", "max_len", "num_classes")
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.filter_widths or min(self.filter_widths) < 1:
            raise ValueError("filter widths must be positive")
        if self.max_len < max(self.filter_widths):
            raise ValueError("max_len must be at least the largest filter width")
        if not (0.0 < self.keep_prob <= 1.0):
            raise ValueError("keep_prob must lie in (0, 1]")
        if self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0 and learning_rate > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.padding != "VALID" or self.activation != "relu":
            raise ValueError("only VALID padding and ReLU are implemented")

    @property
    def hidden(self) -> int:
        return self.num_filters * len(self.filter_widths)

    def to_json(self) -> dict:
        d = asdict(self)
        d["filter_widths"] = list(self.filter_widths)
        return d


# --- model -------------------------------------------------------------------


def param_shapes(cfg: CnnConfig) -> dict[str, tuple[int, ...]]:
    shapes = {"embedding": (cfg.vocab_size, cfg.embed_dim)}
    for w in cfg.filter_widths:
        shapes[f"conv{w}.weight"] = (w, cfg.embed_dim, cfg.num_filters)
        shapes[f"conv{w}.bias"] = (cfg.num_filters,)
    shapes["output.weight"] = (cfg.hidden, cfg.num_classes)
    shapes["output.bias"] = (cfg.num_classes,)
    return shapes


@dataclass
class CnnModel:
    config: CnnConfig
    params: dict[str, np.ndarray]

    def copy(self) -> "CnnModel":
        return CnnModel(self.config, {k: v.copy() for k, v in self.params.items()})


def init_model(cfg: CnnConfig) -> CnnModel:
    """Uniform(-init_scale, init_scale) weights, zero biases."""
    rng = np.random.default_rng(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = rng.uniform(-cfg.init_scale, cfg.init_scale, size=shape).astype(dtype)
    return CnnModel(cfg, params)


@dataclass
class ForwardCache:
    ids: np.ndarray
    x: np.ndarray
    pooled: list[np.ndarray]
    argmax: list[np.ndarray]
    hidden: np.ndarray
    mask: np.ndarray | None
    dropped: np.ndarray
    logits: np.ndarray = field(repr=False)


def dropout_mask(rng: np.random.Generator, shape, keep_prob: float, dtype=np.float64) -> np.ndarray:
    """Inverted-dropout mask: kept units are scaled by 1/keep_prob."""
    return ((rng.random(shape) < keep_prob) / keep_prob).astype(dtype)


def forward(model: CnnModel, ids: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None,
            mask: np.ndarray | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Logits (batch x classes) and the activations needed by ``backward``.

    In train mode a dropout mask is drawn from ``rng`` unless one is given.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg, P = model.config, model.params
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.shape[1] < max(cfg.filter_widths):
        raise ValueError("ids must be batch x length with length >= largest filter width")
    x = P["embedding"][ids]
    B, L, _ = x.shape
    pooled, argmax = [], []
    for w in cfg.filter_widths:
        W = P[f"conv{w}.weight"]
        T = L - w + 1
        z = np.broadcast_to(P[f"conv{w}.bias"], (B, T, cfg.num_filters)).copy()
        for k in range(w):
            z += x[:, k:k + T, :] @ W[k]
        a = np.maximum(z, 0.0)
        idx = a.argmax(axis=1)
        pooled.append(np.take_along_axis(a, idx[:, None, :], axis=1)[:, 0, :])
        argmax.append(idx)
    h = np.concatenate(pooled, axis=1)
    if mode == "train" and cfg.keep_prob < 1.0:
        if mask is None:
            if rng is None:
                raise ValueError("train mode needs an rng or an explicit dropout mask")
            mask = dropout_mask(rng, h.shape, cfg.keep_prob, h.dtype)
        hd = h * mask
    else:
        mask = None
        hd = h
    logits = hd @ P["output.weight"] + P["output.bias"]
    return logits, ForwardCache(ids, x, pooled, argmax, h, mask, hd, logits)


def noise_aware_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean over batch and classes of -(p log s(y) + (1-p) log(1-s(y)))."""
    y = np.asarray(logits, dtype=np.float64)
    p = np.asarray(labels, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"logits {y.shape} and labels {p.shape} differ in shape")
    per = np.maximum(y, 0.0) - p * y + np.log1p(np.exp(-np.abs(y)))
    return float(per.mean())


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def loss_grad_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d loss / d logits = (sigmoid(y) - p) / (batch * classes)."""
    return (sigmoid(logits) - labels) / logits.size


def backward(model: CnnModel, cache: ForwardCache, labels: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of ``noise_aware_loss`` for every parameter."""
    cfg, P = model.config, model.params
    dtype = P["embedding"].dtype
    g = loss_grad_logits(cache.logits, labels).astype(dtype)
    grads = {
        "output.weight": cache.dropped.T @ g,
        "output.bias": g.sum(axis=0),
    }
    dh = g @ P["output.weight"].T
    if cache.mask is not None:
        dh = dh * cache.mask
    x = cache.x
    B, L, d = x.shape
    F = cfg.num_filters
    dx = np.zeros_like(x)
    rows = np.arange(B)[:, None]
    cols = np.arange(F)[None, :]
    for n, w in enumerate(cfg.filter_widths):
        T = L - w + 1
        dh_w = dh[:, n * F:(n + 1) * F] * (cache.pooled[n] > 0)
        dz = np.zeros((B, T, F), dtype=dtype)
        dz[rows, cache.argmax[n], cols] = dh_w
        grads[f"conv{w}.bias"] = dz.sum(axis=(0, 1))
        W = P[f"conv{w}.weight"]
        dW = np.empty_like(W)
        dz2 = dz.reshape(B * T, F)
        for k in range(w):
            dW[k] = x[:, k:k + T, :].reshape(B * T, d).T @ dz2
            dx[:, k:k + T, :] += dz @ W[k].T
        grads[f"conv{w}.weight"] = dW
    dE = np.zeros_like(P["embedding"])
    np.add.at(dE, cache.ids, dx)
    grads["embedding"] = dE
    return {k: grads[k] for k in P}


# --- optimization ------------------------------------------------------------


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * (g * g)
            params[k] -= (self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(params[k].dtype)


class SGD:
    def __init__(self, params, lr: float):
        self.lr = lr

    def step(self, params, grads) -> None:
        for k, g in grads.items():
            params[k] -= (self.lr * g).astype(params[k].dtype)


def iter_batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(model: CnnModel, ids: np.ndarray, labels: np.ndarray,
          config: CnnConfig | None = None) -> tuple[CnnModel, list[float]]:
    """Adam (or SGD) on the noise-aware loss; returns a new model and epoch losses.

    Batch order and dropout masks come from one generator seeded with
    ``config.seed``, so identical inputs give bit-identical trajectories.
    """
    cfg = config or model.config
    ids = np.asarray(ids)
    labels = np.asarray(labels, dtype=model.params["embedding"].dtype)
    if len(ids) != len(labels):
        raise ValueError("ids and labels differ in length")
    if labels.shape[1] != model.config.num_classes:
        raise ValueError("label width does not match num_classes")
    trained = model.copy()
    if cfg.epochs == 0 or len(ids) == 0:
        return trained, []
    rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(trained.params, cfg.learning_rate) if cfg.optimizer == "adam" else SGD(trained.params, cfg.learning_rate)
    history = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for batch in iter_batches(len(ids), cfg.batch_size, rng if cfg.shuffle else None):
            logits, cache = forward(trained, ids[batch], "train", rng=rng)
            loss = noise_aware_loss(logits, labels[batch])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch + 1}")
            opt.step(trained.params, backward(trained, cache, labels[batch]))
            total += loss * len(batch)
        history.append(total / len(ids))
    return trained, history


def evaluate_loss(model: CnnModel, ids: np.ndarray, labels: np.ndarray, batch_size: int = 512) -> float:
    total = 0.0
    for batch in iter_batches(len(ids), batch_size):
        logits, _ = forward(model, ids[batch], "eval")
        total += noise_aware_loss(logits, labels[batch]) * len(batch)
    return total / len(ids)


def predict_proba(model: CnnModel, ids: np.ndarray, batch_size: int = 512) -> np.ndarray:
    out = [sigmoid(forward(model, ids[b], "eval")[0]) for b in iter_batches(len(ids), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.config.num_classes))


# --- vocabulary and encoding -------------------------------------------------


def cnn_terms(tokens: Iterable[Token]) -> list[str]:
    """Inputs the CNN sees: normalized words, hashtags, numbers, and emoji."""
    out = []
    for t in tokens:
        if t.kind in (WORD, HASHTAG, NUMBER) and t.normalized:
            out.append(t.normalized)
        elif t.kind == EMOJI:
            out.append(t.surface)
    return out


def build_vocab(corpus: Corpus, min_freq: int = 1) -> dict[str, int]:
    """Ids from 2 by descending frequency then lexicographically; 0 pads, 1 is unknown."""
    if corpus.N == 0:
        raise ValueError("empty corpus")
    counts = Counter()
    for p in corpus.posts:
        counts.update(cnn_terms(corpus.tokens(p.id)))
    kept = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
    return {w: i for i, w in enumerate(kept, 2)}


def vocab_hash(vocab: Mapping[str, int]) -> str:
    payload = json.dumps(sorted(vocab.items(), key=lambda kv: kv[1]), ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def encode(terms: Sequence[str], vocab: Mapping[str, int], max_len: int) -> np.ndarray:
    ids = [vocab.get(t, UNK_ID) for t in terms[:max_len]]
    ids += [PAD_ID] * (max_len - len(ids))
    return np.asarray(ids, dtype=np.int64)


def encode_corpus(corpus: Corpus, vocab: Mapping[str, int], max_len: int,
                  post_ids: Sequence[str] | None = None) -> np.ndarray:
    pids = [p.id for p in corpus.posts] if post_ids is None else post_ids
    if not pids:
        return np.zeros((0, max_len), dtype=np.int64)
    return np.stack([encode(cnn_terms(corpus.tokens(pid)), vocab, max_len) for pid in pids])


def predict(model: CnnModel, post: Post | Sequence[Token], vocab: Mapping[str, int],
            threshold: float = 0.5, classes: Sequence[str] | None = None) -> set[str]:
    """Class names whose probability is at least ``threshold``."""
    names = CLASSES if classes is None else classes
    tokens = post_tokens(post) if isinstance(post, Post) else post
    ids = encode(cnn_terms(tokens), vocab, model.config.max_len)[None, :]
    probs = sigmoid(forward(model, ids, "eval")[0])[0]
    return {c for c, p in zip(names, probs) if p >= threshold}


# --- checkpoints -------------------------------------------------------------


def save_checkpoint(model: CnnModel, vocab: Mapping[str, int], path, extra: Mapping | None = None) -> None:
    """Magic, u32 header length, JSON header, then little-endian float32 arrays."""
    shapes = param_shapes(model.config)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_json(),
        "vocab_hash": vocab_hash(vocab),
        "vocab": sorted(vocab, key=vocab.get),
        "params": [[name, list(shape)] for name, shape in shapes.items()],
        "dtype": "<f4",
        **(dict(extra) if extra else {}),
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in shapes:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[CnnModel, dict[str, int], dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise CheckpointError("not a checkpoint file")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint format version {header.get('format_version')} != {FORMAT_VERSION}"
            )
        cfg = CnnConfig(**header["config"])
        vocab = {w: i for i, w in enumerate(header["vocab"], 2)}
        if vocab_hash(vocab) != header["vocab_hash"]:
            raise CheckpointError("vocabulary hash mismatch")
        dtype = np.dtype(cfg.dtype)
        params = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape))
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise CheckpointError(f"truncated checkpoint at {name}")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(dtype)
        if fh.read(1):
            raise CheckpointError("trailing bytes after parameters")
    expected = param_shapes(cfg)
    if list(expected) != list(params) or any(tuple(expected[k]) != params[k].shape for k in params):
        raise CheckpointError("parameter shapes do not match the stored config")
    return CnnModel(cfg, params), vocab, header
