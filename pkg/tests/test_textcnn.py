import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instamine import textcnn as T
from instamine.corpus import Post, build_corpus


def _cfg(**kw):
    base = dict(vocab_size=20, embed_dim=6, filter_widths=(1, 2, 3), num_filters=3, max_len=8,
                num_classes=4, batch_size=4, epochs=1, seed=3, init_scale=0.3)
    base.update(kw)
    return T.CnnConfig(**base)


# --- vocabulary --------------------------------------------------------------


def test_build_vocab_examples():
    assert T.build_vocab(build_corpus([Post("a", "jeans")])) == {"jeans": 2}
    corpus = build_corpus([Post("a", "red red bag"), Post("b", "red coat")])
    assert T.build_vocab(corpus) == {"red": 2, "bag": 3, "coat": 4}
    vocab = T.build_vocab(corpus, min_freq=2)
    assert vocab == {"red": 2}
    ids = T.encode(["red", "coat"], vocab, 5)
    assert ids.tolist() == [2, T.UNK_ID, T.PAD_ID, T.PAD_ID, T.PAD_ID]
    with pytest.raises(ValueError):
        T.build_vocab(build_corpus([]))


def test_vocab_rebuild_identical():
    corpus = build_corpus([Post("a", "b c d c"), Post("b", "#streetstyle \U0001F60D 12 the")])
    assert T.vocab_hash(T.build_vocab(corpus)) == T.vocab_hash(T.build_vocab(corpus))
    assert set(T.build_vocab(corpus)) == {"b", "c", "d", "#streetstyle", "street", "style",
                                             "\U0001F60D", "12"}


def test_encode_truncates():
    assert T.encode(["a"] * 10, {"a": 2}, 3).tolist() == [2, 2, 2]


# --- forward -----------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        _cfg(max_len=2)
    with pytest.raises(ValueError):
        _cfg(keep_prob=0.0)
    with pytest.raises(ValueError):
        _cfg(padding="SAME")


def test_shapes_match_declared_layout():
    cfg = T.CnnConfig(vocab_size=50, epochs=0)
    shapes = T.param_shapes(cfg)
    assert shapes["embedding"] == (50, 300)
    assert shapes["conv4.weight"] == (4, 300, 128)
    assert shapes["output.weight"] == (384, 13)
    assert shapes["output.bias"] == (13,)


def test_zero_params_zero_logits():
    model = T.init_model(_cfg())
    for v in model.params.values():
        v[...] = 0
    ids = np.random.default_rng(0).integers(0, 20, size=(5, 8))
    logits, _ = T.forward(model, ids)
    assert (logits == 0).all()


def test_width_one_filter_hand_trace():
    cfg = T.CnnConfig(vocab_size=4, embed_dim=3, filter_widths=(1,), num_filters=1, max_len=3,
                      num_classes=1, keep_prob=1.0)
    model = T.init_model(cfg)
    model.params["embedding"][:] = np.array([[0, 0, 0], [0.5, 9, 9], [2.0, 1, 1], [1.5, -3, 0]])
    model.params["conv1.weight"][:] = np.array([[[1.0], [0.0], [0.0]]])
    model.params["conv1.bias"][:] = 0
    model.params["output.weight"][:] = 1.0
    model.params["output.bias"][:] = 0
    logits, cache = T.forward(model, np.array([[1, 2, 3]]))
    assert logits[0, 0] == 2.0
    assert cache.argmax[0].tolist() == [[1]]


def test_eval_forward_deterministic():
    model = T.init_model(_cfg())
    ids = np.random.default_rng(1).integers(0, 20, size=(6, 8))
    a, _ = T.forward(model, ids, "eval")
    b, _ = T.forward(model, ids, "eval")
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        T.forward(model, ids, "train")


def test_train_mode_uses_inverted_dropout():
    model = T.init_model(_cfg(keep_prob=0.5))
    ids = np.random.default_rng(2).integers(0, 20, size=(4, 8))
    mask = T.dropout_mask(np.random.default_rng(0), (4, 9), 0.5)
    assert set(np.unique(mask)) <= {0.0, 2.0}
    _, cache = T.forward(model, ids, "train", mask=mask)
    assert np.array_equal(cache.dropped, cache.hidden * mask)


# --- loss ----------------------------------------------------------------------


def test_loss_examples():
    assert T.noise_aware_loss(np.zeros((3, 13)), np.full((3, 13), 0.3)) == pytest.approx(math.log(2), abs=1e-12)
    assert T.noise_aware_loss(np.array([[10.0]]), np.array([[1.0]])) == pytest.approx(math.log1p(math.exp(-10)))
    assert T.noise_aware_loss(np.array([[10.0]]), np.array([[1.0]])) == pytest.approx(4.54e-5, abs=1e-7)
    s = 1 / (1 + math.exp(-2))
    want = 0.7 * -math.log(s) + 0.3 * -math.log(1 - s)
    got = T.noise_aware_loss(np.array([[2.0]]), np.array([[0.7]]))
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(0.7269, abs=1e-4)


def test_loss_is_finite_for_extreme_logits():
    z = np.array([[1e4, -1e4, 700.0, -700.0]])
    p = np.array([[0.0, 1.0, 0.5, 0.5]])
    assert math.isfinite(T.noise_aware_loss(z, p))
    with pytest.raises(ValueError):
        T.noise_aware_loss(np.zeros((2, 3)), np.zeros((3, 2)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=3, size=(16, 13))
    p = rng.random((16, 13))
    perm = rng.permutation(16)
    assert abs(T.noise_aware_loss(z, p) - T.noise_aware_loss(z[perm], p[perm])) < 1e-12


def test_loss_gradient_identity():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(3, 5))
    p = rng.random((3, 5))
    g = T.loss_grad_logits(z, p)
    assert np.array_equal(g, (T.sigmoid(z) - p) / 15)
    eps = 1e-6
    for i in range(3):
        for j in range(5):
            zp, zm = z.copy(), z.copy()
            zp[i, j] += eps
            zm[i, j] -= eps
            num = (T.noise_aware_loss(zp, p) - T.noise_aware_loss(zm, p)) / (2 * eps)
            assert num == pytest.approx(g[i, j], rel=1e-6, abs=1e-10)


# --- backward ------------------------------------------------------------------


def test_zero_gradient_at_fixed_point():
    model = T.init_model(_cfg(keep_prob=1.0))
    ids = np.random.default_rng(5).integers(0, 20, size=(4, 8))
    logits, cache = T.forward(model, ids, "train")
    grads = T.backward(model, cache, T.sigmoid(logits))
    assert np.abs(grads["output.weight"]).max() < 1e-12
    assert np.abs(grads["output.bias"]).max() < 1e-12


def test_max_pool_gradient_routes_to_one_position():
    cfg = T.CnnConfig(vocab_size=5, embed_dim=1, filter_widths=(1,), num_filters=1, max_len=4,
                      num_classes=1, keep_prob=1.0)
    model = T.init_model(cfg)
    model.params["embedding"][:, 0] = [0.0, 1.0, 3.0, 2.0, 0.5]
    model.params["conv1.weight"][:] = 1.0
    model.params["conv1.bias"][:] = 0.0
    model.params["output.weight"][:] = 1.0
    ids = np.array([[1, 2, 3, 4]])
    logits, cache = T.forward(model, ids, "train")
    grads = T.backward(model, cache, np.array([[0.0]]))
    g = T.sigmoid(logits)[0, 0]
    # only token id 2 at position 1 was the max; only its embedding row moves
    assert grads["embedding"][:, 0].tolist() == pytest.approx([0.0, 0.0, g, 0.0, 0.0])
    assert grads["conv1.weight"][0, 0, 0] == pytest.approx(g * 3.0)


def test_gradients_float64_finite_difference_small():
    model = T.init_model(_cfg(keep_prob=1.0))
    rng = np.random.default_rng(6)
    ids = rng.integers(0, 20, size=(2, 8))
    labels = rng.random((2, 4))
    _, cache = T.forward(model, ids, "train")
    grads = T.backward(model, cache, labels)
    name = "conv2.weight"
    flat = model.params[name].reshape(-1)
    for i in range(0, flat.size, 7):
        old = flat[i]
        flat[i] = old + 1e-5
        up = T.noise_aware_loss(T.forward(model, ids)[0], labels)
        flat[i] = old - 1e-5
        down = T.noise_aware_loss(T.forward(model, ids)[0], labels)
        flat[i] = old
        assert (up - down) / 2e-5 == pytest.approx(grads[name].reshape(-1)[i], rel=1e-5, abs=1e-11)


# --- training ------------------------------------------------------------------


def _toy(n=32, seed=0):
    # class 0 fires when token 2 is present, class 1 when token 3 is present
    rng = np.random.default_rng(seed)
    ids = rng.integers(4, 20, size=(n, 8))
    labels = np.zeros((n, 4))
    for i in range(n):
        if i % 2:
            ids[i, rng.integers(8)] = 2
            labels[i, 0] = 0.9
        if i % 3 == 0:
            ids[i, rng.integers(8)] = 3
            labels[i, 1] = 0.8
    return ids, labels


def test_one_epoch_reduces_loss():
    ids, labels = _toy()
    model = T.init_model(_cfg(batch_size=32))
    before = T.evaluate_loss(model, ids, labels)
    trained, hist = T.train(model, ids, labels)
    assert len(hist) == 1
    assert T.evaluate_loss(trained, ids, labels) < before


def test_zero_epochs_returns_initial_model():
    ids, labels = _toy()
    model = T.init_model(_cfg(epochs=0))
    trained, hist = T.train(model, ids, labels)
    assert hist == []
    for k in model.params:
        assert np.array_equal(trained.params[k], model.params[k])


def test_same_seed_same_parameters():
    ids, labels = _toy()
    cfg = _cfg(epochs=3)
    a, ha = T.train(T.init_model(cfg), ids, labels)
    b, hb = T.train(T.init_model(cfg), ids, labels)
    assert ha == hb
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


def test_sgd_and_long_training_learn_toy_task():
    ids, labels = _toy(64)
    trained, hist = T.train(T.init_model(_cfg(epochs=30, batch_size=16)), ids, labels)
    assert hist[-1] < hist[0]
    probs = T.predict_proba(trained, ids)
    assert probs[1::2, 0].mean() > probs[0::2, 0].mean()
    sgd, _ = T.train(T.init_model(_cfg(optimizer="sgd")), ids, labels)
    assert all(np.isfinite(v).all() for v in sgd.params.values())


# --- predict and checkpoints ---------------------------------------------------


def _zero_model():
    model = T.init_model(T.CnnConfig(vocab_size=10, embed_dim=4, num_filters=2, max_len=6, epochs=0))
    for v in model.params.values():
        v[...] = 0
    return model


def test_predict_boundaries():
    model = _zero_model()
    post = Post("a", "red dress")
    assert T.predict(model, post, {"red": 2}) == set(T.CLASSES)
    assert T.predict(model, post, {"red": 2}, threshold=1.1) == set()


def test_predict_threshold_monotone():
    model = T.init_model(T.CnnConfig(vocab_size=10, embed_dim=4, num_filters=2, max_len=6, init_scale=1.0))
    post = Post("a", "red dress bag")
    vocab = {"red": 2, "dress": 3, "bag": 4}
    sets = [T.predict(model, post, vocab, threshold=t) for t in np.linspace(0, 1, 21)]
    for a, b in zip(sets, sets[1:]):
        assert b <= a


def test_checkpoint_round_trip(tmp_path):
    ids, labels = _toy()
    model, _ = T.train(T.init_model(_cfg()), ids, labels)
    vocab = {"a": 2, "b": 3}
    path = tmp_path / "m.ckpt"
    T.save_checkpoint(model, vocab, path, extra={"meta": {"seed": 1}})
    back, v2, header = T.load_checkpoint(path)
    assert v2 == vocab
    assert header["meta"] == {"seed": 1}
    for k in model.params:
        assert np.array_equal(back.params[k], model.params[k].astype(np.float32).astype(np.float64))
    first = path.read_bytes()
    T.save_checkpoint(model, vocab, path, extra={"meta": {"seed": 1}})
    assert path.read_bytes() == first


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.ckpt"
    T.save_checkpoint(_zero_model(), {"a": 2}, path)
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(T.CheckpointError, match="not a checkpoint"):
        T.load_checkpoint(bad)
    bad.write_bytes(bytes(raw).replace(b'"format_version": 1', b'"format_version": 9'))
    with pytest.raises(T.CheckpointError, match="version"):
        T.load_checkpoint(bad)
    bad.write_bytes(bytes(raw[:-4]))
    with pytest.raises(T.CheckpointError, match="truncated"):
        T.load_checkpoint(bad)
    bad.write_bytes(bytes(raw) + b"x")
    with pytest.raises(T.CheckpointError, match="trailing"):
        T.load_checkpoint(bad)
