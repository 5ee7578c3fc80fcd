import math

import numpy as np
import pytest
import scipy.sparse as sp

from dpaug.corpus import LabelVocab, Origin, TextRecord
from dpaug.text_model import (
    LinearModel,
    TrainConfig,
    feature_index,
    featurize,
    featurize_many,
    init_model,
    loss_and_grad,
    predict_proba,
    softmax,
    train,
    train_matrix,
)

AB = LabelVocab(["a", "b"])


def toy_records(n_per_class=10):
    recs = []
    for i in range(n_per_class):
        recs.append(TextRecord(f"a{i}", f"alpha{i % 3} common word{i}", AB[0], Origin.PUBLIC))
        recs.append(TextRecord(f"b{i}", f"beta{i % 3} common word{i}", AB[1], Origin.PUBLIC))
    return recs


def test_empty_text_is_zero_vector():
    v = featurize("", 64)
    assert v.nnz == 0 and not v.to_dense().any()


def test_featurize_deterministic():
    a, b = featurize("the quick brown fox", 1024), featurize("the quick brown fox", 1024)
    assert np.array_equal(a.indices, b.indices) and np.array_equal(a.values, b.values)


def test_two_tokens_give_at_most_three_buckets():
    v = featurize("a b", 2**18)
    expected = {feature_index("u:a", 2**18), feature_index("u:b", 2**18), feature_index("b:a b", 2**18)}
    assert v.nnz == len(expected) <= 3
    assert set(v.indices.tolist()) == expected
    np.testing.assert_allclose(v.values, 1 / math.sqrt(2))


def test_collisions_accumulate():
    # with a single bucket every feature collides: 3 unigrams + 2 bigrams
    v = featurize("x y z", 1)
    assert v.nnz == 1
    assert v.values[0] == pytest.approx(5 / math.sqrt(3))


def test_featurize_many_matches_single():
    texts = ["a b c", "", "b b"]
    X = featurize_many(texts, 32).toarray()
    for row, t in zip(X, texts):
        np.testing.assert_array_equal(row, featurize(t, 32).to_dense())


def test_softmax_of_zeros_is_uniform():
    np.testing.assert_allclose(softmax(np.zeros(4)), 0.25)


def test_softmax_bias_ten_zero():
    m = LinearModel(np.zeros((2, 8)), np.array([10.0, 0.0]), AB)
    p = predict_proba(m, featurize("anything at all", 8))
    expected = 1 / (1 + math.exp(-10))
    assert p[0] == pytest.approx(expected, abs=1e-12)
    assert p[0] == pytest.approx(0.99995, abs=1e-5)
    assert p[1] == pytest.approx(1 - expected, abs=1e-12)


def test_softmax_shift_invariance_and_extremes():
    s = np.array([[1000.0, 999.0, -1000.0]])
    p = softmax(s)
    np.testing.assert_allclose(p, softmax(s - 1000.0))
    assert np.isfinite(p).all() and p.sum() == pytest.approx(1.0)


def test_predict_proba_dimension_mismatch():
    m = LinearModel(np.zeros((2, 8)), np.zeros(2), AB)
    with pytest.raises(ValueError):
        predict_proba(m, featurize("x", 16))
    with pytest.raises(ValueError):
        m.predict_proba_matrix(sp.csr_matrix((1, 16)))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    k, d, n = 5, 50, 12
    X = sp.random(n, d, density=0.3, random_state=1, format="csr")
    y = rng.integers(k, size=n)
    W = rng.normal(scale=0.3, size=(k, d))
    b = rng.normal(scale=0.3, size=k)
    l2 = 0.01
    _, gW, gb = loss_and_grad(W, b, X, y, l2)
    h = 1e-6
    for i, j in [(0, 0), (1, 7), (4, 49), (2, 20)]:
        Wp, Wm = W.copy(), W.copy()
        Wp[i, j] += h
        Wm[i, j] -= h
        num = (loss_and_grad(Wp, b, X, y, l2)[0] - loss_and_grad(Wm, b, X, y, l2)[0]) / (2 * h)
        assert gW[i, j] == pytest.approx(num, abs=1e-7)
    for i in range(k):
        bp, bm = b.copy(), b.copy()
        bp[i] += h
        bm[i] -= h
        num = (loss_and_grad(W, bp, X, y, l2)[0] - loss_and_grad(W, bm, X, y, l2)[0]) / (2 * h)
        assert gb[i] == pytest.approx(num, abs=1e-7)


def test_separable_set_fits_perfectly():
    recs = toy_records()
    model = train(recs, AB, TrainConfig(dim=256, epochs=50))
    preds = model.predict_texts([r.text for r in recs])
    assert (preds == [r.label.index for r in recs]).all()
    assert model.loss_history[-1] < model.loss_history[0]


def test_zero_epochs_is_initialization():
    cfg = TrainConfig(dim=64, epochs=0)
    model = train(toy_records(), AB, cfg)
    init = init_model(AB, cfg)
    assert np.array_equal(model.weights, init.weights) and np.array_equal(model.bias, init.bias)


def test_duplicated_dataset_same_decision_function():
    # mean loss: duplicating every record leaves the full-batch gradient unchanged
    recs = toy_records()
    cfg = TrainConfig(dim=128, epochs=25, batch_size=None, l2=1e-3)
    single = train(recs, AB, cfg)
    double = train(recs + recs, AB, cfg)
    X = featurize_many([r.text for r in recs], 128)
    np.testing.assert_allclose(single.scores(X), double.scores(X), atol=1e-6)


def test_single_class_rejected():
    recs = [r for r in toy_records() if r.label.index == 0]
    with pytest.raises(ValueError, match="single class"):
        train(recs, AB, TrainConfig(dim=32))


def test_training_deterministic():
    cfg = TrainConfig(dim=128, epochs=5, batch_size=4, seed=3)
    a = train(toy_records(), AB, cfg)
    b = train(toy_records(), AB, cfg)
    assert a.to_bytes() == b.to_bytes()


def test_serialization_roundtrip(tmp_path):
    model = train(toy_records(), AB, TrainConfig(dim=64, epochs=3))
    model.save(tmp_path / "m.lm")
    back = LinearModel.load(tmp_path / "m.lm")
    assert back.to_bytes() == model.to_bytes()
    assert back.vocab == AB and back.fingerprint == model.fingerprint
    with pytest.raises(ValueError):
        LinearModel.from_bytes(b"garbage")


def test_outputs_are_distributions():
    model = train(toy_records(), AB, TrainConfig(dim=64, epochs=3))
    P = model.predict_proba_texts(["alpha0", "", "beta2 common", "unseen"])
    assert ((P >= 0) & (P <= 1)).all()
    np.testing.assert_allclose(P.sum(axis=1), 1.0)


def test_train_matrix_accepts_dense():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    model = train_matrix(X, np.array([0, 1]), AB, TrainConfig(dim=2, epochs=10, batch_size=None))
    assert model.predict_proba_matrix(sp.csr_matrix(X)).argmax(axis=1).tolist() == [0, 1]
