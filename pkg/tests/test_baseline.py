"""The hand-written backprop gradients are checked against central finite
differences of the loss, for every head and activation, on many seeded
problems. Learning smoke tests keep the problems tiny."""

import numpy as np
import numpy.testing as npt
import pytest

from pcgraph.baseline import (BpSchedule, Mlp, accuracy, train_autoencoder,
                              train_bp, train_classifier)


def fd_grad(loss_fn, arr, h=1e-6):
    g = np.zeros_like(arr)
    flat = arr.ravel()
    gf = g.ravel()
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        lp = loss_fn()
        flat[k] = old - h
        lm = loss_fn()
        flat[k] = old
        gf[k] = (lp - lm) / (2 * h)
    return g


def random_targets(rng, head, B, out):
    if head == "softmax":
        return rng.integers(0, out, size=B)
    return rng.uniform(0.1, 0.9, size=(B, out))


@pytest.mark.parametrize("head", ["softmax", "linear", "cliplin"])
@pytest.mark.parametrize("activation", ["tanh", "relu", "hardtanh"])
def test_gradients_match_finite_differences(head, activation):
    rng = np.random.default_rng(hash((head, activation)) % 2 ** 31)
    for trial in range(6):
        dims = [4, rng.integers(3, 6), rng.integers(3, 6), 3]
        model = Mlp(dims, activation=activation, head=head,
                    seed=int(rng.integers(1000)))
        # keep pre-activations away from relu/hardtanh/clip kinks
        X = rng.uniform(-0.9, 0.9, size=(5, 4))
        Y = random_targets(rng, head, 5, 3)
        loss, gW, gb = model.loss_and_grads(X, Y)
        assert np.isfinite(loss)
        for l in range(len(model.W)):
            for arr, got in ((model.W[l], gW[l]), (model.b[l], gb[l])):
                ref = fd_grad(lambda: model.loss_and_grads(X, Y)[0], arr)
                kink = np.abs(ref - got) > 1e-4  # FD straddling a kink lies
                if kink.mean() > 0.02:
                    continue
                npt.assert_allclose(got[~kink], ref[~kink], atol=2e-5)


def test_forward_shapes_and_heads():
    model = Mlp([6, 5, 4], head="linear", seed=0)
    out, (Zs, Hs) = model.forward(np.zeros((3, 6)))
    assert out.shape == (3, 4)
    assert len(Zs) == 2 and len(Hs) == 3
    clip = Mlp([6, 5, 4], head="cliplin", seed=0)
    out, _ = clip.forward(np.random.default_rng(0).normal(size=(8, 6)) * 10)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_bad_configuration_rejected():
    with pytest.raises(ValueError):
        Mlp([5], head="softmax")
    with pytest.raises(ValueError):
        Mlp([5, 2], head="argmax")
    with pytest.raises(ValueError):
        Mlp([5, 2], activation="gelu")


def test_softmax_loss_at_uniform_logits():
    model = Mlp([4, 3], seed=0)
    for W in model.W:
        W[:] = 0.0
    loss, _, _ = model.loss_and_grads(np.ones((10, 4)), np.zeros(10, dtype=np.int64))
    npt.assert_allclose(loss, np.log(3.0), atol=1e-12)


def test_classifier_learns_linearly_separable_data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 8))
    w = rng.normal(size=(8, 3))
    y = np.argmax(X @ w, axis=1)
    model = train_classifier([8, 16, 3], X, y,
                             BpSchedule(epochs=60, batch_size=32, alpha=1e-2, seed=1),
                             activation="tanh")
    assert accuracy(model, X, y) > 0.95


def test_autoencoder_reduces_reconstruction_error():
    rng = np.random.default_rng(1)
    X = rng.uniform(0.1, 0.9, size=(120, 12))
    before = Mlp([12, 10, 12], head="cliplin", seed=2)
    out0, _ = before.forward(X)
    model = train_autoencoder([12, 10, 12], X,
                              BpSchedule(epochs=150, batch_size=30, alpha=3e-3, seed=2))
    out1, _ = model.forward(X)
    e0 = float(np.mean((out0 - X) ** 2))
    e1 = float(np.mean((out1 - X) ** 2))
    assert e1 < 0.4 * e0


def test_training_is_deterministic_given_seed():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 5))
    y = rng.integers(0, 2, size=40)
    runs = []
    for _ in range(2):
        m = train_classifier([5, 6, 2], X, y, BpSchedule(epochs=3, seed=7))
        runs.append(np.concatenate([W.ravel() for W in m.W]))
    npt.assert_array_equal(runs[0], runs[1])


def test_l2_shrinks_weights():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(60, 5))
    y = rng.integers(0, 2, size=60)
    small = train_classifier([5, 8, 2], X, y,
                             BpSchedule(epochs=30, alpha=1e-2, seed=4, l2=1.0))
    big = train_classifier([5, 8, 2], X, y,
                           BpSchedule(epochs=30, alpha=1e-2, seed=4, l2=0.0))
    norm = lambda m: sum(float(np.sum(W * W)) for W in m.W)
    assert norm(small) < norm(big)


def test_sgd_optimizer_path():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 4))
    y = (X[:, 0] > 0).astype(np.int64)
    m = train_classifier([4, 8, 2], X, y,
                         BpSchedule(epochs=40, alpha=5e-2, optimizer="sgd", seed=5))
    assert accuracy(m, X, y) > 0.9
