import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgesim.nn import (Adam, Dense, LstmLayer, load_checkpoint, mse,
                        save_checkpoint)

H = 1e-5


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a) + np.abs(b)))


def fd_grad(loss_fn, arr):
    """Central finite differences of a scalar function wrt one array."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + H
        up = loss_fn()
        arr[idx] = orig - H
        down = loss_fn()
        arr[idx] = orig
        g[idx] = (up - down) / (2 * H)
    return g


# -- dense -------------------------------------------------------------------

def test_dense_zero_weights_zero_output():
    layer = Dense(3, 2)
    layer.W[...] = 0.0
    y, _ = layer.forward(np.ones((4, 3)))
    assert np.all(y == 0.0)


def test_dense_relu_clamps_negatives():
    layer = Dense(2, 2, relu=True)
    layer.W[...] = np.eye(2)
    layer.b[...] = 0.0
    y, _ = layer.forward(np.array([[-1.0, 3.0]]))
    assert y.tolist() == [[0.0, 3.0]]


def test_dense_matches_naive_matmul(rng):
    layer = Dense(4, 4, rng=rng)
    x = rng.normal(size=(3, 4))
    y, _ = layer.forward(x)
    naive = np.zeros((3, 4))
    for i in range(3):
        for j in range(4):
            for k in range(4):
                naive[i, j] += x[i, k] * layer.W[k, j]
            naive[i, j] += layer.b[j]
    np.testing.assert_allclose(y, naive, rtol=1e-12)


def test_dense_forward_deterministic(rng):
    layer = Dense(5, 3, rng=rng)
    x = rng.normal(size=(2, 5))
    y1, _ = layer.forward(x)
    y2, _ = layer.forward(x)
    assert np.array_equal(y1, y2)


def test_dense_rejects_nonfinite():
    layer = Dense(2, 2)
    with pytest.raises(FloatingPointError):
        layer.forward(np.array([[np.nan, 0.0]]))


@pytest.mark.parametrize("relu", [False, True])
def test_dense_gradients(relu, rng):
    layer = Dense(4, 3, relu=relu, rng=rng)
    x = rng.normal(size=(5, 4))
    r = rng.normal(size=(5, 3))

    def loss():
        y, _ = layer.forward(x)
        return float(np.sum(y * r))

    y, cache = layer.forward(x)
    dx, (dW, db) = layer.backward(r, cache)
    assert rel_err(dW, fd_grad(loss, layer.W)) < 1e-6
    assert rel_err(db, fd_grad(loss, layer.b)) < 1e-6
    assert rel_err(dx, fd_grad(loss, x)) < 1e-6


# -- lstm --------------------------------------------------------------------

def test_lstm_single_step_gradients(rng):
    layer = LstmLayer(3, 4, rng=rng)
    x = rng.normal(size=(1, 2, 3))
    r = rng.normal(size=(2, 4))

    def loss():
        h, _ = layer.forward(x)
        return float(np.sum(h * r))

    h, caches = layer.forward(x)
    dx, (dWx, dWh, db) = layer.backward(r, caches)
    assert rel_err(dWx, fd_grad(loss, layer.Wx)) < 1e-6
    assert rel_err(dWh, fd_grad(loss, layer.Wh)) < 1e-6
    assert rel_err(db, fd_grad(loss, layer.b)) < 1e-6
    assert rel_err(dx, fd_grad(loss, x)) < 1e-6


def test_lstm_sequence_gradients(rng):
    layer = LstmLayer(2, 3, rng=rng)
    x = rng.normal(size=(6, 2, 2))
    r = rng.normal(size=(2, 3))

    def loss():
        h, _ = layer.forward(x)
        return float(np.sum(h * r))

    h, caches = layer.forward(x)
    dx, (dWx, dWh, db) = layer.backward(r, caches)
    assert rel_err(dWx, fd_grad(loss, layer.Wx)) < 1e-6
    assert rel_err(dWh, fd_grad(loss, layer.Wh)) < 1e-6
    assert rel_err(db, fd_grad(loss, layer.b)) < 1e-6
    assert rel_err(dx, fd_grad(loss, x)) < 1e-6


def test_lstm_forward_deterministic(rng):
    layer = LstmLayer(3, 5, rng=rng)
    x = rng.normal(size=(4, 2, 3))
    h1, _ = layer.forward(x)
    h2, _ = layer.forward(x)
    assert np.array_equal(h1, h2)


# -- loss --------------------------------------------------------------------

def test_mse_zero_at_minimum():
    pred = np.array([[1.0, 2.0], [3.0, 4.0]])
    loss, grad = mse(pred, pred.copy())
    assert loss == 0.0
    assert np.all(grad == 0.0)


def test_mse_gradient(rng):
    pred = rng.normal(size=(3, 2))
    target = rng.normal(size=(3, 2))

    def loss():
        return mse(pred, target)[0]

    _, grad = mse(pred, target)
    assert rel_err(grad, fd_grad(loss, pred)) < 1e-6


# -- adam --------------------------------------------------------------------

def test_adam_zero_gradient_no_move():
    p = np.ones((2, 2))
    opt = Adam([p], lr=0.1)
    opt.step([np.zeros((2, 2))])
    assert np.all(p == 1.0)


def test_adam_first_step_closed_form():
    p = np.zeros(3)
    g = np.array([1.0, -2.0, 0.5])
    lr = 0.01
    opt = Adam([p], lr=lr)
    opt.step([g.copy()])
    # after bias correction the first step is -lr*g/(|g| + eps)
    expected = -lr * g / (np.abs(g) + opt.eps)
    np.testing.assert_allclose(p, expected, rtol=1e-9)


def test_adam_constant_gradient_asymptote():
    p = np.zeros(2)
    g = np.array([3.0, -0.2])
    lr = 0.05
    opt = Adam([p], lr=lr)
    before = p.copy()
    for _ in range(3000):
        before = p.copy()
        opt.step([g.copy()])
    step = p - before
    np.testing.assert_allclose(step, -lr * np.sign(g), rtol=1e-3)


def test_adam_shape_mismatch_rejected():
    p = np.zeros((2, 2))
    opt = Adam([p])
    with pytest.raises(ValueError):
        opt.step([np.zeros(3)])
    with pytest.raises(ValueError):
        opt.step([])


# -- randomized gradient sweep (hypothesis) ----------------------------------

@settings(max_examples=15, deadline=None)
@given(n_in=st.integers(1, 6), n_out=st.integers(1, 5),
       batch=st.integers(1, 4), seed=st.integers(0, 10 ** 6),
       relu=st.booleans())
def test_dense_gradients_random_shapes(n_in, n_out, batch, seed, relu):
    rng = np.random.default_rng(seed)
    layer = Dense(n_in, n_out, relu=relu, rng=rng)
    x = rng.normal(size=(batch, n_in))
    r = rng.normal(size=(batch, n_out))

    def loss():
        y, _ = layer.forward(x)
        return float(np.sum(y * r))

    _, cache = layer.forward(x)
    dx, (dW, db) = layer.backward(r, cache)
    assert rel_err(dW, fd_grad(loss, layer.W)) < 1e-4
    assert rel_err(dx, fd_grad(loss, x)) < 1e-4


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    arrays = {"W": rng.normal(size=(3, 4)), "b": rng.normal(size=4)}
    path = str(tmp_path / "ckpt.json")
    save_checkpoint(path, arrays, meta={"kind": "test"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"kind": "test"}
    for k in arrays:
        np.testing.assert_array_equal(arrays[k], loaded[k])


def test_checkpoint_version_guard(tmp_path):
    import json
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"version": 99, "arrays": {}}))
    with pytest.raises(ValueError):
        load_checkpoint(str(path))
