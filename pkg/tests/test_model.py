import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eeopt.errors import ShapeError, ValidationError
from eeopt.linalg import softmax_rows
from eeopt.model import (
    AttentionLayer,
    ModelShape,
    attention_loss,
    attention_matrix,
    flatten,
    forward,
    init_params,
    model_objective,
    mse_mae,
    n_params,
    patch_embed_img,
    predict,
    representation,
    tokenize_ts,
    unflatten,
)
from eeopt.objective import fd_grad
from eeopt.optimizer import EEOConfig, run
from oracles import naive_matmul


def small_data(seed=0, B=6, D=3, L=8, H=2):
    gen = np.random.default_rng(seed)
    return gen.standard_normal((B, D, L)), gen.standard_normal((B, D, H))


def test_tokenize_identity_and_layout():
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    np.testing.assert_array_equal(tokenize_ts(x, 4, np.eye(4)), x)
    x = np.array([[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]])
    Z = tokenize_ts(x, 2, np.eye(2))
    np.testing.assert_array_equal(Z, [[1, 2], [3, 4], [5, 6], [7, 8]])


def test_tokenize_round_trip_and_errors():
    x = np.random.default_rng(1).standard_normal((3, 12))
    Z = tokenize_ts(x, 4, np.eye(4))
    assert Z.reshape(3, 12).tobytes() == x.tobytes()
    with pytest.raises(ShapeError, match="pad"):
        tokenize_ts(x, 5, np.eye(5))


def test_patch_embed_layout_and_round_trip():
    img = np.arange(4.0).reshape(1, 2, 2)
    np.testing.assert_array_equal(patch_embed_img(img, 2, np.eye(4)), [[0, 1, 2, 3]])
    img = np.arange(16.0).reshape(1, 4, 4)
    T = patch_embed_img(img, 2, np.eye(4))
    np.testing.assert_array_equal(T, [[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]])
    img = np.random.default_rng(2).standard_normal((3, 6, 4))
    T = patch_embed_img(img, 2, np.eye(12))
    back = T.reshape(3, 2, 3, 2, 2).transpose(2, 0, 3, 1, 4).reshape(3, 6, 4)
    assert back.tobytes() == img.tobytes()
    with pytest.raises(ShapeError):
        patch_embed_img(img, 4, np.eye(48))


def test_attention_matrix_examples():
    W = np.random.default_rng(3).standard_normal((4, 2))
    np.testing.assert_allclose(attention_matrix(np.zeros((5, 4)), W, W), np.full((5, 5), 0.2))
    np.testing.assert_array_equal(attention_matrix(np.ones((1, 4)), W, W), [[1.0]])
    gen = np.random.default_rng(4)
    Z, Wq, Wk = gen.standard_normal((5, 3)), gen.standard_normal((3, 4)), gen.standard_normal((3, 4))
    scores = naive_matmul((Z @ Wq).tolist(), (Z @ Wk).T.tolist()) / 2.0
    np.testing.assert_allclose(attention_matrix(Z, Wq, Wk, d_m=4), softmax_rows(scores), rtol=1e-12)
    with pytest.raises(ShapeError):
        attention_matrix(Z, Wq, gen.standard_normal((3, 5)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 10**6))
def test_attention_rows_stochastic(N, d, seed):
    gen = np.random.default_rng(seed)
    Z = 3 * gen.standard_normal((N, d))
    A = attention_matrix(Z, gen.standard_normal((d, 2)), gen.standard_normal((d, 2)))
    assert np.all(np.abs(A.sum(axis=1) - 1) <= 1e-12)


def test_forward_residual_and_composition():
    gen = np.random.default_rng(5)
    d, d_out = 4, 3
    Z = gen.standard_normal((6, d))
    layer = AttentionLayer(gen.standard_normal((d, 2)), gen.standard_normal((d, 2)), np.zeros((d, d)), gen.standard_normal((d, d_out)))
    assert forward(Z, layer).tobytes() == (Z @ layer.W_o).tobytes()
    layer.W_v = gen.standard_normal((d, d))
    A = attention_matrix(Z, layer.W_q, layer.W_k)
    expect = naive_matmul((Z + naive_matmul(naive_matmul(A.tolist(), Z.tolist()).tolist(), layer.W_v.tolist())).tolist(), layer.W_o.tolist())
    np.testing.assert_allclose(forward(Z, layer), expect, rtol=1e-12)
    z = gen.standard_normal((1, d))
    eye = AttentionLayer(np.eye(d), np.eye(d), np.eye(d), np.eye(d))
    np.testing.assert_allclose(forward(z, eye), z + z @ np.eye(d))


def test_attention_loss_and_metrics():
    assert attention_loss(np.eye(2), np.eye(2)) == 0.0
    assert attention_loss(np.full((2, 2), 0.5), np.eye(2)) == 0.5
    gen = np.random.default_rng(6)
    A, B = gen.random((3, 4)), gen.random((3, 4))
    assert attention_loss(A, B) == pytest.approx(0.5 * sum((a - b) ** 2 for a, b in zip(A.ravel(), B.ravel())), rel=1e-13)
    assert mse_mae(A, A) == (0.0, 0.0)
    assert mse_mae(A + 2, A) == pytest.approx((4.0, 2.0))
    mse, mae = mse_mae(A, B)
    assert mse == pytest.approx(np.sum((A - B) ** 2) / 12, rel=1e-13)
    assert mae == pytest.approx(np.sum(np.abs(A - B)) / 12, rel=1e-13)
    with pytest.raises(ShapeError):
        mse_mae(A, B.T)


def test_shape_validation():
    assert ModelShape(D=3, L=24, H=4).N == 3
    assert ModelShape(D=3, L=24, H=4, patch_len=6).N == 12
    with pytest.raises(ShapeError):
        ModelShape(D=3, L=24, H=4, patch_len=5)
    with pytest.raises(ValidationError):
        ModelShape(D=3, L=24, H=4, layers=5)


@pytest.mark.parametrize("layers,img", [(1, False), (3, True)])
def test_flatten_round_trip(layers, img):
    shape = ModelShape(D=2, L=8, H=3, patch_len=4, d=5, d_m=3, d_out=2, layers=layers,
                       img_channels=2 if img else None, img_patch=2 if img else None)
    p = init_params(shape, 7)
    v = flatten(p)
    assert len(v) == n_params(shape)
    assert flatten(unflatten(v, shape)).tobytes() == v.tobytes()
    assert np.all(np.abs(v) <= 1 / np.sqrt(5))


def test_predict_matches_per_window_forward():
    shape = ModelShape(D=3, L=8, H=2, patch_len=4, d=5, d_m=3, d_out=2, layers=2)
    p = init_params(shape, 1)
    X, _ = small_data()
    out = predict(p, shape, X)
    for b in range(len(X)):
        Z = tokenize_ts(X[b], 4, p.phi_ts)
        enc = forward(Z, p)
        np.testing.assert_allclose(out[b], (enc.reshape(-1) @ p.head).reshape(3, 2), rtol=1e-12)
    R, A = representation(p, shape, X)
    assert R.shape == (len(X) * shape.N, 2) and A.shape == (shape.N, shape.N)


def test_forecast_zero_params_zero_targets():
    shape = ModelShape(D=2, L=4, H=1, d=3, d_m=3, d_out=3)
    X, _ = small_data(B=1, D=2, L=4, H=1)
    obj, _ = model_objective(X, np.zeros((1, 2, 1)), shape, "forecast_mse")
    assert obj.loss(np.zeros(obj.dim)) == 0.0


def test_attention_align_self_target():
    shape = ModelShape(D=3, L=8, H=2, d=6, d_m=4)
    X, Y = small_data()
    obj, w0 = model_objective(X, Y, shape, "attention_align", seed=0)
    obj.A_star = obj.attention(w0)
    assert obj.loss(w0) == 0.0
    assert np.all(obj.grad(w0) == 0.0)


@pytest.mark.parametrize("task", ["forecast_mse", "attention_align"])
@pytest.mark.parametrize("layers,patch", [(1, None), (2, 4)])
def test_gradients_match_finite_differences(task, layers, patch):
    shape = ModelShape(D=3, L=8, H=2, patch_len=patch, d=5, d_m=4, d_out=3, layers=layers)
    X, Y = small_data()
    obj, _ = model_objective(X, Y, shape, task, seed=1)
    for seed in range(10):
        w = np.random.default_rng(seed).uniform(-0.6, 0.6, obj.dim)
        g = obj.grad(w)
        assert np.linalg.norm(fd_grad(obj, w) - g) <= 1e-4 * np.linalg.norm(g)


def test_forecast_batches():
    shape = ModelShape(D=3, L=8, H=2, d=5, d_m=4, d_out=3)
    X, Y = small_data(B=10)
    obj, w = model_objective(X, Y, shape, "forecast_mse", batch_size=4)
    b = obj.sample_batch(0, 3)
    assert len(b) == 4
    assert obj.loss(w, b) == pytest.approx(obj.__class__(X[b], Y[b], shape).loss(w), rel=1e-14)


def test_unknown_task():
    shape = ModelShape(D=3, L=8, H=2)
    X, Y = small_data()
    with pytest.raises(ValidationError):
        model_objective(X, Y, shape, "segment")


def test_attention_align_descends_with_eeo():
    shape = ModelShape(D=3, L=8, H=2, d=8, d_m=8)
    X, Y = small_data(B=12)
    obj, w0 = model_objective(X, Y, shape, "attention_align", seed=2)
    m, _ = run(obj, w0, EEOConfig(eta=0.1, max_steps=50))
    assert obj.loss(m) < obj.loss(w0)
