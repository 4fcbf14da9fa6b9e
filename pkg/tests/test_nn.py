import numpy as np
import pytest

from encp.nn import (
    AdamState,
    MlpParams,
    adam_init,
    adam_step,
    forward,
    forward_backward,
    init_mlp,
    load_checkpoint,
    save_checkpoint,
)
from encp.rng import stream


def test_zero_weights_identity_activation_broadcasts_bias():
    params = MlpParams([(np.zeros((3, 2)), np.array([1.0, -2.0, 0.5]))], "identity")
    out = forward(params, np.zeros((4, 2)))
    assert np.array_equal(out, np.tile([1.0, -2.0, 0.5], (4, 1)))


def test_single_linear_layer_exact():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((3, 5))
    b = rng.standard_normal(3)
    x = rng.standard_normal((7, 5))
    params = MlpParams([(w, b)], "identity")
    assert np.array_equal(forward(params, x), x @ w.T + b)


@pytest.mark.parametrize("activation", ["tanh", "elu", "identity"])
def test_gradients_match_central_finite_differences(activation):
    rng = np.random.default_rng(1)
    params = init_mlp([4, 9, 7, 3], activation, rng)
    x = rng.standard_normal((6, 4))
    up = rng.standard_normal((6, 3))
    out, grads, input_grad = forward_backward(params, x, up)

    def loss():
        return float((forward(params, x) * up).sum())

    h = 1e-5
    checked = 0
    for li, (w, b) in enumerate(params.layers):
        for arr, g in ((w, grads[li][0]), (b, grads[li][1])):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for idx in rng.choice(flat.size, size=min(8, flat.size), replace=False):
                old = flat[idx]
                flat[idx] = old + h
                lp = loss()
                flat[idx] = old - h
                lm = loss()
                flat[idx] = old
                fd = (lp - lm) / (2 * h)
                assert abs(fd - gflat[idx]) <= 1e-4 * max(abs(fd), 1e-6)
                checked += 1
    assert checked >= 40
    # input gradients
    flat = x.reshape(-1)
    gflat = input_grad.reshape(-1)
    for idx in rng.choice(flat.size, size=10, replace=False):
        old = flat[idx]
        flat[idx] = old + h
        lp = loss()
        flat[idx] = old - h
        lm = loss()
        flat[idx] = old
        fd = (lp - lm) / (2 * h)
        assert abs(fd - gflat[idx]) <= 1e-4 * max(abs(fd), 1e-6)


def test_forward_backward_shape_errors():
    params = init_mlp([3, 4, 2], "tanh", np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward_backward(params, np.zeros((5, 7)), np.zeros((5, 2)))
    with pytest.raises(ValueError):
        forward_backward(params, np.zeros((5, 3)), np.zeros((5, 3)))


def test_adam_zero_gradient_keeps_parameters():
    params = init_mlp([2, 3], "identity", np.random.default_rng(2))
    state = adam_init(params, lr=0.05)
    zero = [(np.zeros((3, 2)), np.zeros(3))]
    new_params, _ = adam_step(state, params, zero)
    for (w0, b0), (w1, b1) in zip(params.layers, new_params.layers):
        assert np.array_equal(w0, w1)
        assert np.array_equal(b0, b1)


def test_adam_first_step_is_bias_corrected_sign_step():
    params = MlpParams([(np.zeros((1, 1)), np.zeros(1))], "identity")
    state = adam_init(params, lr=0.01)
    grads = [(np.array([[3.7]]), np.array([-0.2]))]
    new_params, _ = adam_step(state, params, grads)
    # first update is -lr * g / (|g| + eps) ~ -lr * sign(g)
    assert new_params.layers[0][0][0, 0] == pytest.approx(-0.01, rel=1e-6)
    assert new_params.layers[0][1][0] == pytest.approx(0.01, rel=1e-6)


def test_adam_ten_step_trajectory_matches_scalar_reference():
    # quadratic objective 0.5 * c * x^2, gradient c * x
    c, lr = 0.3, 0.1
    params = MlpParams([(np.array([[1.0]]), np.zeros(1))], "identity")
    state = adam_init(params, lr=lr)
    for _ in range(10):
        g = c * params.layers[0][0]
        params, state = adam_step(state, params, [(g, np.zeros(1))])

    x, m, v = 1.0, 0.0, 0.0
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, 11):
        g = c * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    assert abs(params.layers[0][0][0, 0] - x) < 1e-12


def test_training_toy_loss_decreases_on_most_seeds():
    wins = 0
    for seed in range(10):
        rng = stream(seed, "toy")
        xs = rng.uniform(-1, 1, size=(128, 1))
        ys = np.sin(3 * xs)
        params = init_mlp([1, 16, 1], "tanh", rng)
        state = adam_init(params, lr=1e-2)

        def mse(p):
            return float(((forward(p, xs) - ys) ** 2).mean())

        first = mse(params)
        for _ in range(200):
            out, grads, _ = forward_backward(params, xs, 2 * (forward(params, xs) - ys) / len(xs))
            params, state = adam_step(state, params, grads)
        if mse(params) < first:
            wins += 1
    assert wins >= 9


def test_bitwise_determinism():
    a = init_mlp([3, 8, 2], "tanh", stream(7, "init"))
    b = init_mlp([3, 8, 2], "tanh", stream(7, "init"))
    x = stream(8, "x").standard_normal((5, 3))
    assert np.array_equal(forward(a, x), forward(b, x))


def test_checkpoint_roundtrip(tmp_path):
    path = tmp_path / "ck.bin"
    arrays = {"w": np.arange(12.0).reshape(3, 4), "b": np.array([1.5, -2.5])}
    save_checkpoint(path, {"kind": "t", "note": "x"}, arrays)
    header, loaded = load_checkpoint(path)
    assert header["kind"] == "t"
    assert np.array_equal(loaded["w"], arrays["w"])
    assert np.array_equal(loaded["b"], arrays["b"])


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(path)
