import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surropt.mlp import (
    Layer,
    MlpNetwork,
    NetworkError,
    TrainConfig,
    load_weights,
    make_network,
    partial_apply,
    save_weights,
    train_adam,
    widen,
)


def fd_jacobian(net, x, h=1e-6):
    n = net.input_dim
    out = np.zeros((net.output_dim, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        out[:, j] = (net.forward(x + e) - net.forward(x - e)) / (2 * h)
    return out


def fd_weighted_hessian(net, x, w, h=1e-6):
    n = net.input_dim
    out = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        gp = w @ net.jacobian(x + e)
        gm = w @ net.jacobian(x - e)
        out[:, j] = (gp - gm) / (2 * h)
    return 0.5 * (out + out.T)


def test_forward_identity_layer():
    net = MlpNetwork((Layer(np.eye(2), np.zeros(2), "identity"),))
    assert net.forward([3.0, -1.0]) == pytest.approx([3.0, -1.0])


def test_forward_scalar_tanh():
    net = MlpNetwork((Layer(np.array([[1.0]]), np.zeros(1), "tanh"),))
    assert net.forward([1.0])[0] == pytest.approx(0.7615941559557649, abs=1e-14)


def test_forward_zero_net():
    net = MlpNetwork((
        Layer(np.zeros((3, 2)), np.zeros(3), "tanh"),
        Layer(np.zeros((2, 3)), np.zeros(2), "tanh"),
    ))
    for x in ([0.0, 0.0], [5.0, -9.0]):
        assert net.forward(x) == pytest.approx([0.0, 0.0])


def test_jacobian_identity_activation_is_weight():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 4))
    net = MlpNetwork((Layer(w, rng.normal(size=3), "identity"),))
    assert net.jacobian(rng.normal(size=4)) == pytest.approx(w)


def test_jacobian_tanh_at_zero_is_weight():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(2, 2))
    net = MlpNetwork((Layer(w, np.zeros(2), "tanh"),))
    assert net.jacobian(np.zeros(2)) == pytest.approx(w)


def test_jacobian_matches_fd_two_layers():
    net = make_network([4, 7, 3], seed=2)
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.uniform(-1, 1, size=4)
        assert net.jacobian(x) == pytest.approx(fd_jacobian(net, x), rel=1e-6, abs=1e-8)


def test_weighted_hessian_affine_is_zero():
    rng = np.random.default_rng(4)
    net = MlpNetwork((
        Layer(rng.normal(size=(3, 2)), rng.normal(size=3), "identity"),
        Layer(rng.normal(size=(2, 3)), rng.normal(size=2), "identity"),
    ))
    h = net.weighted_hessian(rng.normal(size=2), [1.0, -2.0])
    assert h == pytest.approx(np.zeros((2, 2)), abs=1e-14)


def test_weighted_hessian_scalar_tanh_zero():
    net = MlpNetwork((Layer(np.array([[1.0]]), np.zeros(1), "tanh"),))
    assert net.weighted_hessian([0.0], [1.0])[0, 0] == pytest.approx(0.0, abs=1e-14)


def test_weighted_hessian_matches_fd():
    net = make_network([3, 6, 6, 2], ["tanh", "sigmoid", "identity"], seed=5)
    rng = np.random.default_rng(6)
    for _ in range(5):
        x = rng.uniform(-1, 1, size=3)
        w = rng.uniform(-1, 1, size=2)
        ad = net.weighted_hessian(x, w)
        fd = fd_weighted_hessian(net, x, w)
        assert ad == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_basis_weight_recovers_per_output_hessian():
    net = make_network([2, 5, 3], seed=7)
    x = np.array([0.3, -0.4])
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        ad = net.weighted_hessian(x, e)
        fd = fd_weighted_hessian(net, x, e)
        assert ad == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_parameter_count():
    net = make_network([4, 3, 2], seed=0)
    brute = sum(l.weight.size + l.bias.size for l in net.layers)
    assert net.parameter_count == brute == 3 * 5 + 2 * 4


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_identity_net_superposition(seed):
    rng = np.random.default_rng(seed)
    net = MlpNetwork((
        Layer(rng.normal(size=(3, 3)), rng.normal(size=3), "identity"),
        Layer(rng.normal(size=(2, 3)), rng.normal(size=2), "identity"),
    ))
    x1 = rng.normal(size=3)
    x2 = rng.normal(size=3)
    f0 = net.forward(np.zeros(3))
    lhs = net.forward(x1 + x2) - f0
    rhs = (net.forward(x1) - f0) + (net.forward(x2) - f0)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_train_zero_targets_converges():
    rng = np.random.default_rng(8)
    X = rng.uniform(-1, 1, size=(40, 2))
    Y = np.zeros((40, 1))
    res = train_adam(X, Y, [8], TrainConfig(max_epochs=3000, patience=10, seed=0))
    assert res.converged
    assert res.loss_history[-1] < 0.01


def test_train_linear_map():
    rng = np.random.default_rng(9)
    X = rng.uniform(-1, 1, size=(60, 1))
    Y = 2.0 * X
    cfg = TrainConfig(learning_rate=3e-3, max_epochs=20000, patience=20,
                      loss_threshold=1e-7, seed=1)
    res = train_adam(X, Y, [], cfg)
    assert res.converged
    # single identity layer after folding: y = W x + b with W ~ 2, b ~ 0
    W = res.network.layers[0].weight
    assert W[0, 0] == pytest.approx(2.0, abs=1e-2)


def test_train_deterministic():
    rng = np.random.default_rng(10)
    X = rng.uniform(-1, 1, size=(30, 2))
    Y = np.tanh(X @ np.array([[1.0], [0.5]]))
    cfg = TrainConfig(max_epochs=200, patience=5, seed=3)
    r1 = train_adam(X, Y, [6], cfg)
    r2 = train_adam(X, Y, [6], cfg)
    assert r1.loss_history.tobytes() == r2.loss_history.tobytes()


def test_save_load_round_trip(tmp_path):
    net = make_network([3, 5, 2], seed=11)
    path = tmp_path / "net.json"
    save_weights(net, path)
    back = load_weights(path)
    x = np.array([0.1, -0.2, 0.3])
    assert net.forward(x).tobytes() == back.forward(x).tobytes()


def test_save_load_binary_round_trip(tmp_path):
    net = make_network([3, 5, 2], seed=12)
    path = tmp_path / "net.bin"
    save_weights(net, path)
    back = load_weights(path)
    x = np.array([0.5, 0.5, -0.5])
    assert net.forward(x).tobytes() == back.forward(x).tobytes()


def test_load_rejects_bad_chain(tmp_path):
    doc = {
        "version": 1,
        "activations": ["tanh", "identity"],
        "layers": [
            {"rows": 3, "cols": 2, "weight_row_major": [0.0] * 6, "bias": [0.0] * 3},
            {"rows": 2, "cols": 4, "weight_row_major": [0.0] * 8, "bias": [0.0] * 2},
        ],
    }
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(NetworkError):
        load_weights(path)


def test_load_rejects_nonfinite(tmp_path):
    doc = {
        "version": 1,
        "activations": ["identity"],
        "layers": [
            {"rows": 1, "cols": 1, "weight_row_major": [float("nan")], "bias": [0.0]},
        ],
    }
    path = tmp_path / "nan.json"
    path.write_text(json.dumps(doc).replace("NaN", "NaN"))
    with pytest.raises(NetworkError):
        load_weights(path)


def test_partial_apply_folds_constants():
    net = make_network([4, 6, 2], seed=13)
    fixed_idx = [0, 2]
    fixed_val = [0.7, -1.1]
    folded = partial_apply(net, fixed_idx, fixed_val)
    assert folded.input_dim == 2
    rng = np.random.default_rng(14)
    for _ in range(4):
        free = rng.uniform(-1, 1, size=2)
        full = np.empty(4)
        full[[0, 2]] = fixed_val
        full[[1, 3]] = free
        assert folded.forward(free) == pytest.approx(net.forward(full), abs=1e-14)


def test_widen_preserves_function():
    net = make_network([3, 4, 4, 2], seed=15)
    big = widen(net, [32, 64])
    assert big.widths == [3, 32, 64, 2]
    assert big.parameter_count > net.parameter_count
    rng = np.random.default_rng(16)
    for _ in range(4):
        x = rng.uniform(-2, 2, size=3)
        assert big.forward(x) == pytest.approx(net.forward(x), abs=1e-14)
