import numpy as np
import pytest

from surropt.ipm.lbfgs import LbfgsHessian


def test_empty_history_is_scaled_identity():
    h = LbfgsHessian(4, memory=3, init_scale=2.5)
    v = np.array([1.0, -2.0, 0.5, 3.0])
    assert h.matvec(v) == pytest.approx(2.5 * v)
    assert h.matrix() == pytest.approx(2.5 * np.eye(4))


def test_quadratic_recovery_on_conjugate_directions():
    # coordinate steps are Q-conjugate for a diagonal Q, so after n exact
    # updates the approximation reproduces Q on the whole space; feeding the
    # curvatures in ascending order keeps Powell damping inactive
    q = np.array([0.5, 1.0, 2.0, 3.0, 7.0])
    n = len(q)
    h = LbfgsHessian(n, memory=n)
    for i in range(n):
        s = np.zeros(n)
        s[i] = 1.0 + 0.3 * i
        y = q * s
        assert h.update(s, y)
    assert h.damped == 0
    rng = np.random.default_rng(0)
    for _ in range(5):
        v = rng.normal(size=n)
        assert h.matvec(v) == pytest.approx(q * v, rel=1e-6, abs=1e-8)
    assert h.matrix() == pytest.approx(np.diag(q), rel=1e-6, abs=1e-8)


def test_damping_on_negative_curvature():
    h = LbfgsHessian(3, memory=4)
    s = np.array([1.0, 0.0, 0.0])
    y = -s  # s.y < 0 raw
    assert h.update(s, y)
    assert h.damped == 1
    assert len(h) == 1
    # the damped pair keeps B positive definite
    B = h.matrix()
    assert np.all(np.linalg.eigvalsh(B) > 0)


def test_zero_step_skipped():
    h = LbfgsHessian(2)
    assert not h.update(np.zeros(2), np.ones(2))
    assert h.skipped == 1
    assert len(h) == 0


def test_memory_truncation():
    h = LbfgsHessian(3, memory=2)
    rng = np.random.default_rng(1)
    for _ in range(6):
        s = rng.normal(size=3)
        y = s * np.array([1.0, 2.0, 3.0])
        h.update(s, y)
    assert len(h) == 2


def test_matrix_positive_definite_after_random_updates():
    rng = np.random.default_rng(2)
    h = LbfgsHessian(6, memory=4)
    for _ in range(12):
        s = rng.normal(size=6)
        y = rng.normal(size=6)
        h.update(s, y)
    ev = np.linalg.eigvalsh(h.matrix())
    assert np.all(ev > 0)


def test_matvec_consistent_with_matrix():
    rng = np.random.default_rng(3)
    h = LbfgsHessian(5, memory=3)
    for _ in range(5):
        s = rng.normal(size=5)
        h.update(s, s * 2.0 + 0.1 * rng.normal(size=5))
    B = h.matrix()
    for _ in range(4):
        v = rng.normal(size=5)
        assert h.matvec(v) == pytest.approx(B @ v, rel=1e-10, abs=1e-12)
