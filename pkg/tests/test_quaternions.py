import numpy as np
import pytest

from gaussadv.quaternions import (
    IDENTITY,
    quat_conjugate,
    quat_inverse,
    quat_mul,
    quat_normalize,
    quat_right_mul_matrix,
    quat_to_rotmat,
    rotmat_backward,
)


def test_identity_is_left_and_right_unit():
    q = quat_normalize(np.array([0.3, -0.5, 0.7, 0.2]))
    assert np.allclose(quat_mul(IDENTITY, q), q)
    assert np.allclose(quat_mul(q, IDENTITY), q)


def test_inverse_cancels_for_unit_quaternions():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = quat_normalize(rng.normal(size=4))
        assert np.allclose(quat_mul(q, quat_inverse(q)), IDENTITY, atol=1e-12)


def test_ij_equals_k():
    # Hamilton product of the basis elements, expanded by hand.
    i = np.array([0.0, 1.0, 0.0, 0.0])
    j = np.array([0.0, 0.0, 1.0, 0.0])
    k = np.array([0.0, 0.0, 0.0, 1.0])
    assert np.allclose(quat_mul(i, j), k)


def test_unit_inputs_give_unit_output():
    rng = np.random.default_rng(1)
    a = quat_normalize(rng.normal(size=4))
    b = quat_normalize(rng.normal(size=4))
    assert abs(np.linalg.norm(quat_mul(a, b)) - 1.0) < 1e-6


def test_associativity_on_random_unit_triples():
    rng = np.random.default_rng(2)
    for _ in range(50):
        a, b, c = (quat_normalize(rng.normal(size=4)) for _ in range(3))
        left = quat_mul(quat_mul(a, b), c)
        right = quat_mul(a, quat_mul(b, c))
        assert np.allclose(left, right, atol=1e-9)


def test_conjugate_negates_vector_part():
    q = np.array([0.5, 1.0, -2.0, 3.0])
    assert np.allclose(quat_conjugate(q), [0.5, -1.0, 2.0, -3.0])


def test_normalize_rejects_zero():
    with pytest.raises(ValueError):
        quat_normalize(np.zeros(4))


def test_right_mul_matrix_matches_product():
    rng = np.random.default_rng(3)
    for _ in range(10):
        q = rng.normal(size=4)
        r = rng.normal(size=4)
        assert np.allclose(quat_right_mul_matrix(r) @ q, quat_mul(q, r), atol=1e-12)


def test_rotmat_is_orthonormal_and_rotates():
    q = quat_normalize(np.array([0.9, 0.1, -0.3, 0.25]))
    R = quat_to_rotmat(q)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)
    # 90 degrees about z maps x onto y
    qz = np.array([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)])
    assert np.allclose(quat_to_rotmat(qz) @ [1, 0, 0], [0, 1, 0], atol=1e-12)


def test_rotmat_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    h = 1e-6
    for _ in range(5):
        q = rng.normal(size=4) * 1.5  # deliberately non-unit
        g_R = rng.normal(size=(3, 3))
        analytic = rotmat_backward(q[None], g_R[None])[0]
        for k in range(4):
            qp, qm = q.copy(), q.copy()
            qp[k] += h
            qm[k] -= h
            fd = np.sum(g_R * (quat_to_rotmat(qp) - quat_to_rotmat(qm))) / (2 * h)
            assert abs(fd - analytic[k]) < 1e-6 * max(1.0, abs(fd))
