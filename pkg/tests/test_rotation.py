import numpy as np

from splatforge.assets.rotation import (
    canonicalize,
    matrix_to_axis_angle,
    rotation_matrix,
    rotation_matrix_jacobian,
)


def test_identity_and_small_angles():
    r = np.array([[0.0, 0.0, 0.0], [1e-9, -2e-9, 5e-10]])
    m = rotation_matrix(r)
    assert np.allclose(m, np.eye(3), atol=1e-8)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    rs = np.vstack([rng.normal(size=(8, 3)), np.zeros((1, 3)),
                    rng.normal(size=(2, 3)) * 1e-6])
    jac = rotation_matrix_jacobian(rs)
    eps = 1e-6
    for i, r in enumerate(rs):
        for j in range(3):
            e = np.zeros(3)
            e[j] = eps
            num = (rotation_matrix(r + e) - rotation_matrix(r - e)) / (2 * eps)
            assert np.max(np.abs(num - jac[i, j])) < 1e-7


def test_canonicalize_wraps_and_preserves_rotation():
    rng = np.random.default_rng(4)
    rs = rng.normal(size=(100, 3)) * 4.0
    c = canonicalize(rs)
    angles = np.linalg.norm(c, axis=-1)
    assert angles.max() <= np.pi + 1e-12
    assert np.max(np.abs(rotation_matrix(rs) - rotation_matrix(c))) < 1e-6


def test_canonicalize_idempotent():
    rng = np.random.default_rng(5)
    rs = canonicalize(rng.normal(size=(50, 3)) * 4.0)
    assert np.array_equal(canonicalize(rs), rs)


def test_log_exp_round_trip_including_near_pi():
    rng = np.random.default_rng(6)
    rs = canonicalize(np.vstack([
        rng.normal(size=(20, 3)),
        np.array([[np.pi, 0, 0], [0, np.pi - 1e-7, 0], [0, 0, np.pi]]),
    ]))
    rec = matrix_to_axis_angle(rotation_matrix(rs))
    assert np.max(np.abs(rotation_matrix(rec) - rotation_matrix(rs))) < 1e-6
