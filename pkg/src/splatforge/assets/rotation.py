"""Axis-angle rotation utilities.

Rotations are stored as axis-angle 3-vectors (direction = axis, norm = angle
in radians). All functions are vectorized over a leading batch dimension and
handle the small-angle limit with series expansions so there is no 0/0 at the
identity.
"""

from __future__ import annotations

import numpy as np

# Below this angle the Rodrigues coefficients switch to their Taylor series.
_SMALL_ANGLE = 1e-8


def _coeffs(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (sin t / t, (1 - cos t) / t^2) with series fallback near 0."""
    small = theta < 1e-4
    t2 = theta * theta
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - t2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))
    return a, b


def cross_matrix(r: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrices, (..., 3) -> (..., 3, 3)."""
    r = np.asarray(r, dtype=np.float64)
    k = np.zeros(r.shape[:-1] + (3, 3), dtype=np.float64)
    x, y, z = r[..., 0], r[..., 1], r[..., 2]
    k[..., 0, 1] = -z
    k[..., 0, 2] = y
    k[..., 1, 0] = z
    k[..., 1, 2] = -x
    k[..., 2, 0] = -y
    k[..., 2, 1] = x
    return k


def rotation_matrix(r: np.ndarray) -> np.ndarray:
    """Rodrigues formula, axis-angle (..., 3) -> rotation matrices (..., 3, 3)."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1)
    a, b = _coeffs(theta)
    k = cross_matrix(r)
    k2 = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * k2


def rotation_matrix_jacobian(r: np.ndarray) -> np.ndarray:
    """d R / d r for batches of axis-angle vectors.

    Returns (..., 3, 3, 3) where [..., j, :, :] is the partial of the rotation
    matrix with respect to component j of r. Uses dR/dr_j = (a'/t) r_j K
    + a E_j + (b'/t) r_j K^2 + b (E_j K + K E_j), all ratios finite at t = 0.
    """
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1)
    t2 = theta * theta
    small = theta < 1e-4
    safe_t = np.where(small, 1.0, theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        # (da/dt)/t and (db/dt)/t, series: -1/3 + t^2/30 and -1/12 + t^2/180
        da_t = np.where(
            small,
            -1.0 / 3.0 + t2 / 30.0,
            (theta * np.cos(theta) - np.sin(theta)) / (safe_t**3),
        )
        db_t = np.where(
            small,
            -1.0 / 12.0 + t2 / 180.0,
            (theta * np.sin(theta) - 2.0 * (1.0 - np.cos(theta))) / (safe_t**4),
        )
    a, b = _coeffs(theta)
    k = cross_matrix(r)
    k2 = k @ k

    basis = np.zeros(r.shape[:-1] + (3, 3, 3), dtype=np.float64)
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        basis[..., j, :, :] = cross_matrix(np.broadcast_to(e, r.shape))

    out = np.empty(r.shape[:-1] + (3, 3, 3), dtype=np.float64)
    for j in range(3):
        ej = basis[..., j, :, :]
        rj = r[..., j]
        out[..., j, :, :] = (
            (da_t * rj)[..., None, None] * k
            + a[..., None, None] * ej
            + (db_t * rj)[..., None, None] * k2
            + b[..., None, None] * (ej @ k + k @ ej)
        )
    return out


def canonicalize(r: np.ndarray) -> np.ndarray:
    """Wrap axis-angle vectors so the angle lies in [0, pi].

    Angles are reduced mod 2*pi; angles in (pi, 2*pi) become 2*pi - angle with
    the axis negated. The represented rotation matrix is unchanged.
    """
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1)
    out = r.copy()
    nz = theta > 0
    wrapped = np.mod(theta, 2.0 * np.pi)
    flip = wrapped > np.pi
    target = np.where(flip, wrapped - 2.0 * np.pi, wrapped)  # signed angle in (-pi, pi]
    scale = np.ones_like(theta)
    scale[nz] = target[nz] / theta[nz]
    out = out * scale[..., None]
    return out


def matrix_to_axis_angle(m: np.ndarray) -> np.ndarray:
    """Inverse Rodrigues for batches of rotation matrices, (..., 3, 3) -> (..., 3)."""
    m = np.asarray(m, dtype=np.float64)
    trace = np.clip(m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2], -1.0, 3.0)
    cos_t = np.clip((trace - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(cos_t)
    # Antisymmetric part gives axis * sin(theta)
    ax = np.stack(
        [
            m[..., 2, 1] - m[..., 1, 2],
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 1, 0] - m[..., 0, 1],
        ],
        axis=-1,
    )
    sin_t = np.linalg.norm(ax, axis=-1) * 0.5
    out = np.zeros_like(ax)

    regular = (theta > _SMALL_ANGLE) & (np.pi - theta > 1e-6)
    if np.any(regular):
        scale = theta[regular] / np.maximum(2.0 * sin_t[regular], 1e-300)
        out[regular] = ax[regular] * scale[..., None]

    near_pi = (np.pi - theta <= 1e-6) & (theta > _SMALL_ANGLE)
    if np.any(near_pi):
        # axis from the symmetric part: R = 2 n n^T - I at theta = pi
        sym = (m[near_pi] + np.eye(3)) * 0.5
        diag = np.clip(np.stack([sym[..., 0, 0], sym[..., 1, 1], sym[..., 2, 2]], -1), 0, 1)
        k = np.argmax(diag, axis=-1)
        n = np.sqrt(diag)
        rows = np.arange(n.shape[0])
        # fix signs from off-diagonal entries relative to the dominant component
        sign = np.sign(sym[rows, k, :] + 1e-300)
        n = n * sign
        n /= np.linalg.norm(n, axis=-1, keepdims=True)
        out[near_pi] = n * theta[near_pi][..., None]
    return out


def frame_to_axis_angle(t_u: np.ndarray, t_v: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Axis-angle whose rotation matrix has columns (t_u, t_v, n)."""
    m = np.stack([t_u, t_v, n], axis=-1)
    return matrix_to_axis_angle(m)
