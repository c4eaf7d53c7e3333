"""Quaternion and covariance factorization helpers shared by IO and refinement.

Quaternions are stored (w, x, y, z), unit norm, and map to rotation matrices
with the usual right-handed convention.
"""

from __future__ import annotations

import numpy as np


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Convert unit quaternions (..., 4) in (w, x, y, z) order to (..., 3, 3) matrices."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("zero-norm quaternion")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    out = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    out[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[..., 0, 1] = 2.0 * (x * y - w * z)
    out[..., 0, 2] = 2.0 * (x * z + w * y)
    out[..., 1, 0] = 2.0 * (x * y + w * z)
    out[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[..., 1, 2] = 2.0 * (y * z - w * x)
    out[..., 2, 0] = 2.0 * (x * z - w * y)
    out[..., 2, 1] = 2.0 * (y * z + w * x)
    out[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Convert rotation matrices (..., 3, 3) to unit quaternions (..., 4), w >= 0.

    Uses the Shepperd branch selection, so it is stable for all rotations.
    """
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    q = np.empty((m.shape[0], 4), dtype=np.float64)
    for i in range(m.shape[0]):
        r = m[i]
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        if tr > 0.0:
            s = np.sqrt(tr + 1.0) * 2.0
            q[i] = (0.25 * s, (r[2, 1] - r[1, 2]) / s,
                    (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s)
        elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            q[i] = ((r[2, 1] - r[1, 2]) / s, 0.25 * s,
                    (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s)
        elif r[1, 1] >= r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
            q[i] = ((r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                    0.25 * s, (r[1, 2] + r[2, 1]) / s)
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
            q[i] = ((r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                    (r[1, 2] + r[2, 1]) / s, 0.25 * s)
        if q[i, 0] < 0.0:
            q[i] = -q[i]
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return q.reshape(batch + (4,))


def compose_covariance(scales: np.ndarray, quats: np.ndarray) -> np.ndarray:
    """Build SPD covariances R diag(s^2) R^T from std-dev scales (..., 3) and quats (..., 4)."""
    r = quat_to_matrix(quats)
    s2 = np.asarray(scales, dtype=np.float64) ** 2
    return np.einsum("...ij,...j,...kj->...ik", r, s2, r)


def decompose_covariance(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor SPD covariances (..., 3, 3) into (scales, quats) with cov = R diag(s^2) R^T.

    The factorization is unique only up to axis permutation and sign; any
    returned pair recomposes to the input covariance.
    """
    cov = np.asarray(cov, dtype=np.float64)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, 0.0)
    # eigh can return an improper frame; flip one axis to keep a rotation
    det = np.linalg.det(vecs)
    flip = det < 0.0
    if np.any(flip):
        vecs = vecs.copy()
        vecs[flip, :, 2] *= -1.0
    return np.sqrt(vals), matrix_to_quat(vecs)
