"""Rotation utilities: hat/vee, exponential and logarithm maps on SO(3),
quaternion conversions (Hamilton, scalar-last), and seeded random rotations.
"""

import numpy as np


def hat(v):
    """Skew-symmetric matrix of a 3-vector: hat(v) @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S):
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def exp(phi):
    """Rodrigues formula, stable at small angles via Taylor coefficients."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    S = hat(phi)
    if theta2 < 1e-16:
        # sin(t)/t ~ 1 - t^2/6, (1-cos t)/t^2 ~ 1/2 - t^2/24
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * S + b * (S @ S)


def log(R):
    """Rotation vector of R in SO(3); inverse of exp on the principal branch."""
    tr = np.trace(R)
    cos_theta = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-10:
        return vee(R - R.T) / 2.0
    if np.pi - theta < 1e-6:
        # Near pi the antisymmetric part degenerates; use the symmetric part.
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        k = int(np.argmax(axis))
        axis = A[:, k] / max(axis[k], 1e-300)
        axis = axis / np.linalg.norm(axis)
        # Fix the sign using the off-diagonal antisymmetric part.
        w = vee(R - R.T)
        if w @ axis < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * vee(R - R.T)


def project_to_rotation(M):
    """Closest orthogonal matrix to M (polar factor); keeps det sign of M."""
    U, _, Vt = np.linalg.svd(M)
    return U @ Vt


def quat_to_matrix(q):
    """Unit quaternion (qx, qy, qz, qw), Hamilton convention, to matrix."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Rotation matrix to unit quaternion (qx, qy, qz, qw), qw >= 0."""
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


def random_rotation(rng):
    """Uniform (Haar) random rotation from a seeded numpy Generator."""
    # Shoemake's method via a uniform unit quaternion.
    u1, u2, u3 = rng.random(3)
    a = np.sqrt(1.0 - u1)
    b = np.sqrt(u1)
    q = np.array(
        [
            a * np.sin(2 * np.pi * u2),
            a * np.cos(2 * np.pi * u2),
            b * np.sin(2 * np.pi * u3),
            b * np.cos(2 * np.pi * u3),
        ]
    )
    return quat_to_matrix(q)


def is_orthogonal(R, tol=1e-8):
    return np.linalg.norm(R @ R.T - np.eye(3)) <= tol
