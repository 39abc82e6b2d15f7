"""SO(3)/SE(3) toolkit.

Rotations are plain ``(3, 3)`` float arrays. Twists are 6-vectors ordered
``[rotation; translation]`` and act as right (body-frame) increments:
``retract(T, d) = T * exp(d)``. The ``_``-prefixed functions are numba
kernels shared with the residual and solver kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import AngleNearPi

SMALL_ANGLE = 1e-8
SERIES_ANGLE = 0.3
NEAR_PI_TRACE = 1e-9
ORTHO_DRIFT = 1e-9


@njit(cache=True)
def _hat(w):
    out = np.zeros((3, 3))
    out[0, 1] = -w[2]
    out[0, 2] = w[1]
    out[1, 0] = w[2]
    out[1, 2] = -w[0]
    out[2, 0] = -w[1]
    out[2, 1] = w[0]
    return out


@njit(cache=True)
def _mm3(A, B):
    # explicit loops: numba sends @ to BLAS, which dominates at this size
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]
    return out


@njit(cache=True)
def _mv3(A, v):
    out = np.empty(3)
    for i in range(3):
        out[i] = A[i, 0] * v[0] + A[i, 1] * v[1] + A[i, 2] * v[2]
    return out


@njit(cache=True)
def _rodrigues_coeffs(theta):
    # sin(t)/t, (1-cos t)/t^2
    if theta < SMALL_ANGLE:
        return 1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0
    h = math.sin(0.5 * theta)
    return math.sin(theta) / theta, 2.0 * h * h / (theta * theta)


@njit(cache=True)
def _c1(theta):
    # (t - sin t)/t^3
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        return 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2**3 / 362880.0 + t2**4 / 39916800.0
    return (theta - math.sin(theta)) / theta**3


@njit(cache=True)
def _c2(theta):
    # (t^2 + 2 cos t - 2)/(2 t^4)
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        return 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0 - t2**3 / 3628800.0 + t2**4 / 479001600.0
    return (theta * theta + 2.0 * math.cos(theta) - 2.0) / (2.0 * theta**4)


@njit(cache=True)
def _c3(theta):
    # (2t - 3 sin t + t cos t)/(2 t^5)
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        return 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0 - t2**3 / 9979200.0 + t2**4 / 1245404160.0
    return (2.0 * theta - 3.0 * math.sin(theta) + theta * math.cos(theta)) / (2.0 * theta**5)


@njit(cache=True)
def _cinv(theta):
    # 1/t^2 - (1 + cos t)/(2 t sin t), the [w]^2 coefficient of the inverse Jacobians
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2**3 / 1209600.0 + t2**4 / 47900160.0
    return 1.0 / (theta * theta) - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))


@njit(cache=True)
def _so3_exp(w):
    theta = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    a, b = _rodrigues_coeffs(theta)
    W = _hat(w)
    return np.eye(3) + a * W + b * _mm3(W, W)


@njit(cache=True)
def _so3_log(R):
    """Returns (omega, cos_theta); the caller decides whether cos_theta is too close to -1."""
    wx = 0.5 * (R[2, 1] - R[1, 2])
    wy = 0.5 * (R[0, 2] - R[2, 0])
    wz = 0.5 * (R[1, 0] - R[0, 1])
    s = math.sqrt(wx * wx + wy * wy + wz * wz)
    c = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    theta = math.atan2(s, c)
    out = np.empty(3)
    if theta < SMALL_ANGLE:
        f = 1.0 + theta * theta / 6.0
    elif c > -0.99:
        f = theta / s
    else:
        # near pi the antisymmetric part is tiny; recover the axis from the symmetric part
        B = 0.5 * (R + R.T) - c * np.eye(3)
        k = 0
        for j in range(1, 3):
            if B[j, j] > B[k, k]:
                k = j
        axis = B[:, k] / math.sqrt(max(B[k, k], 1e-300))
        n = math.sqrt(axis[0] ** 2 + axis[1] ** 2 + axis[2] ** 2)
        axis = axis / n
        if axis[0] * wx + axis[1] * wy + axis[2] * wz < 0.0:
            axis = -axis
        out[:] = theta * axis
        return out, c
    out[0] = f * wx
    out[1] = f * wy
    out[2] = f * wz
    return out, c


@njit(cache=True)
def _so3_jr_inv_into(w, out):
    # I + 0.5 [w]x + c [w]x^2, using [w]x^2 = w w' - |w|^2 I
    t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
    c = _cinv(math.sqrt(t2))
    for a in range(3):
        for b in range(3):
            out[a, b] = c * w[a] * w[b]
        out[a, a] += 1.0 - c * t2
    out[0, 1] -= 0.5 * w[2]
    out[0, 2] += 0.5 * w[1]
    out[1, 0] += 0.5 * w[2]
    out[1, 2] -= 0.5 * w[0]
    out[2, 0] -= 0.5 * w[1]
    out[2, 1] += 0.5 * w[0]


@njit(cache=True)
def _so3_jr_inv(w):
    out = np.empty((3, 3))
    _so3_jr_inv_into(w, out)
    return out


@njit(cache=True)
def _se3_exp(xi):
    w = xi[:3]
    theta = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    a, b = _rodrigues_coeffs(theta)
    W = _hat(w)
    W2 = _mm3(W, W)
    R = np.eye(3) + a * W + b * W2
    V = np.eye(3) + b * W + _c1(theta) * W2
    return R, _mv3(V, xi[3:])


@njit(cache=True)
def _se3_log(R, t):
    w, c = _so3_log(R)
    t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
    k = _cinv(math.sqrt(t2))
    # V^-1 t = t - 0.5 w x t + k (w (w.t) - |w|^2 t)
    wt = w[0] * t[0] + w[1] * t[1] + w[2] * t[2]
    out = np.empty(6)
    out[0] = w[0]
    out[1] = w[1]
    out[2] = w[2]
    out[3] = t[0] - 0.5 * (w[1] * t[2] - w[2] * t[1]) + k * (w[0] * wt - t2 * t[0])
    out[4] = t[1] - 0.5 * (w[2] * t[0] - w[0] * t[2]) + k * (w[1] * wt - t2 * t[1])
    out[5] = t[2] - 0.5 * (w[0] * t[1] - w[1] * t[0]) + k * (w[2] * wt - t2 * t[2])
    return out, c


@njit(cache=True)
def _mm3_into(A, B, out):
    for i in range(3):
        for j in range(3):
            out[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]


@njit(cache=True)
def _hat_into(w, out):
    out[0, 0] = 0.0
    out[1, 1] = 0.0
    out[2, 2] = 0.0
    out[0, 1] = -w[2]
    out[0, 2] = w[1]
    out[1, 0] = w[2]
    out[1, 2] = -w[0]
    out[2, 0] = -w[1]
    out[2, 1] = w[0]


@njit(cache=True)
def _se3_q_into(rho, phi, out, work):
    """Translation-rotation coupling block of the SE(3) left Jacobian; ``work`` is (9, 3, 3)."""
    theta = math.sqrt(phi[0] ** 2 + phi[1] ** 2 + phi[2] ** 2)
    P = work[0]
    Rh = work[1]
    PR = work[2]
    RP = work[3]
    PRP = work[4]
    PPR = work[5]
    RPP = work[6]
    PRPP = work[7]
    PPRP = work[8]
    _hat_into(phi, P)
    _hat_into(rho, Rh)
    _mm3_into(P, Rh, PR)
    _mm3_into(Rh, P, RP)
    _mm3_into(PR, P, PRP)
    _mm3_into(P, PR, PPR)
    _mm3_into(RP, P, RPP)
    _mm3_into(PRP, P, PRPP)
    _mm3_into(P, PRP, PPRP)
    c1 = _c1(theta)
    c2 = _c2(theta)
    c3 = _c3(theta)
    for a in range(3):
        for b in range(3):
            out[a, b] = (
                0.5 * Rh[a, b]
                + c1 * (PR[a, b] + RP[a, b] + PRP[a, b])
                + c2 * (PPR[a, b] + RPP[a, b] - 3.0 * PRP[a, b])
                + c3 * (PRPP[a, b] + PPRP[a, b])
            )


@njit(cache=True)
def _se3_q(rho, phi):
    out = np.empty((3, 3))
    _se3_q_into(rho, phi, out, np.empty((9, 3, 3)))
    return out


@njit(cache=True)
def _se3_jr_inv_into(xi, out, work):
    """Inverse right Jacobian of SE(3) for a [rotation; translation] twist; ``work`` is (12, 3, 3)."""
    Ji = work[9]
    Q = work[10]
    T = work[11]
    _so3_jr_inv_into(xi[:3], Ji)
    _se3_q_into(-xi[3:], -xi[:3], Q, work)
    _mm3_into(Ji, Q, T)
    _mm3_into(T, Ji, Q)
    for a in range(3):
        for b in range(3):
            out[a, b] = Ji[a, b]
            out[a, 3 + b] = 0.0
            out[3 + a, b] = -Q[a, b]
            out[3 + a, 3 + b] = Ji[a, b]


@njit(cache=True)
def _se3_jr_inv(xi):
    out = np.empty((6, 6))
    _se3_jr_inv_into(xi, out, np.empty((12, 3, 3)))
    return out


@njit(cache=True)
def _adjoint(R, t):
    out = np.zeros((6, 6))
    out[:3, :3] = R
    out[3:, 3:] = R
    out[3:, :3] = _mm3(_hat(t), R)
    return out


# ---------------------------------------------------------------- public API


def hat(w) -> np.ndarray:
    return _hat(np.asarray(w, dtype=float))


def so3_exp(omega) -> np.ndarray:
    """Rotation matrix exp([omega]_x)."""
    return _so3_exp(np.asarray(omega, dtype=float))


def so3_log(R) -> np.ndarray:
    """Axis-angle vector of ``R``; raises AngleNearPi within 1e-9 of the cut locus."""
    w, c = _so3_log(np.asarray(R, dtype=float))
    if c <= -1.0 + NEAR_PI_TRACE:
        raise AngleNearPi("rotation angle too close to pi")
    return w


def so3_right_jacobian_inv(omega) -> np.ndarray:
    return _so3_jr_inv(np.asarray(omega, dtype=float))


def se3_right_jacobian_inv(xi) -> np.ndarray:
    return _se3_jr_inv(np.asarray(xi, dtype=float))


def orthonormalize(R) -> np.ndarray:
    """Nearest rotation in the Frobenius sense (polar projection)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def ortho_drift(R) -> float:
    return float(np.linalg.norm(R.T @ R - np.eye(3)))


def reorthonormalize(R) -> np.ndarray:
    if ortho_drift(R) > ORTHO_DRIFT:
        return orthonormalize(R)
    return R


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``x -> R x + t``."""

    R: np.ndarray
    t: np.ndarray

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> Pose:
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3].copy(), M[:3, 3].copy())

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def inverse(self) -> Pose:
        return Pose(self.R.T, -self.R.T @ self.t)

    def __matmul__(self, other: Pose) -> Pose:
        return pose_compose(self, other)

    def apply(self, p) -> np.ndarray:
        return self.R @ p + self.t


def pose_compose(A: Pose, B: Pose) -> Pose:
    return Pose(A.R @ B.R, A.R @ B.t + A.t)


def se3_exp(xi) -> Pose:
    R, t = _se3_exp(np.asarray(xi, dtype=float))
    return Pose(R, t)


def se3_log(T: Pose) -> np.ndarray:
    xi, c = _se3_log(T.R, T.t)
    if c <= -1.0 + NEAR_PI_TRACE:
        raise AngleNearPi("rotation angle too close to pi")
    return xi


def adjoint(T: Pose) -> np.ndarray:
    """6x6 adjoint for [rotation; translation] twists: Ad(T) xi = log(T exp(xi) T^-1)."""
    return _adjoint(T.R, T.t)


def pose_retract(T: Pose, delta) -> Pose:
    """Right-multiplicative update ``T * exp(delta)``."""
    delta = np.asarray(delta, dtype=float)
    if not delta.any():
        return T
    return pose_compose(T, se3_exp(delta))


def numeric_jacobian(f, x, eps=1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = eps
        cols.append((np.asarray(f(x + e), dtype=float) - np.asarray(f(x - e), dtype=float)).ravel() / (2 * eps))
    return np.stack(cols, axis=-1)
