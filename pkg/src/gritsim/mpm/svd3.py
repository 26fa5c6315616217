"""Scalar 3x3 SVD for per-particle constitutive updates.

Works on unpacked scalars so numba keeps everything in registers inside
particle loops.  Convention: F = U * diag(s) * V^T with s0 >= s1 >= s2 >= 0
and det(U) = det(V) = +1 (proper rotations).  Inputs are assumed to have
det(F) > 0, which the return maps maintain.
"""

import numpy as np
from numba import njit

_JACOBI_SWEEPS = 12
_JACOBI_EPS = 1e-30


@njit(cache=True, fastmath=False, inline="always")
def _sym_eig3(a00, a01, a02, a11, a12, a22):
    """Eigen-decomposition of a symmetric 3x3 by cyclic Jacobi rotations.

    Returns eigenvalues (unsorted) and the rotation matrix columns.
    fastmath stays off here: the off-diagonal cancellation is what the
    method relies on.
    """
    v00, v01, v02 = 1.0, 0.0, 0.0
    v10, v11, v12 = 0.0, 1.0, 0.0
    v20, v21, v22 = 0.0, 0.0, 1.0

    for _ in range(_JACOBI_SWEEPS):
        off = a01 * a01 + a02 * a02 + a12 * a12
        if off < _JACOBI_EPS * (a00 * a00 + a11 * a11 + a22 * a22 + 1e-300):
            break
        # (p, q) = (0, 1)
        if a01 != 0.0:
            tau = (a11 - a00) / (2.0 * a01)
            if tau >= 0.0:
                t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
            else:
                t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            n00 = a00 - t * a01
            n11 = a11 + t * a01
            n02 = c * a02 - s * a12
            n12 = s * a02 + c * a12
            a00, a11, a01 = n00, n11, 0.0
            a02, a12 = n02, n12
            for r in range(3):
                if r == 0:
                    vr0, vr1 = v00, v01
                    v00 = c * vr0 - s * vr1
                    v01 = s * vr0 + c * vr1
                elif r == 1:
                    vr0, vr1 = v10, v11
                    v10 = c * vr0 - s * vr1
                    v11 = s * vr0 + c * vr1
                else:
                    vr0, vr1 = v20, v21
                    v20 = c * vr0 - s * vr1
                    v21 = s * vr0 + c * vr1
        # (p, q) = (0, 2)
        if a02 != 0.0:
            tau = (a22 - a00) / (2.0 * a02)
            if tau >= 0.0:
                t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
            else:
                t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            n00 = a00 - t * a02
            n22 = a22 + t * a02
            n01 = c * a01 - s * a12
            n12 = s * a01 + c * a12
            a00, a22, a02 = n00, n22, 0.0
            a01, a12 = n01, n12
            for r in range(3):
                if r == 0:
                    vr0, vr2 = v00, v02
                    v00 = c * vr0 - s * vr2
                    v02 = s * vr0 + c * vr2
                elif r == 1:
                    vr0, vr2 = v10, v12
                    v10 = c * vr0 - s * vr2
                    v12 = s * vr0 + c * vr2
                else:
                    vr0, vr2 = v20, v22
                    v20 = c * vr0 - s * vr2
                    v22 = s * vr0 + c * vr2
        # (p, q) = (1, 2)
        if a12 != 0.0:
            tau = (a22 - a11) / (2.0 * a12)
            if tau >= 0.0:
                t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
            else:
                t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            n11 = a11 - t * a12
            n22 = a22 + t * a12
            n01 = c * a01 - s * a02
            n02 = s * a01 + c * a02
            a11, a22, a12 = n11, n22, 0.0
            a01, a02 = n01, n02
            for r in range(3):
                if r == 0:
                    vr1, vr2 = v01, v02
                    v01 = c * vr1 - s * vr2
                    v02 = s * vr1 + c * vr2
                elif r == 1:
                    vr1, vr2 = v11, v12
                    v11 = c * vr1 - s * vr2
                    v12 = s * vr1 + c * vr2
                else:
                    vr1, vr2 = v21, v22
                    v21 = c * vr1 - s * vr2
                    v22 = s * vr1 + c * vr2

    return (a00, a11, a22,
            v00, v01, v02,
            v10, v11, v12,
            v20, v21, v22)


@njit(cache=True, fastmath=False, inline="always")
def svd3(f00, f01, f02, f10, f11, f12, f20, f21, f22):
    """SVD of a 3x3 matrix given as scalars.

    Returns (u00..u22, s0, s1, s2, v00..v22) with singular values sorted
    descending and det(U) = det(V) = +1.
    """
    # A = F^T F (symmetric, PSD)
    a00 = f00 * f00 + f10 * f10 + f20 * f20
    a01 = f00 * f01 + f10 * f11 + f20 * f21
    a02 = f00 * f02 + f10 * f12 + f20 * f22
    a11 = f01 * f01 + f11 * f11 + f21 * f21
    a12 = f01 * f02 + f11 * f12 + f21 * f22
    a22 = f02 * f02 + f12 * f12 + f22 * f22

    (w0, w1, w2,
     v00, v01, v02,
     v10, v11, v12,
     v20, v21, v22) = _sym_eig3(a00, a01, a02, a11, a12, a22)

    # sort eigenvalues descending, permuting V columns alongside
    if w0 < w1:
        w0, w1 = w1, w0
        v00, v01 = v01, v00
        v10, v11 = v11, v10
        v20, v21 = v21, v20
    if w1 < w2:
        w1, w2 = w2, w1
        v01, v02 = v02, v01
        v11, v12 = v12, v11
        v21, v22 = v22, v21
    if w0 < w1:
        w0, w1 = w1, w0
        v00, v01 = v01, v00
        v10, v11 = v11, v10
        v20, v21 = v21, v20

    s0 = np.sqrt(w0) if w0 > 0.0 else 0.0
    s1 = np.sqrt(w1) if w1 > 0.0 else 0.0
    s2 = np.sqrt(w2) if w2 > 0.0 else 0.0

    # U columns: u_i = F v_i / s_i, with Gram-Schmidt fallbacks for tiny s
    tiny = 1e-12 * (s0 + 1e-300)

    u00 = f00 * v00 + f01 * v10 + f02 * v20
    u10 = f10 * v00 + f11 * v10 + f12 * v20
    u20 = f20 * v00 + f21 * v10 + f22 * v20
    n0 = np.sqrt(u00 * u00 + u10 * u10 + u20 * u20)
    if n0 > tiny:
        u00, u10, u20 = u00 / n0, u10 / n0, u20 / n0
    else:
        u00, u10, u20 = 1.0, 0.0, 0.0

    u01 = f00 * v01 + f01 * v11 + f02 * v21
    u11 = f10 * v01 + f11 * v11 + f12 * v21
    u21 = f20 * v01 + f21 * v11 + f22 * v21
    d = u01 * u00 + u11 * u10 + u21 * u20
    u01 -= d * u00
    u11 -= d * u10
    u21 -= d * u20
    n1 = np.sqrt(u01 * u01 + u11 * u11 + u21 * u21)
    if n1 > tiny:
        u01, u11, u21 = u01 / n1, u11 / n1, u21 / n1
    else:
        # any unit vector orthogonal to u_0
        if abs(u00) < 0.9:
            u01, u11, u21 = 0.0, u20, -u10
        else:
            u01, u11, u21 = -u20, 0.0, u00
        nn = np.sqrt(u01 * u01 + u11 * u11 + u21 * u21)
        u01, u11, u21 = u01 / nn, u11 / nn, u21 / nn

    # third column by cross product: guarantees right-handed U
    u02 = u10 * u21 - u20 * u11
    u12 = u20 * u01 - u00 * u21
    u22 = u00 * u11 - u10 * u01

    # make V a proper rotation (flipping an eigenvector column is free)
    detv = (v00 * (v11 * v22 - v12 * v21)
            - v01 * (v10 * v22 - v12 * v20)
            + v02 * (v10 * v21 - v11 * v20))
    if detv < 0.0:
        v02, v12, v22 = -v02, -v12, -v22

    # With det(U) = det(V) = +1 forced, det(F) < 0 can only surface as a
    # negative smallest singular value: sign s2 by the image direction so
    # F = U diag(s) V^T stays exact and callers can detect inversion.
    fv2x = f00 * v02 + f01 * v12 + f02 * v22
    fv2y = f10 * v02 + f11 * v12 + f12 * v22
    fv2z = f20 * v02 + f21 * v12 + f22 * v22
    proj = fv2x * u02 + fv2y * u12 + fv2z * u22
    if proj < 0.0:
        s2 = -abs(s2)
    else:
        s2 = abs(s2) if s2 != 0.0 else 0.0

    return (u00, u01, u02, u10, u11, u12, u20, u21, u22,
            s0, s1, s2,
            v00, v01, v02, v10, v11, v12, v20, v21, v22)


@njit(cache=True)
def svd3_batch(mats, out_u, out_s, out_v):
    """Array wrapper over svd3 for tests and offline use."""
    n = mats.shape[0]
    for i in range(n):
        m = mats[i]
        (u00, u01, u02, u10, u11, u12, u20, u21, u22,
         s0, s1, s2,
         v00, v01, v02, v10, v11, v12, v20, v21, v22) = svd3(
            m[0, 0], m[0, 1], m[0, 2],
            m[1, 0], m[1, 1], m[1, 2],
            m[2, 0], m[2, 1], m[2, 2])
        out_u[i, 0, 0], out_u[i, 0, 1], out_u[i, 0, 2] = u00, u01, u02
        out_u[i, 1, 0], out_u[i, 1, 1], out_u[i, 1, 2] = u10, u11, u12
        out_u[i, 2, 0], out_u[i, 2, 1], out_u[i, 2, 2] = u20, u21, u22
        out_s[i, 0], out_s[i, 1], out_s[i, 2] = s0, s1, s2
        out_v[i, 0, 0], out_v[i, 0, 1], out_v[i, 0, 2] = v00, v01, v02
        out_v[i, 1, 0], out_v[i, 1, 1], out_v[i, 1, 2] = v10, v11, v12
        out_v[i, 2, 0], out_v[i, 2, 1], out_v[i, 2, 2] = v20, v21, v22


def svd3_np(mat):
    """Single-matrix convenience wrapper returning (U, s, V)."""
    mats = np.ascontiguousarray(mat, dtype=np.float64).reshape(1, 3, 3)
    u = np.empty((1, 3, 3))
    s = np.empty((1, 3))
    v = np.empty((1, 3, 3))
    svd3_batch(mats, u, s, v)
    return u[0], s[0], v[0]
