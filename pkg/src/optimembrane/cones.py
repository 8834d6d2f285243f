"""Support functions of the pointwise constraint sets and the rotated quadratic cone."""

from __future__ import annotations

import math

import numpy as np

SQRT2 = math.sqrt(2.0)


def rho_plus(A) -> float:
    """Positive part of the largest eigenvalue of a symmetric matrix."""
    A = np.asarray(A, dtype=float)
    return max(0.0, float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1]))


def chi_c_star(theta, S, range_tol: float = 1e-10) -> float:
    """Support function of {(z, M): z (x) z / 2 + M <= Id} at (theta, S).

    Equals Tr S + <q, theta>/2 for any q with S q = theta when S is positive
    semidefinite and theta lies in its range, and +inf otherwise.
    """
    theta = np.asarray(theta, dtype=float).reshape(2)
    S = np.asarray(S, dtype=float).reshape(2, 2)
    S = 0.5 * (S + S.T)
    evals = np.linalg.eigvalsh(S)
    scale = max(1.0, float(np.abs(evals).max()))
    if evals[0] < -1e-12 * scale:
        return math.inf
    q = np.linalg.pinv(S, rcond=1e-12, hermitian=True) @ theta
    tnorm = float(np.linalg.norm(theta))
    if np.linalg.norm(S @ q - theta) > range_tol * max(tnorm, 1e-300) and tnorm > 0:
        return math.inf
    return float(np.trace(S) + 0.5 * q @ theta)


def in_rotated_cone(u, v, x, tol: float = 1e-12) -> np.ndarray:
    """Membership in {u, v >= 0, x^2 <= 2uv}, tolerance relative to the entry scale."""
    u, v, x = np.asarray(u, float), np.asarray(v, float), np.asarray(x, float)
    scale = np.maximum(1.0, np.maximum(np.abs(u), np.maximum(np.abs(v), np.abs(x))))
    return (u >= -tol * scale) & (v >= -tol * scale) & (x * x <= 2 * u * v + tol * scale**2)


def project_rotated_cone(u, v, x):
    """Euclidean projection onto the rotated cone, vectorized over equal-shape arrays.

    (u, v) is rotated to (a, b) = ((u+v)/sqrt2, (u-v)/sqrt2) so that the cone
    reads a >= |(b, x)|; the closed-form second-order-cone projection is then
    rotated back.
    """
    u, v, x = (np.asarray(t, dtype=float) for t in (u, v, x))
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and np.all(np.isfinite(x))):
        raise ValueError("non-finite input to cone projection")
    a = (u + v) / SQRT2
    b = (u - v) / SQRT2
    r = np.hypot(b, x)
    inside = r <= a
    polar = r <= -a
    s = np.zeros(np.broadcast(a, r).shape)
    with np.errstate(all="ignore"):
        np.divide(0.5 * (a + r), r, out=s, where=r > 0)
    s = np.clip(s, 0.0, 1.0)  # |a| < r on this branch; guards subnormal r
    pa = np.where(inside, a, np.where(polar, 0.0, 0.5 * (a + r)))
    pb = np.where(inside, b, np.where(polar, 0.0, s * b))
    px = np.where(inside, x, np.where(polar, 0.0, s * x))
    pu = (pa + pb) / SQRT2
    pv = (pa - pb) / SQRT2
    return pu, pv, px


def rotated_cone_distance(u, v, x) -> np.ndarray:
    pu, pv, px = project_rotated_cone(u, v, x)
    return np.sqrt((u - pu) ** 2 + (v - pv) ** 2 + (x - px) ** 2)
