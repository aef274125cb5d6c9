"""Geometry on the Bloch ball.

A qubit state is a real 3-vector ``r`` with ``|r| <= 1`` (``rho = (I + r.sigma)/2``).
States are plain ``numpy`` arrays of shape ``(3,)``; :func:`as_state` is the single
validation point.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

# |r| above 1 + RENORM_TOL is pulled back onto the sphere, above 1 + HARD_TOL it is an error
RENORM_TOL = 1e-9
HARD_TOL = 1e-6


class InvalidStateError(ValueError):
    """Raised for vectors that do not describe a density matrix."""


class SphericalCoords(NamedTuple):
    r: float
    theta: float
    phi: float


def as_state(r) -> np.ndarray:
    """Return ``r`` as a validated float array of shape (3,).

    Small integrator drift outside the ball is tolerated; anything beyond
    ``1 + HARD_TOL`` is rejected so that integration bugs are not masked.
    """
    s = np.array(r, dtype=float).reshape(-1)
    if s.shape != (3,):
        raise InvalidStateError(f"Bloch vector must have 3 components, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise InvalidStateError(f"non-finite Bloch vector {s}")
    n = float(np.linalg.norm(s))
    if n > 1.0 + HARD_TOL:
        raise InvalidStateError(f"|r| = {n!r} lies outside the Bloch ball")
    if n > 1.0 + RENORM_TOL:
        s /= n
    return s


def purity(s) -> float:
    s = np.asarray(s, dtype=float)
    return 0.5 * (1.0 + float(s @ s))


def trace_distance(a, b) -> float:
    """Trace distance ``Tr|rho_a - rho_b| / 2``, i.e. half the Euclidean distance."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return 0.5 * float(np.linalg.norm(d))


def rotation_matrix(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = float(np.linalg.norm(axis))
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    kx, ky, kz = axis / n
    K = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotate(s, axis, angle: float) -> np.ndarray:
    """Rigidly rotate ``s`` about ``axis`` by ``angle`` (right-hand rule)."""
    return rotation_matrix(axis, angle) @ np.asarray(s, dtype=float)


def rotation_between(a, b) -> tuple[np.ndarray, float]:
    """Axis and angle of the smallest rotation taking direction ``a`` onto ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return np.array([0.0, 0.0, 1.0]), 0.0
    a, b = a / na, b / nb
    axis = np.cross(a, b)
    s = float(np.linalg.norm(axis))
    angle = float(np.arctan2(s, float(a @ b)))
    if s > 1e-12:
        return axis / s, angle
    if a @ b > 0:
        return np.array([0.0, 0.0, 1.0]), 0.0
    # antiparallel: any axis orthogonal to a
    trial = np.eye(3)[int(np.argmin(np.abs(a)))]
    axis = np.cross(a, trial)
    return axis / np.linalg.norm(axis), np.pi


def to_spherical(s) -> SphericalCoords:
    """Polar angle measured from +z, azimuth in [-pi, pi). The origin maps to (0, 0, 0)."""
    x, y, z = (float(v) for v in np.asarray(s, dtype=float))
    r = float(np.sqrt(x * x + y * y + z * z))
    if r == 0.0:
        return SphericalCoords(0.0, 0.0, 0.0)
    theta = float(np.arctan2(np.hypot(x, y), z))
    phi = float(np.arctan2(y, x))
    if phi >= np.pi:
        phi -= 2.0 * np.pi
    return SphericalCoords(r, theta, phi)


def from_spherical(c: SphericalCoords) -> np.ndarray:
    r, theta, phi = c
    st = np.sin(theta)
    return np.array([r * st * np.cos(phi), r * st * np.sin(phi), r * np.cos(theta)])
