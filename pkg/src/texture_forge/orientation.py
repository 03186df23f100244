"""Rodrigues angle-axis kinematics.

Orientations are Rodrigues vectors ``r = n tan(theta/2)``.  Rotations are
active and right-handed: ``R(r) @ x`` rotates ``x`` by ``theta`` about ``n``.
All functions accept a single 3-vector or a stack of shape ``(..., 3)``.
"""
import itertools

import numpy as np

from .errors import InvalidArgumentError

# half-width of the cubic (FCC) fundamental-region cube
CUBIC_HALF_WIDTH = np.tan(np.pi / 8.0)


def _as_vectors(r, name="r"):
    r = np.asarray(r, dtype=float)
    if r.shape[-1:] != (3,):
        raise InvalidArgumentError(f"{name} must have trailing dimension 3, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise InvalidArgumentError(f"{name} must be finite")
    return r


def skew(w):
    """Matrix ``W`` with ``W @ x == cross(w, x)``."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def axial(w):
    """Axial vector of the skew part of ``w`` (inverse of :func:`skew`)."""
    w = np.asarray(w, dtype=float)
    return 0.5 * np.stack(
        [w[..., 2, 1] - w[..., 1, 2], w[..., 0, 2] - w[..., 2, 0], w[..., 1, 0] - w[..., 0, 1]],
        axis=-1,
    )


def rotation_from_rodrigues(r):
    """Rotation matrix of a Rodrigues vector.

    ``R = [I (1 - r.r) + 2 (r (x) r + skew(r))] / (1 + r.r)``
    """
    r = _as_vectors(r)
    rr = np.einsum("...i,...i->...", r, r)[..., None, None]
    eye = np.broadcast_to(np.eye(3), r.shape[:-1] + (3, 3))
    outer = r[..., :, None] * r[..., None, :]
    return (eye * (1.0 - rr) + 2.0 * (outer + skew(r))) / (1.0 + rr)


def metric_factor(r):
    """Invariant-volume density ``1 / (1 + r.r)**2`` of Rodrigues space."""
    r = _as_vectors(r)
    return 1.0 / (1.0 + np.einsum("...i,...i->...", r, r)) ** 2


def rodrigues_rate(r, omega):
    """Time derivative of ``r`` for a crystal spinning with axial rate ``omega``.

    ``omega`` is the spin in the sample frame (``dR/dt R^T = skew(omega)``).
    """
    r = _as_vectors(r)
    omega = _as_vectors(omega, "omega")
    wr = np.einsum("...i,...i->...", omega, r)[..., None]
    return 0.5 * (omega + np.cross(omega, r) + wr * r)


def compose(ra, rb):
    """Rodrigues vector of ``R(ra) @ R(rb)``.

    Returns ``inf`` components when the product is a half-turn.
    """
    ra = np.asarray(ra, dtype=float)
    rb = np.asarray(rb, dtype=float)
    denom = 1.0 - np.einsum("...i,...i->...", ra, rb)[..., None]
    num = ra + rb + np.cross(ra, rb)
    with np.errstate(divide="ignore", invalid="ignore"):
        return num / denom


def rodrigues_from_rotation(rot):
    """Inverse of :func:`rotation_from_rodrigues` for rotation angles below pi."""
    rot = np.asarray(rot, dtype=float)
    trace = np.trace(rot, axis1=-2, axis2=-1)
    # r = axial(R) * 2 / (1 + tr R)
    return 2.0 * axial(rot) / (1.0 + trace)[..., None]


def cubic_symmetry_quaternions():
    """The 24 proper rotations of the cube as unit quaternions ``(w, x, y, z)``."""
    quats = []
    s = np.sqrt(0.5)
    quats.append((1.0, 0.0, 0.0, 0.0))
    for axis in np.eye(3):
        quats.append((0.0, *axis))  # half-turns about <100>
        quats.append((s, *(s * axis)))  # +90 about <100>
        quats.append((s, *(-s * axis)))  # -90 about <100>
    for signs in itertools.product((1.0, -1.0), repeat=3):
        axis = np.array(signs) / np.sqrt(3.0)
        if signs[0] < 0:
            continue
        quats.append((0.5, *(np.sqrt(0.75) * axis)))  # +120 about <111>
        quats.append((0.5, *(-np.sqrt(0.75) * axis)))  # -120 about <111>
    for i, j in ((0, 1), (0, 2), (1, 2)):
        for sign in (1.0, -1.0):
            axis = np.zeros(3)
            axis[i] = s
            axis[j] = sign * s
            quats.append((0.0, *axis))  # half-turns about <110>
    quats = np.array(quats)
    assert quats.shape == (24, 4)
    return quats


def cubic_symmetry_matrices():
    """The 24 proper cubic rotations as 3x3 matrices."""
    return np.array([quaternion_to_matrix(q) for q in cubic_symmetry_quaternions()])


def quaternion_to_matrix(q):
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
