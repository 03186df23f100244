"""Elastic stiffness rotation, Voigt homogenization and the stiffness objective.

Stiffness matrices are 6x6 in Voigt order (11, 22, 33, 23, 13, 12), GPa, with
the engineering-shear convention: ``C_IJ = C_ijkl`` for ``I <-> ij``,
``J <-> kl``, so ``sigma = C @ (e11, e22, e33, 2e23, 2e13, 2e12)``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
TRIU = np.triu_indices(6)  # the 21 independent entries, row-major
N_INDEPENDENT = 21

_VOIGT_INDEX = np.empty((3, 3), dtype=int)
for _I, (_i, _j) in enumerate(VOIGT_PAIRS):
    _VOIGT_INDEX[_i, _j] = _VOIGT_INDEX[_j, _i] = _I

_MANDEL_SCALE = np.array([1.0, 1.0, 1.0, np.sqrt(2.0), np.sqrt(2.0), np.sqrt(2.0)])


def cubic_stiffness(c11, c12, c44):
    c = np.zeros((6, 6))
    c[:3, :3] = c12
    c[np.arange(3), np.arange(3)] = c11
    c[np.arange(3, 6), np.arange(3, 6)] = c44
    return c


# single-crystal copper, GPa
COPPER = cubic_stiffness(168.0, 121.4, 75.4)


@dataclass(frozen=True)
class ObjectiveWeights:
    w_diag: tuple = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    w_offdiag: float = 0.5

    def __post_init__(self):
        diag = np.asarray(self.w_diag, dtype=float)
        if diag.shape != (6,):
            raise InvalidArgumentError("w_diag must have 6 entries")
        if not (np.all(np.isfinite(diag)) and np.all(diag >= 0)):
            raise InvalidArgumentError("diagonal weights must be finite and nonnegative")
        if not (np.isfinite(self.w_offdiag) and self.w_offdiag >= 0):
            raise InvalidArgumentError("off-diagonal weight must be finite and nonnegative")
        object.__setattr__(self, "w_diag", tuple(float(x) for x in diag))
        object.__setattr__(self, "w_offdiag", float(self.w_offdiag))

    def packed(self):
        """Weights over the 21 packed entries, so that ``F = packed() @ pack(C)``."""
        rows, cols = TRIU
        return np.where(rows == cols, np.asarray(self.w_diag)[rows], self.w_offdiag)

    def to_dict(self):
        return {"w_diag": list(self.w_diag), "w_offdiag": self.w_offdiag}


def voigt_to_tensor(c):
    c = np.asarray(c, dtype=float)
    return c[..., _VOIGT_INDEX[:, :, None, None], _VOIGT_INDEX[None, None, :, :]]


def tensor_to_voigt(t):
    t = np.asarray(t, dtype=float)
    i = np.array([p[0] for p in VOIGT_PAIRS])
    j = np.array([p[1] for p in VOIGT_PAIRS])
    return t[..., i[:, None], j[:, None], i[None, :], j[None, :]]


def to_mandel(c):
    """Kelvin-Mandel form of a Voigt stiffness; an orthogonal representation,
    so its spectrum is invariant under rotation."""
    return np.asarray(c) * _MANDEL_SCALE[:, None] * _MANDEL_SCALE[None, :]


def pack(c):
    """The 21 upper-triangle entries of a (stack of) 6x6 matrices."""
    c = np.asarray(c)
    return c[..., TRIU[0], TRIU[1]]


def unpack(v):
    v = np.asarray(v, dtype=float)
    c = np.zeros(v.shape[:-1] + (6, 6))
    c[..., TRIU[0], TRIU[1]] = v
    c[..., TRIU[1], TRIU[0]] = v
    return c


def rotate_stiffness(c0, rot):
    """Rotate a Voigt stiffness by ``rot`` (or a stack of rotations).

    ``C'_ijkl = R_ia R_jb R_kc R_ld C_abcd``.
    """
    rot = np.asarray(rot, dtype=float)
    if rot.shape[-2:] != (3, 3):
        raise InvalidArgumentError(f"rotation must be 3x3, got shape {rot.shape}")
    err = np.linalg.norm(np.swapaxes(rot, -1, -2) @ rot - np.eye(3), axis=(-2, -1))
    if np.any(err > 1e-8) or not np.all(np.isfinite(rot)):
        raise InvalidArgumentError("rotation is not orthogonal")
    t = voigt_to_tensor(c0)
    t = np.einsum("...ld,abcd->...abcl", rot, t)
    t = np.einsum("...kc,...abcl->...abkl", rot, t)
    t = np.einsum("...jb,...abkl->...ajkl", rot, t)
    t = np.einsum("...ia,...ajkl->...ijkl", rot, t)
    return tensor_to_voigt(t)


def stiffness_at_quadrature(mesh, c0):
    """Rotated single-crystal stiffness at every quadrature point, shape (E, M, 6, 6)."""
    from .orientation import rotation_from_rodrigues

    return rotate_stiffness(c0, rotation_from_rodrigues(mesh.quad_points))


def homogenize(mesh, c0, a, c_quad=None):
    """Voigt average ``<C>`` of the rotated crystal stiffness weighted by ODF ``a``.

    Quadrature over every element of ``C(r_m) A(r_m) w_m |J_n| / (1 + r_m.r_m)^2``.
    ``c_quad`` may carry a precomputed :func:`stiffness_at_quadrature`.
    """
    a = np.asarray(a, dtype=float)
    mass = float(mesh.node_weights @ a)
    if abs(mass - 1.0) > 1e-6:
        raise InvalidArgumentError(f"ODF is not normalized (q.a = {mass!r})")
    if c_quad is None:
        c_quad = stiffness_at_quadrature(mesh, c0)
    a_quad = mesh.interpolate_to_quadrature(a)
    c = np.einsum("em,em,emij->ij", a_quad, mesh.quad_volume, c_quad)
    return 0.5 * (c + c.T)


def objective(c, w=None):
    """Composite stiffness objective: weighted diagonal plus weighted upper off-diagonal."""
    w = ObjectiveWeights() if w is None else w
    return float(w.packed() @ pack(np.asarray(c, dtype=float)))


def single_crystal_bound(p, w=None, q=None):
    """Maximum of the objective over all normalized nonnegative ODFs.

    The objective is linear in the ODF, so the optimum puts all volume on one
    node ``i`` (``a_i = 1 / q_i``).  Returns ``(row of p, objective)``; ties go
    to the lowest row.
    """
    w = ObjectiveWeights() if w is None else w
    p = np.asarray(p, dtype=float)
    if q is None:
        raise InvalidArgumentError("node weights q are required")
    q = np.asarray(q, dtype=float)
    scores = (p @ w.packed()) / q
    best = int(np.argmax(scores))
    return best, objective(unpack(p[best] / q[best]), w)


def softest_combination(p, w=None, q=None):
    """Minimum of the objective over normalized ODFs (lower counterpart of the bound)."""
    w = ObjectiveWeights() if w is None else w
    scores = (np.asarray(p) @ w.packed()) / np.asarray(q)
    worst = int(np.argmin(scores))
    return worst, float(scores[worst])
