"""Physics-based texture simulator.

Integrates the ODF conservation equation
``dA/dt = -grad(A) . v - A div(v)`` by explicit Euler substepping, where ``v``
is the Taylor reorientation velocity.  The divergence is taken with respect to
the invariant Rodrigues volume ``dV = dr / (1 + r.r)^2``, i.e.
``div v = grad . v + v . grad ln g``.

The default discretization is the lumped-mass weak form with linear shape
functions and zero flux through the cube faces, which conserves ``q . a``
exactly.  Orientations leaving a face re-enter at a symmetry-equivalent point
with the same stiffness, so holding them at the face is a closer stand-in than
leaking them and renormalizing.
"""
from dataclasses import dataclass, field

import numpy as np

from .crystal_plasticity import FCC, ProcessMode, as_mode, build_velocity_gradient, reorientation_velocity
from .errors import InvalidArgumentError, NumericalBlowupError, TextureForgeError
from .fundamental_mesh import QUAD_BARYCENTRIC, normalize_odf
from .homogenization import ObjectiveWeights, homogenize, objective, stiffness_at_quadrature

PROCESS_RATE = 1.0  # 1/s, every processing step


@dataclass(frozen=True)
class ProcessStepConfig:
    dt_total: float = 0.1
    substeps: int = 10
    clip_negative: bool = True
    scheme: str = "galerkin"

    def __post_init__(self):
        if not self.dt_total > 0:
            raise InvalidArgumentError("dt_total must be positive")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise InvalidArgumentError("substeps must be a positive integer")
        if self.scheme not in ("galerkin", "collocation"):
            raise InvalidArgumentError(f"unknown scheme {self.scheme!r}")

    def to_dict(self):
        return {
            "dt_total": self.dt_total,
            "substeps": int(self.substeps),
            "clip_negative": self.clip_negative,
            "scheme": self.scheme,
        }


@dataclass
class Trajectory:
    odfs: list = field(default_factory=list)
    modes: list = field(default_factory=list)
    objectives: list = field(default_factory=list)

    def to_dict(self):
        return {
            "modes": [str(m) for m in self.modes],
            "odfs": [np.asarray(a).tolist() for a in self.odfs],
            "objectives": [float(f) for f in self.objectives],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            odfs=[np.asarray(a, dtype=float) for a in data["odfs"]],
            modes=[ProcessMode(m) for m in data["modes"]],
            objectives=[float(f) for f in data["objectives"]],
        )


def rate_operator(mesh, velocity, scheme="galerkin"):
    """Linear operator ``K`` with ``dA/dt = K @ A`` on the independent-node ODF.

    ``velocity`` is the (N, 3) nodal reorientation velocity over all mesh nodes.

    ``"galerkin"`` (default) is the lumped-mass weak form of the conservative
    equation with zero flux through the cube faces: row sums of the nodal
    fluxes cancel element by element, so ``q . K a == 0`` up to round-off.
    ``"collocation"`` evaluates the strong form node by node; it leaks mass
    through the faces and relies on renormalization.
    """
    if scheme == "galerkin":
        full = _galerkin_operator(mesh, velocity)
    elif scheme == "collocation":
        full = _collocation_operator(mesh, velocity)
    else:
        raise InvalidArgumentError(f"unknown scheme {scheme!r}")
    # rows of the representatives, columns folded through the symmetry map
    rows = np.zeros((mesh.n_independent, mesh.n_nodes))
    if scheme == "galerkin":
        np.add.at(rows, mesh.node_to_column, full)
        rows /= mesh.node_weights[:, None]
    else:
        rows = full[mesh.independent_ids]
    k = np.zeros((mesh.n_independent, mesh.n_independent))
    np.add.at(k.T, mesh.node_to_column, rows.T)
    return k


def _galerkin_operator(mesh, velocity):
    # B[i, j] = sum_e grad N_i . v_j  int_e g N_j, unscaled by the lumped mass
    weights = mesh.quad_volume @ QUAD_BARYCENTRIC  # (E, 4) int_e g N_j
    v = velocity[mesh.elements]  # (E, 4, 3)
    local = np.einsum("eik,ejk,ej->eij", mesh.shape_gradients, v, weights)
    full = np.zeros((mesh.n_nodes, mesh.n_nodes))
    rows = np.repeat(mesh.elements, 4, axis=1)
    cols = np.tile(mesh.elements, (1, 4))
    np.add.at(full, (rows.ravel(), cols.ravel()), local.reshape(len(local), -1).ravel())
    return full


def _collocation_operator(mesh, velocity):
    grad = mesh.gradient_operator  # (3, N, N)
    r = mesh.nodes
    div = np.einsum("kij,jk->i", grad, velocity)
    div -= 4.0 * np.einsum("ik,ik->i", r, velocity) / (1.0 + np.einsum("ik,ik->i", r, r))
    full = -np.einsum("ik,kij->ij", velocity, grad)
    full[np.diag_indices_from(full)] -= div
    return full


def _check_normalized(mesh, a, tol=1e-6):
    a = np.asarray(a, dtype=float)
    if a.shape != (mesh.n_independent,):
        raise InvalidArgumentError(f"ODF must have {mesh.n_independent} entries, got {a.shape}")
    mass = float(mesh.node_weights @ a)
    if abs(mass - 1.0) > tol or np.any(a < 0):
        raise InvalidArgumentError(f"ODF must be normalized and nonnegative (q.a = {mass!r})")
    return a


def evolve(mesh, a, l, cfg=None, slips=FCC, velocity=None, drift_log=None):
    """Evolve a normalized ODF for ``cfg.dt_total`` seconds under velocity gradient ``l``.

    ``velocity`` may carry a precomputed :func:`reorientation_velocity` field for
    ``l`` (it depends only on mesh, ``l`` and slip systems).  If ``drift_log`` is
    a list, the pre-renormalization ``|q.a - 1|`` of every substep is appended.
    """
    cfg = ProcessStepConfig() if cfg is None else cfg
    a = _check_normalized(mesh, a)
    if velocity is None:
        velocity = reorientation_velocity(mesh, l, slips)
    k = rate_operator(mesh, velocity, cfg.scheme)
    dt = cfg.dt_total / cfg.substeps
    q = mesh.node_weights
    for sub in range(cfg.substeps):
        a = a + dt * (k @ a)
        if not np.all(np.isfinite(a)):
            raise NumericalBlowupError(f"non-finite ODF at substep {sub}", substep=sub)
        if drift_log is not None:
            drift_log.append(abs(float(q @ a) - 1.0))
        if cfg.clip_negative:
            a = np.maximum(a, 0.0)
        a = normalize_odf(mesh, a)
    return a


def apply_process(mesh, a, mode, cfg=None, slips=FCC, velocity=None, drift_log=None):
    """One processing step: evolve under mode ``mode`` at the fixed strain rate."""
    mode = as_mode(mode)
    l = build_velocity_gradient(mode, PROCESS_RATE)
    return evolve(mesh, a, l, cfg, slips, velocity=velocity, drift_log=drift_log)


class VelocityCache:
    """Per-mode reorientation fields for one mesh and slip-system set.

    The field is a function of (mesh, mode, slips) only, so bulk simulation can
    reuse it; results are identical to recomputing it on every call.
    """

    def __init__(self, mesh, slips=FCC):
        self.mesh = mesh
        self.slips = slips
        self._fields = {}

    def __call__(self, mode):
        mode = as_mode(mode)
        if mode.mask not in self._fields:
            l = build_velocity_gradient(mode, PROCESS_RATE)
            self._fields[mode.mask] = reorientation_velocity(self.mesh, l, self.slips)
        return self._fields[mode.mask]


def simulate_path(mesh, a0, modes, cfg=None, slips=FCC, c0=None, w=None, velocities=None):
    """Apply ``modes`` in order, recording every ODF and its stiffness objective."""
    from .homogenization import COPPER

    c0 = COPPER if c0 is None else c0
    w = ObjectiveWeights() if w is None else w
    a = _check_normalized(mesh, a0)
    c_quad = stiffness_at_quadrature(mesh, c0)
    traj = Trajectory(odfs=[a.copy()], modes=[], objectives=[objective(homogenize(mesh, c0, a, c_quad), w)])
    for step, mode in enumerate(modes):
        mode = as_mode(mode)
        velocity = velocities(mode) if velocities is not None else None
        try:
            a = apply_process(mesh, a, mode, cfg, slips, velocity=velocity)
        except TextureForgeError as exc:
            exc.step = step
            exc.args = (f"step {step} ({mode.mask}): {exc}",)
            raise
        traj.odfs.append(a)
        traj.modes.append(mode)
        traj.objectives.append(objective(homogenize(mesh, c0, a, c_quad), w))
    return traj
