"""Taylor-model crystal plasticity: velocity gradients for the processing modes,
slip rates, and the lattice reorientation velocity field.

Slip follows a rate-sensitive power law
``gdot_a = gdot0 |tau_a / g|^(1/m) sign(tau_a)``; the deviatoric stress of each
crystal is solved by damped Newton so that the summed slip reproduces the
macroscopic stretching ``D = sym(L)`` (full-constraint Taylor).
"""
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InvalidArgumentError
from .orientation import axial, rodrigues_rate, rotation_from_rodrigues

# Elementary deformation matrices, one per mask digit:
# tension/compression, plane-strain compression, xy, xz and yz shear.
BASIS_MATRICES = np.array(
    [
        [[1.0, 0.0, 0.0], [0.0, -0.5, 0.0], [0.0, 0.0, -0.5]],
        [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]],
        [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]],
    ]
)
MODE_LABELS = ("T/C", "PSC", "XY", "XZ", "YZ")

# orthonormal basis of symmetric traceless 3x3 tensors
_S2, _S6 = np.sqrt(2.0), np.sqrt(6.0)
DEVIATORIC_BASIS = np.array(
    [
        np.diag([1.0, -1.0, 0.0]) / _S2,
        np.diag([-1.0, -1.0, 2.0]) / _S6,
        [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]] / _S2,
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]] / _S2,
        [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]] / _S2,
    ]
)


@dataclass(frozen=True)
class ProcessMode:
    """One on/off combination of the five elementary deformations, e.g. ``"10010"``."""

    mask: str

    def __post_init__(self):
        if len(self.mask) != 5 or set(self.mask) - {"0", "1"}:
            raise InvalidArgumentError(f"mode mask must be 5 binary digits, got {self.mask!r}")
        if self.mask == "00000":
            raise InvalidArgumentError("mode mask 00000 applies no deformation")

    @property
    def id(self):
        return int(self.mask, 2)

    @classmethod
    def from_id(cls, mode_id):
        if not 1 <= int(mode_id) <= 31:
            raise InvalidArgumentError(f"mode id must be in 1..31, got {mode_id}")
        return cls(format(int(mode_id), "05b"))

    @property
    def label(self):
        return "+".join(lab for lab, bit in zip(MODE_LABELS, self.mask) if bit == "1")

    def __str__(self):
        return self.mask


ALL_MODES = tuple(ProcessMode.from_id(i) for i in range(1, 32))


def as_mode(value):
    """Coerce a :class:`ProcessMode`, a mask string or an integer id."""
    if isinstance(value, ProcessMode):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return ProcessMode.from_id(value)
    if isinstance(value, str):
        return ProcessMode(value)
    raise InvalidArgumentError(f"cannot interpret {value!r} as a process mode")


@dataclass(frozen=True)
class VelocityGradient:
    l: np.ndarray
    alphas: np.ndarray

    @property
    def stretching(self):
        return 0.5 * (self.l + self.l.T)

    @property
    def spin(self):
        return 0.5 * (self.l - self.l.T)

    @classmethod
    def from_alphas(cls, alphas):
        alphas = np.asarray(alphas, dtype=float)
        if alphas.shape != (5,):
            raise InvalidArgumentError("need five basis coefficients")
        return cls(np.einsum("k,kij->ij", alphas, BASIS_MATRICES), alphas)

    @classmethod
    def from_matrix(cls, l):
        l = np.asarray(l, dtype=float)
        if l.shape != (3, 3):
            raise InvalidArgumentError("velocity gradient must be 3x3")
        if abs(np.trace(l)) > 1e-12 * max(1.0, np.abs(l).max()):
            raise InvalidArgumentError("velocity gradient must be traceless")
        return cls(l, np.full(5, np.nan))


def build_velocity_gradient(mode, rate=1.0):
    """``L = sum_k alpha_k M_k`` with ``alpha_k = rate`` for every set digit."""
    mode = as_mode(mode)
    if not rate > 0:
        raise InvalidArgumentError(f"rate must be positive, got {rate!r}")
    alphas = np.array([rate if bit == "1" else 0.0 for bit in mode.mask])
    return VelocityGradient.from_alphas(alphas)


def _fcc_systems():
    planes = [(1, 1, 1), (-1, 1, 1), (1, -1, 1), (1, 1, -1)]
    normals, directions = [], []
    for n in planes:
        n = np.array(n, dtype=float)
        for d in itertools.combinations(range(3), 2):
            # the <110> direction in this plane along axes d
            for sign in (1.0, -1.0):
                s = np.zeros(3)
                s[d[0]], s[d[1]] = 1.0, sign
                if abs(s @ n) < 1e-12:
                    normals.append(n / np.linalg.norm(n))
                    directions.append(s / np.linalg.norm(s))
    return np.array(normals), np.array(directions)


@dataclass(frozen=True)
class SlipSystemSet:
    """The twelve FCC {111}<110> systems with power-law slip parameters."""

    normals: np.ndarray = field(default=None)
    directions: np.ndarray = field(default=None)
    gamma0: float = 1.0
    rate_sensitivity: float = 0.05
    resistance: float = 1.0

    def __post_init__(self):
        if self.normals is None or self.directions is None:
            normals, directions = _fcc_systems()
            object.__setattr__(self, "normals", normals)
            object.__setattr__(self, "directions", directions)
        if not (self.gamma0 > 0 and self.rate_sensitivity > 0 and self.resistance > 0):
            raise InvalidArgumentError("slip parameters must be positive")

    @property
    def schmid(self):
        """Schmid tensors ``s (x) m``, shape (12, 3, 3), crystal frame."""
        return self.directions[:, :, None] * self.normals[:, None, :]

    @property
    def exponent(self):
        return 1.0 / self.rate_sensitivity

    def to_dict(self):
        return {
            "gamma0": self.gamma0,
            "rate_sensitivity": self.rate_sensitivity,
            "resistance": self.resistance,
        }


FCC = SlipSystemSet()


def _rotated_schmid(rot, slips):
    """Sample-frame Schmid tensors ``R T R^T`` for a stack of rotations, (N, 12, 3, 3)."""
    return np.einsum("nia,kab,njb->nkij", rot, slips.schmid, rot)


def _solve_stress(p, d, slips, max_iter=100, tol=1e-9):
    """Damped Newton for the scaled deviatoric stress of every crystal.

    ``p``: (N, 12, 5) symmetric Schmid tensors in the deviatoric basis;
    ``d``: (5,) macroscopic stretching.  Returns slip rates (N, 12).
    Works in units where the stress is ``g (|d| / gamma0)^(1/n) u``, which
    makes the problem scale-free; the residual is then relative to ``|D|``.
    """
    n = slips.exponent
    dnorm = np.linalg.norm(d)
    dhat = d / dnorm
    x0 = p @ dhat  # (N, 12)
    c = (1.0 / np.sum(np.abs(x0) ** (n + 1.0), axis=1)) ** (1.0 / n)
    u = c[:, None] * dhat[None, :]

    def state(u):
        x = np.einsum("nkj,nj->nk", p, u)
        ax = np.abs(x)
        rate = ax**n * np.sign(x)
        resid = np.einsum("nk,nkj->nj", rate, p) - dhat
        phi = np.sum(ax ** (n + 1.0), axis=1) / (n + 1.0) - u @ dhat
        return x, resid, phi

    x, resid, phi = state(u)
    rnorm = np.linalg.norm(resid, axis=1)
    inner_tol = 1e-3 * tol
    for _ in range(max_iter):
        active = rnorm > inner_tol
        if not np.any(active):
            break
        pa, xa = p[active], x[active]
        hess = n * np.einsum("nk,nki,nkj->nij", np.abs(xa) ** (n - 1.0), pa, pa)
        # symmetric orientations can leave systems at exactly zero shear, making
        # the Hessian singular; a tiny diagonal shift keeps the solve defined
        shift = 1e-12 * np.trace(hess, axis1=1, axis2=2) + 1e-300
        hess = hess + shift[:, None, None] * np.eye(5)
        step = -np.linalg.solve(hess, resid[active][:, :, None])[:, :, 0]
        slope = np.einsum("ni,ni->n", resid[active], step)
        t = np.ones(len(step))
        ua = u[active]
        pending = np.ones(len(step), dtype=bool)
        new_u = ua.copy()
        for _ls in range(60):
            trial = ua + t[:, None] * step
            xt = np.einsum("nkj,nj->nk", pa, trial)
            axt = np.abs(xt)
            rt = np.einsum("nk,nkj->nj", axt**n * np.sign(xt), pa) - dhat
            pt = np.sum(axt ** (n + 1.0), axis=1) / (n + 1.0) - trial @ dhat
            ok = (pt <= phi[active] + 1e-4 * t * slope) | (
                np.linalg.norm(rt, axis=1) < rnorm[active]
            )
            accept = pending & ok
            new_u[accept] = trial[accept]
            pending &= ~ok
            if not np.any(pending):
                break
            t = np.where(pending, 0.5 * t, t)
        u[active] = new_u
        x, resid, phi = state(u)
        rnorm = np.linalg.norm(resid, axis=1)
    if np.any(rnorm > tol):
        bad = int(np.argmax(rnorm))
        raise ConvergenceError(
            f"Taylor stress solve did not converge (residual {rnorm[bad]:.3e} |D|)",
            residual=float(rnorm[bad] * dnorm),
            node=bad,
        )
    return dnorm * np.abs(x) ** n * np.sign(x)


def _slip_rates_batch(l, r, slips):
    """Slip rates (N, 12) and sample-frame Schmid tensors for Rodrigues vectors ``r`` (N, 3)."""
    rot = rotation_from_rodrigues(r)
    schmid = _rotated_schmid(rot, slips)
    d = np.einsum("ij,kij->k", l.stretching, DEVIATORIC_BASIS)
    if np.linalg.norm(d) == 0.0:
        return np.zeros((len(r), 12)), schmid
    sym = 0.5 * (schmid + np.swapaxes(schmid, -1, -2))
    p = np.einsum("nkij,bij->nkb", sym, DEVIATORIC_BASIS)
    # rejected line-search trials may overflow; they are discarded
    with np.errstate(over="ignore", invalid="ignore"):
        rates = _solve_stress(p, d, slips)
    # gamma0 and g only scale the stress, not the slip rates that satisfy the Taylor constraint
    return rates, schmid


def taylor_slip_rates(l, r, slips=FCC):
    """Slip rates (12,) of a crystal at Rodrigues orientation ``r`` under velocity gradient ``l``."""
    rates, _ = _slip_rates_batch(_as_velocity_gradient(l), np.atleast_2d(np.asarray(r, dtype=float)), slips)
    return rates[0]


def _as_velocity_gradient(l):
    if isinstance(l, VelocityGradient):
        return l
    return VelocityGradient.from_matrix(l)


def lattice_spin(l, r, slips=FCC):
    """Axial vector of the lattice spin ``skew(L) - skew(R Lp R^T)`` at each orientation."""
    l = _as_velocity_gradient(l)
    r = np.atleast_2d(np.asarray(r, dtype=float))
    rates, schmid = _slip_rates_batch(l, r, slips)
    plastic = np.einsum("nk,nkij->nij", rates, schmid)
    return axial(l.spin[None, :, :] - 0.5 * (plastic - np.swapaxes(plastic, -1, -2)))


def reorientation_velocity(mesh, l, slips=FCC):
    """Rodrigues-space reorientation velocity at every mesh node, shape (N, 3)."""
    l = _as_velocity_gradient(l)
    try:
        omega = lattice_spin(l, mesh.nodes, slips)
    except ConvergenceError as exc:
        raise ConvergenceError(
            f"{exc} at mesh node {exc.node}", residual=exc.residual, node=exc.node
        ) from exc
    return rodrigues_rate(mesh.nodes, omega)
