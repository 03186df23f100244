import functools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import texture_forge.crystal_plasticity as cp
from oracles import expm_skew, rodrigues_via_scipy, rotation_via_quaternion
from texture_forge.crystal_plasticity import (
    ALL_MODES,
    FCC,
    ProcessMode,
    SlipSystemSet,
    VelocityGradient,
    as_mode,
    build_velocity_gradient,
    lattice_spin,
    reorientation_velocity,
    taylor_slip_rates,
)
from texture_forge.errors import ConvergenceError, InvalidArgumentError
from texture_forge.orientation import CUBIC_HALF_WIDTH, rodrigues_rate

modes = st.sampled_from(ALL_MODES)
orientations = arrays(np.float64, 3, elements=st.floats(-CUBIC_HALF_WIDTH, CUBIC_HALF_WIDTH))


def _sym(t):
    return 0.5 * (t + t.T)


def _skew(t):
    return 0.5 * (t - t.T)


def _axial(w):
    return np.array([w[2, 1], w[0, 2], w[1, 0]])


def _sample_schmid(r):
    rot = rotation_via_quaternion(r)
    return [rot @ np.outer(s, m) @ rot.T for s, m in zip(FCC.directions, FCC.normals)]


def test_basis_examples():
    l = build_velocity_gradient("10000", 1.0).l
    np.testing.assert_array_equal(l, np.diag([1.0, -0.5, -0.5]))
    l = build_velocity_gradient("00100", 1.0).l
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[1, 0] = 1.0
    np.testing.assert_array_equal(l, expected)
    full = build_velocity_gradient("11111", 1.0).l
    np.testing.assert_array_equal(full, sum(build_velocity_gradient(m).l for m in ("10000", "01000", "00100", "00010", "00001")))
    assert np.trace(full) == 0.0


def test_rate_scales_the_gradient():
    l = build_velocity_gradient("01010", 2.5)
    np.testing.assert_array_equal(l.l, 2.5 * build_velocity_gradient("01010").l)
    np.testing.assert_array_equal(l.alphas, [0, 2.5, 0, 2.5, 0])


def test_all_modes_give_distinct_traceless_gradients():
    mats = {tuple(build_velocity_gradient(m).l.ravel()) for m in ALL_MODES}
    assert len(mats) == 31
    for m in ALL_MODES:
        assert abs(np.trace(build_velocity_gradient(m).l)) <= 1e-12


@pytest.mark.parametrize("bad", ["00000", "1000", "10002", "111111"])
def test_bad_masks(bad):
    with pytest.raises(InvalidArgumentError):
        ProcessMode(bad)


def test_bad_rate():
    with pytest.raises(InvalidArgumentError):
        build_velocity_gradient("10000", 0.0)
    with pytest.raises(InvalidArgumentError):
        build_velocity_gradient("10000", -1.0)


def test_mode_ids_and_coercion():
    assert [m.id for m in ALL_MODES] == list(range(1, 32))
    assert ProcessMode("10000").id == 16
    assert as_mode(16) == as_mode("10000") == ProcessMode("10000")
    assert ProcessMode("10011").label == "T/C+XZ+YZ"
    for bad in (0, 32, True, 1.0):
        with pytest.raises(InvalidArgumentError):
            as_mode(bad)


def test_from_matrix_requires_traceless():
    with pytest.raises(InvalidArgumentError):
        VelocityGradient.from_matrix(np.eye(3))


def test_slip_systems():
    assert FCC.normals.shape == (12, 3) and FCC.directions.shape == (12, 3)
    np.testing.assert_allclose(np.linalg.norm(FCC.normals, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(FCC.directions, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.einsum("ij,ij->i", FCC.normals, FCC.directions), 0.0, atol=1e-12)
    keys = {tuple(np.round(t.ravel(), 12)) for t in FCC.schmid}
    assert len(keys) == 12
    with pytest.raises(InvalidArgumentError):
        SlipSystemSet(rate_sensitivity=0.0)


def test_zero_and_pure_spin_give_no_slip():
    r = np.array([0.1, -0.2, 0.05])
    assert np.array_equal(taylor_slip_rates(np.zeros((3, 3)), r), np.zeros(12))
    spin = np.array([[0.0, -1.0, 0.3], [1.0, 0.0, 0.0], [-0.3, 0.0, 0.0]])
    assert np.array_equal(taylor_slip_rates(spin, r), np.zeros(12))


def _achieved_stretching(rates, r):
    return sum(g * _sym(t) for g, t in zip(rates, _sample_schmid(r)))


def test_residual_at_origin():
    l = build_velocity_gradient("10000")
    rates = taylor_slip_rates(l, np.zeros(3))
    d = l.stretching
    assert np.linalg.norm(_achieved_stretching(rates, np.zeros(3)) - d) < 1e-9 * np.linalg.norm(d)


@given(modes, orientations)
def test_residual_contract(mode, r):
    l = build_velocity_gradient(mode)
    d = l.stretching
    rates = taylor_slip_rates(l, r)
    assert np.linalg.norm(_achieved_stretching(rates, r) - d) < 1e-9 * np.linalg.norm(d)
    doubled = taylor_slip_rates(build_velocity_gradient(mode, 2.0), r)
    assert np.linalg.norm(_achieved_stretching(doubled, r) - 2 * d) < 1e-9 * np.linalg.norm(2 * d)


@given(modes, orientations)
def test_flow_rule_and_signs(mode, r):
    """Recover resolved shears from the slip rates and check they come from one stress.

    With the power law, ``tau_a = g |gdot_a / gdot0|^m sign(gdot_a)``; those
    twelve values must be ``sigma : sym(T_a)`` for a single deviatoric sigma.
    """
    rates = taylor_slip_rates(build_velocity_gradient(mode), r)
    tau = FCC.resistance * np.abs(rates / FCC.gamma0) ** FCC.rate_sensitivity * np.sign(rates)
    design = np.array([_sym(t).ravel() for t in _sample_schmid(r)])
    sigma, *_ = np.linalg.lstsq(design, tau, rcond=None)
    np.testing.assert_allclose(design @ sigma, tau, atol=1e-8)
    # positive dissipation on every active system
    assert np.all(rates * (design @ sigma) >= -1e-12)


def test_velocity_zero_gradient(mesh2):
    v = reorientation_velocity(mesh2, np.zeros((3, 3)))
    assert np.array_equal(v, np.zeros_like(mesh2.nodes))


def test_velocity_rigid_spin(mesh2):
    l = np.array([[0.0, -0.4, 0.2], [0.4, 0.0, -0.7], [-0.2, 0.7, 0.0]])
    v = reorientation_velocity(mesh2, l)
    np.testing.assert_array_equal(v, rodrigues_rate(mesh2.nodes, _axial(_skew(l))))


def test_velocity_matches_finite_rotation(mesh3):
    l = build_velocity_gradient("10000")
    v = reorientation_velocity(mesh3, l)
    dt = 1e-6
    scale = np.abs(v).max()
    for node, r in enumerate(mesh3.nodes):
        rates = taylor_slip_rates(l, r)
        rot = rotation_via_quaternion(r)
        plastic = rot @ sum(g * np.outer(s, m) for g, s, m in zip(rates, FCC.directions, FCC.normals)) @ rot.T
        omega = _axial(_skew(l.l) - _skew(plastic))
        stepped = rodrigues_via_scipy(expm_skew(omega, dt) @ rot)
        fd = (stepped - r) / dt
        assert np.linalg.norm(v[node] - fd) <= 1e-4 * max(np.linalg.norm(fd), scale)


def test_velocity_equivariant_under_symmetry(mesh2, mesh4):
    for mesh in (mesh2, mesh4):
        pairs = list(mesh.dependent_map.items())
        for mode in ("10000", "01000", "00110", "11111"):
            l = build_velocity_gradient(mode)
            omega = lattice_spin(l, mesh.nodes)
            v = reorientation_velocity(mesh, l)
            for dep, rep in pairs:
                np.testing.assert_allclose(omega[dep], omega[rep], atol=1e-8)
                np.testing.assert_allclose(v[dep], rodrigues_rate(mesh.nodes[dep], omega[rep]), atol=1e-8)


@pytest.mark.parametrize("mask", ["10000", "01000", "00100", "00010", "00001"])
def test_single_modes_force_reorientation(mesh3, mask):
    v = reorientation_velocity(mesh3, build_velocity_gradient(mask))
    assert np.abs(v).max() > 1e-3


def test_convergence_failure_names_node(mesh2, monkeypatch):
    monkeypatch.setattr(cp, "_solve_stress", functools.partial(cp._solve_stress, max_iter=0))
    with pytest.raises(ConvergenceError) as info:
        reorientation_velocity(mesh2, build_velocity_gradient("10000"))
    assert info.value.node is not None
    assert "mesh node" in str(info.value)
    assert info.value.residual > 0
