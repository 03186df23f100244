import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from texture_forge.crystal_plasticity import ALL_MODES, build_velocity_gradient
from texture_forge.dataset_io import generate_initial_odfs
from texture_forge.errors import InvalidArgumentError, NumericalBlowupError
from texture_forge.homogenization import ObjectiveWeights, single_crystal_bound, softest_combination
from texture_forge.texture_evolution import (
    ProcessStepConfig,
    Trajectory,
    VelocityCache,
    apply_process,
    evolve,
    rate_operator,
    simulate_path,
)

SINGLE = ("10000", "01000", "00100", "00010", "00001")


@pytest.fixture(scope="module")
def cache3(mesh3):
    cache = VelocityCache(mesh3)
    for mode in ALL_MODES:
        cache(mode)
    return cache


@pytest.fixture(scope="module")
def seeds3(mesh3):
    return generate_initial_odfs(10, 99, mesh3)


def test_config_validation():
    for kwargs in ({"dt_total": 0}, {"substeps": 0}, {"substeps": 2.5}, {"scheme": "upwind"}):
        with pytest.raises(InvalidArgumentError):
            ProcessStepConfig(**kwargs)
    assert ProcessStepConfig().to_dict() == {"dt_total": 0.1, "substeps": 10, "clip_negative": True, "scheme": "galerkin"}


def test_zero_gradient_leaves_odf_unchanged(mesh3, seeds3):
    a = seeds3[0]
    out = evolve(mesh3, a, np.zeros((3, 3)))
    np.testing.assert_allclose(out, a, rtol=0, atol=1e-12)


@pytest.mark.parametrize("mask", SINGLE)
def test_uniform_input_is_forced(mesh3, cache3, mask):
    u = mesh3.uniform_odf()
    out = apply_process(mesh3, u, mask, velocity=cache3(mask))
    assert np.all(out >= 0)
    assert mesh3.node_weights @ out == pytest.approx(1.0, abs=1e-12)
    assert np.abs(out - u).max() > 0


def test_substep_convergence(mesh3, cache3, seeds3):
    a = seeds3[1]
    v = cache3("10000")

    def run(n):
        return apply_process(mesh3, a, "10000", ProcessStepConfig(substeps=n), velocity=v)

    ref = run(1000)
    coarse = np.linalg.norm(run(10) - ref)
    fine = np.linalg.norm(run(100) - ref)
    assert coarse / fine >= 5


@pytest.mark.parametrize("mode", ALL_MODES, ids=str)
def test_galerkin_operator_conserves_volume(mesh3, cache3, mode):
    k = rate_operator(mesh3, cache3(mode))
    q = mesh3.node_weights
    assert np.abs(q @ k).max() <= 1e-12 * np.abs(k).max()


def test_collocation_scheme_still_available(mesh3, cache3, seeds3):
    cfg = ProcessStepConfig(scheme="collocation")
    out = apply_process(mesh3, seeds3[0], "01000", cfg, velocity=cache3("01000"))
    assert mesh3.node_weights @ out == pytest.approx(1.0, abs=1e-12)
    assert np.all(out >= 0)


def test_closure_under_composition(mesh3, cache3, seeds3):
    a = seeds3[2]
    for mask in ("10000", "00101", "11111"):
        a = apply_process(mesh3, a, mask, velocity=cache3(mask))
    assert np.all(a >= 0)


def test_ten_steps_equal_simulate_path(mesh3, seeds3):
    path = ["10000", "00101", "01110", "11111", "00001", "10010", "01000", "00110", "10101", "00011"]
    a = seeds3[3]
    for mask in path:
        a = apply_process(mesh3, a, mask)
    traj = simulate_path(mesh3, seeds3[3], path)
    assert np.array_equal(traj.odfs[-1], a)
    assert len(traj.odfs) == 11 and len(traj.objectives) == 11 and len(traj.modes) == 10


def test_cached_velocity_is_bitwise_equal(mesh3, cache3, seeds3):
    a = seeds3[4]
    assert np.array_equal(apply_process(mesh3, a, "01101"), apply_process(mesh3, a, "01101", velocity=cache3("01101")))
    traj = simulate_path(mesh3, a, ["01101", "10000"], velocities=cache3)
    again = simulate_path(mesh3, a, ["01101", "10000"])
    assert all(np.array_equal(x, y) for x, y in zip(traj.odfs, again.odfs))


def test_drift_gate(mesh3, cache3, seeds3):
    drift = []
    for a in seeds3:
        for mode in ALL_MODES:
            apply_process(mesh3, a, mode, velocity=cache3(mode), drift_log=drift)
    assert len(drift) == 10 * 31 * 10
    assert max(drift) <= 1e-3


def test_empty_path(mesh3, seeds3):
    traj = simulate_path(mesh3, seeds3[5], [])
    assert len(traj.odfs) == 1 and traj.modes == [] and len(traj.objectives) == 1
    assert np.array_equal(traj.odfs[0], seeds3[5])


def test_repeated_mode_path(mesh3, cache3, seeds3, p3):
    traj = simulate_path(mesh3, seeds3[6], ["10000"] * 10, velocities=cache3)
    assert len(traj.odfs) == 11
    q = mesh3.node_weights
    _, hi = single_crystal_bound(p3, q=q)
    _, lo = softest_combination(p3, q=q)
    for a, f in zip(traj.odfs, traj.objectives):
        assert q @ a == pytest.approx(1.0, abs=1e-8)
        assert np.all(a >= 0)
        assert lo - 1e-9 <= f <= hi + 1e-9
    # objectives agree with the linear property-matrix form
    w = ObjectiveWeights().packed()
    np.testing.assert_allclose(traj.objectives, [w @ (p3.T @ a) for a in traj.odfs], rtol=0, atol=1e-9)


def test_simulation_is_deterministic(mesh3, seeds3):
    path = ["11000", "00111", "10101"]
    t1 = simulate_path(mesh3, seeds3[7], path)
    t2 = simulate_path(mesh3, seeds3[7], path)
    assert all(np.array_equal(x, y) for x, y in zip(t1.odfs, t2.odfs))
    assert t1.objectives == t2.objectives


def test_unnormalized_input_rejected(mesh3, seeds3):
    with pytest.raises(InvalidArgumentError):
        apply_process(mesh3, 2 * seeds3[0], "10000")


def test_blowup_names_substep(mesh3, seeds3):
    bad = np.full((mesh3.n_nodes, 3), np.nan)
    with pytest.raises(NumericalBlowupError) as info:
        with np.errstate(all="ignore"):
            evolve(mesh3, seeds3[0], build_velocity_gradient("10000").l, velocity=bad)
    assert info.value.substep is not None


def test_errors_carry_step_index(mesh3, cache3, seeds3):
    bad = np.full((mesh3.n_nodes, 3), np.nan)

    def velocities(mode):
        return bad if mode.mask == "00001" else cache3(mode)

    with pytest.raises(NumericalBlowupError) as info:
        with np.errstate(all="ignore"):
            simulate_path(mesh3, seeds3[0], ["10000", "00001"], velocities=velocities)
    assert info.value.step == 1
    assert "step 1" in str(info.value)


def test_trajectory_dict_round_trip(mesh3, cache3, seeds3):
    traj = simulate_path(mesh3, seeds3[8], ["00100", "10001"], velocities=cache3)
    again = Trajectory.from_dict(traj.to_dict())
    assert again.modes == traj.modes
    assert again.objectives == traj.objectives
    assert all(np.array_equal(x, y) for x, y in zip(again.odfs, traj.odfs))


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.lists(st.sampled_from(ALL_MODES), min_size=1, max_size=4))
def test_physical_constraints_hold(mesh3, cache3, seed, path):
    a0 = generate_initial_odfs(1, seed, mesh3)[0]
    traj = simulate_path(mesh3, a0, path, velocities=cache3)
    for a in traj.odfs:
        assert np.all(a >= 0)
        assert mesh3.node_weights @ a == pytest.approx(1.0, abs=1e-8)
