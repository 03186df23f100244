import os
import re
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from texture_forge.dataset_io import generate_dataset, generate_initial_odfs, records_by_mode, split
from texture_forge.fundamental_mesh import assemble_property_matrix, build_mesh
from texture_forge.homogenization import COPPER
from texture_forge.surrogate_nn import ModelSuite, TrainConfig, init_model, train
from texture_forge.crystal_plasticity import ALL_MODES

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# the desk-scale surrogate suite shared by the accuracy, search and timing tests
SUITE_ODFS = 500
SUITE_DATA_SEED = 11
SUITE_SPLIT_SEED = 0
SUITE_EPOCHS = TrainConfig.epochs


@pytest.fixture(scope="session")
def mesh1():
    return build_mesh(1)


@pytest.fixture(scope="session")
def mesh2():
    return build_mesh(2)


@pytest.fixture(scope="session")
def mesh3():
    return build_mesh(3)


@pytest.fixture(scope="session")
def mesh4():
    return build_mesh(4)


@pytest.fixture(scope="session")
def p3(mesh3):
    return assemble_property_matrix(mesh3, COPPER)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Records one PASS/FAIL line per criterion test, even when the test errors first."""
    number = int(re.search(r"criterion_(\d+)", request.node.name).group(1))
    calls = []

    def record(ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        calls.append(line)
        request.config.stash[ACCEPTANCE_LINES].append(line)
        print(line)
        return ok

    yield record
    if not calls:
        request.config.stash[ACCEPTANCE_LINES].append(f"criterion {number}: FAIL (raised before a result)")


@pytest.fixture(scope="session")
def suite_timings():
    return {}


@pytest.fixture(scope="session")
def suite_data(mesh3, suite_timings):
    """500 seed ODFs x 31 modes, split 80/20 by input ODF."""
    start = time.perf_counter()
    odfs = generate_initial_odfs(SUITE_ODFS, SUITE_DATA_SEED, mesh3)
    records = generate_dataset(mesh3, odfs, seed=SUITE_DATA_SEED)
    train_set, test_set = split(records, 0.8, SUITE_SPLIT_SEED)
    suite_timings["dataset_s"] = time.perf_counter() - start
    return records, records_by_mode(train_set), records_by_mode(test_set)


@pytest.fixture(scope="session")
def trained_suite(mesh3, suite_data, suite_timings):
    """All 31 models trained with the default configuration (seed = mode id)."""
    start = time.perf_counter()
    _, train_by, test_by = suite_data
    models, histories = {}, {}
    for mode in ALL_MODES:
        model = init_model(mode, mesh3.node_weights, seed=mode.id)
        model, hist = train(model, train_by[mode.mask], test_by[mode.mask], TrainConfig(epochs=SUITE_EPOCHS, seed=mode.id))
        models[mode.mask] = model
        histories[mode.mask] = hist
    suite_timings["training_s"] = time.perf_counter() - start
    return ModelSuite(models), histories
