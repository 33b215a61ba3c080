import numpy as np
import pytest

from hybridskin.config import ExperimentConfig
from hybridskin.forward import SensorModel, default_protocol
from hybridskin.mesh import build_pad_layout, build_rect_mesh, place_grid_electrodes
from hybridskin.pipeline import build_bundle


@pytest.fixture(scope="session")
def default_mesh():
    return build_rect_mesh(200, 200, 5)


@pytest.fixture(scope="session")
def small_model():
    """8x8-node mesh with a 3x3 electrode grid and 2x2 pads."""
    mesh = build_rect_mesh(70, 70, 10)
    electrodes = place_grid_electrodes(mesh, 3, 3, 5)
    return SensorModel(mesh, electrodes, build_pad_layout(mesh, 2, 2), 1.0)


@pytest.fixture(scope="session")
def small_protocol(small_model):
    return default_protocol(small_model.electrodes)


@pytest.fixture(scope="session")
def desk_config():
    """100 mm square, 3x3 electrodes: quick enough for pipeline tests."""
    return ExperimentConfig(width_mm=100, height_mm=100, mesh_pitch_mm=5, electrode_rows=3,
                            electrode_cols=3, electrode_margin_mm=10, profile_sigma_mm=8.0)


@pytest.fixture(scope="session")
def desk_bundle(desk_config):
    return build_bundle(desk_config)


@pytest.fixture(scope="session")
def default_bundle():
    return build_bundle(ExperimentConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS_KEY] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line, then assert it."""
    lines = request.config.stash[_VERDICTS_KEY]

    def check(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
