import numpy as np
import pytest

from lfkit import nn
from lfkit.core import AngularGrid, LightField
from lfkit.scene import Layer, SceneSpec, make_synthetic_scene


@pytest.fixture(autouse=True)
def _double_precision():
    with nn.precision("double"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_lf(rng):
    return LightField(rng.uniform(size=(3, 4, 6, 5, 3)))


@pytest.fixture(scope="session")
def plane_scene():
    spec = SceneSpec([Layer(0.7)], AngularGrid(5, 5), 32, 32, (-2.0, 2.0))
    return make_synthetic_scene(spec, 3)


@pytest.fixture(scope="session")
def occluded_scene():
    spec = SceneSpec([Layer(-0.8), Layer(1.2, "disc", (16.0, 16.0), (7.0, 0.0))],
                     AngularGrid(5, 5), 32, 32, (-2.0, 2.0))
    return make_synthetic_scene(spec, 5)


_ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Record ``name -> (passed, detail)`` for the criterion summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}  {detail}")
