import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from omnisweep.geometry import default_hexagon_rig
from omnisweep.suite import bundled_rig, bundled_scene

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def hex_rig():
    return default_hexagon_rig()


@pytest.fixture(scope="session")
def small_rig():
    """Half-size cameras, 120x60 sphere, coarse hypotheses: fast table builds."""
    return default_hexagon_rig(width=240, height=136, sphere_width=120, sphere_height=60,
                               crop_rows=(20, 40), num_hypotheses=8)


@pytest.fixture(scope="session")
def mini_rig():
    return bundled_rig("mini")


@pytest.fixture(scope="session")
def mini_scene():
    return bundled_scene("mini")


@pytest.fixture(scope="session")
def mini_images(mini_rig, mini_scene):
    from omnisweep.synth import render_rig
    return render_rig(mini_scene, mini_rig, supersample=2, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from _acceptance_runs import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
