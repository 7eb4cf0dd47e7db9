import json

import pytest
from hypothesis import HealthCheck, settings

from flowmosaic import synthfield as sf
from flowmosaic.cli import main

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def intr():
    return sf.default_intrinsics()


@pytest.fixture(scope="session")
def field():
    return sf.generate_field(7, size=(1536, 1536))


@pytest.fixture(scope="session")
def flight(field, intr):
    plan = sf.plan_flight(field, intr, 15.0, 0.5, 0.5)
    frames, truths = sf.render_flight(field, plan, intr, 2.0)
    return plan, frames, truths


SMALL = {"simulation": {"field_width": 1024, "field_height": 768, "image_size": 256}}


@pytest.fixture(scope="session")
def small_config(tmp_path_factory):
    """Config file for a 12-frame, 256 px simulated survey."""
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture(scope="session")
def small_sim(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("sim") / "scene"
    assert main(["simulate", "--config", str(small_config), "--out", str(out)]) == 0
    return out


_ACCEPTANCE = []


def record(line):
    """Queue a line for the end-of-run acceptance summary."""
    _ACCEPTANCE.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
