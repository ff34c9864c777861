import numpy as np
import pytest

from vprmerger.pipeline import SystemConfig, train_system
from vprmerger.synthetic import make_traversal

TINY_PLACES = 40


def tiny_config(**overrides) -> SystemConfig:
    """Small enough to train in a couple of seconds, large enough to converge."""
    params = dict(neurons=4, baseline_epochs=50, base_seed=5)
    params.update(overrides)
    return SystemConfig(**params)


@pytest.fixture(scope="session")
def tiny_frames() -> np.ndarray:
    return make_traversal(TINY_PLACES, seed=11)


@pytest.fixture(scope="session")
def tiny_trained(tiny_frames):
    return train_system(tiny_frames, tiny_config())


@pytest.fixture(scope="session")
def tiny_system(tiny_trained):
    return tiny_trained[0]


def pytest_terminal_summary(terminalreporter):
    acceptance = __import__("sys").modules.get("test_acceptance")
    lines = getattr(acceptance, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
