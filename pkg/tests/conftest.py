import numpy as np
import pytest

from calorinet.synth import generate_dataset


@pytest.fixture(scope="session")
def small_dataset():
    # 3 subjects, 40 s each, small images; gaps exercise the missing-data paths
    return generate_dataset(3, 1, 40.0, image_shape=(12, 16), seed=11, gaps=True, min_frames=250)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
