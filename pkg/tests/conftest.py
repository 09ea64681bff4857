import numpy as np
import pytest

from dectrain.pretraining import pretrained_learner
from dectrain.stream import EnvironmentSpec, generate_stream

SMALL_SPEC = EnvironmentSpec(n_segments=2, segment_length=60)
FAST_LEARNER = {"pretrain_epochs": 5, "n_source": 400}


@pytest.fixture
def small_spec():
    return SMALL_SPEC


@pytest.fixture(scope="session")
def small_stream():
    return generate_stream(SMALL_SPEC, 3)


@pytest.fixture(scope="session")
def _base_learner():
    return pretrained_learner(SMALL_SPEC, 3, FAST_LEARNER)


@pytest.fixture
def learner(_base_learner):
    return _base_learner.copy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
