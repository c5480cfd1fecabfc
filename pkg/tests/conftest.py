import numpy as np
import pytest

from bsgal.datastream import Batch
from bsgal.model import ClassifierConfig, MLPClassifier

_ACCEPTANCE_LINES: list[str] = []


def random_batch(rng, n, dim, num_classes, generated=False, id_base=0):
    feats = rng.normal(size=(n, dim))
    labels = rng.integers(0, num_classes, size=n)
    flags = np.full(n, generated, dtype=bool)
    return Batch(feats, labels, flags, np.zeros(n), id_base + np.arange(n))


def random_instance(rng, max_hidden=12):
    """A small random model, parameters and a real/generated/test triple."""
    d = int(rng.integers(2, 8))
    h = int(rng.integers(2, max_hidden + 1))
    c = int(rng.integers(2, 6))
    model = MLPClassifier(ClassifierConfig(input_dim=d, hidden_dim=h, num_classes=c))
    params = rng.normal(scale=0.5, size=model.num_params)
    real = random_batch(rng, int(rng.integers(2, 10)), d, c)
    gen = random_batch(rng, int(rng.integers(1, 6)), d, c, generated=True, id_base=1000)
    test = random_batch(rng, int(rng.integers(2, 10)), d, c, id_base=2000)
    return model, params, real, gen, test


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_model():
    return MLPClassifier(ClassifierConfig(input_dim=4, hidden_dim=5, num_classes=3))


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
