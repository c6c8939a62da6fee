import numpy as np
import pytest

from gga_lab.data import CompositeMinibatch, make_gaussian_toy, sample_composite
from gga_lab.model import ModelSpec

POLY = ModelSpec(family="poly-logistic", input_dim=2, degree=4, num_classes=2)


def random_composite(rng, n_domains=2, b=16, input_dim=2, num_classes=2, shift=0.5):
    parts = {}
    for d in range(n_domains):
        X = rng.normal(size=(b, input_dim)) + shift * d
        y = rng.integers(0, num_classes, size=b)
        parts[f"d{d}"] = (X, y)
    return CompositeMinibatch(parts)


@pytest.fixture(scope="session")
def toy():
    return make_gaussian_toy(seed=0)


@pytest.fixture
def toy_batch(toy):
    return sample_composite(toy, 32, np.random.default_rng(5))


_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, ok: bool, detail: str = "") -> None:
        _CRITERIA[number] = (bool(ok), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
