import sys

import numpy as np
import pytest

from orderattack.synthetic import gen_synthetic_db


@pytest.fixture(scope="session")
def standard_data():
    """The default 10 x 100 synthetic database and its linear embedder."""
    return gen_synthetic_db()


@pytest.fixture(scope="session")
def small_data():
    return gen_synthetic_db(classes=4, per_class=25, embed_dim=8, seed=3, image_shape=(1, 8, 8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in list(sys.modules.items())
                if name.rsplit(".", 1)[-1] == "test_acceptance"), None)
    lines = mod.report_lines() if mod is not None else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
