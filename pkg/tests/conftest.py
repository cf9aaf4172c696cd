import os

import numpy as np
import pytest

from phidiv.model import SurveyDataset, read_survey_csv

DATA_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "src", "phidiv", "data")
UNC_PATH = os.path.abspath(os.path.join(DATA_DIR, "unc.csv"))


@pytest.fixture(scope="session")
def unc_path():
    return UNC_PATH


@pytest.fixture(scope="session")
def unc():
    return read_survey_csv(UNC_PATH)


def random_dataset(rng, d=2, k=3, n=12, strata=2, max_size=15, positive=False):
    """Small synthetic survey with every category observed at least once."""
    X = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))]) if k > 1 else np.ones((n, 1))
    sizes = rng.integers(2, max_size + 1, size=n)
    probs = rng.dirichlet(np.ones(d + 1), size=n)
    counts = np.vstack([rng.multinomial(s, p) for s, p in zip(sizes, probs)])
    if positive:
        counts = counts + 1
        sizes = counts.sum(axis=1)
    # make sure no category is empty overall
    for s in range(d + 1):
        if counts[:, s].sum() == 0:
            counts[0, s] += 1
            sizes[0] += 1
    weights = rng.uniform(0.5, 3.0, size=n)
    strat = np.arange(n) % strata
    return SurveyDataset(strat, weights, sizes, counts, X)


@pytest.fixture
def make_dataset():
    return random_dataset


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[key])
