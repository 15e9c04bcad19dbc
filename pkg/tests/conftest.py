import json
from pathlib import Path

import numpy as np
import pytest

from propercal import LabeledPredictions

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixture_a():
    """Two identical predictions (0.6, 0.4) with opposite labels."""
    return LabeledPredictions([[0.6, 0.4], [0.6, 0.4]], [0, 1])


@pytest.fixture(scope="session")
def oracles():
    return json.loads((FIXTURES / "oracle.json").read_text())["oracles"]


def oracle_key(k, F, t1=0.9, t2=0.6):
    return f"k={k},t1={t1},t2={t2},F={F}"


def random_dataset(rng, n, k, concentration=1.0):
    probs = rng.dirichlet(np.full(k, concentration), size=n)
    labels = rng.integers(0, k, size=n)
    return LabeledPredictions(probs, labels)


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {num:>2}: {detail}")
