import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def order(errors, hs=None):
    """Least-squares slope of log(error) against log(h) for halving h."""
    errors = np.asarray(errors, float)
    hs = np.asarray(hs if hs is not None else 0.5 ** np.arange(len(errors)), float)
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def tail_order(errors):
    """Observed order from the two finest levels."""
    return float(np.log2(errors[-2] / errors[-1]))


def converges(errors, min_order=1.8, floor=1e-12):
    """Second-order decay, or round-off everywhere."""
    if max(errors) < floor:
        return True
    return tail_order(errors) >= min_order


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
