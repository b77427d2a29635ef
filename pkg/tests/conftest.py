import numpy as np
import pytest

from mdogen.coupling import CouplingSpace, LinearCoupling
from mdogen.problems import DesignPartition


def central_fd(fun, x, step=1e-6):
    """Central finite differences of a scalar or vector function."""
    x = np.asarray(x, dtype=float)
    columns = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        columns.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * step))
    return np.stack(columns, axis=-1)


def hand_system(box=None):
    """Two scalar disciplines: a = (1, 1), all B entries 1, C_12 = C_21 = 0.5.

    At x = 0 the coupling solution is y = (2, 2).
    """
    part = DesignPartition.uniform((1, 1, 1))
    space = CouplingSpace((1, 1)) if box is None else CouplingSpace.box((1, 1), *box)
    return LinearCoupling.from_blocks(
        part, space, [1.0, 1.0], [1.0, 1.0], [1.0, 1.0], {(1, 2): 0.5, (2, 1): 0.5}
    )


@pytest.fixture
def example_system():
    return hand_system()


# Acceptance results, filled by tests/test_acceptance.py and printed at the end.
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        verdict, text = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {text}")
