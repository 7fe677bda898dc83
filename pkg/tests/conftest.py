import numpy as np
import pytest

from flowlab.fieldcore import Grid2D, RealField


def band_limited_field(n: int, kmax: int, seed: int = 0, length: float = 2 * np.pi) -> RealField:
    """Random real field built from modes with max(|mx|, |my|) <= kmax."""
    rng = np.random.default_rng(seed)
    grid = Grid2D(n, length)
    x, y = grid.coords()
    data = np.zeros((n, n))
    scale = 2 * np.pi / length
    for mx in range(-kmax, kmax + 1):
        for my in range(0, kmax + 1):
            a, b = rng.standard_normal(2)
            phase = scale * (mx * x + my * y)
            data += a * np.cos(phase) + b * np.sin(phase)
    return RealField(grid, data)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
