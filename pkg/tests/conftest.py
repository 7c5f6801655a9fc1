import numpy as np
import pytest

from smaplab.modulation import deficit
from smaplab.radial import build_grid
from smaplab.sphere import HarmonicParams, harmonic_map, log_bump, perturbed_map

CRITERIA: dict = {}


def report(number: int, ok: bool, detail: str):
    """Record one acceptance line and fail the calling test when ok is False."""
    line = f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}: {detail}"
    CRITERIA[number] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])


@pytest.fixture(scope="session")
def grid():
    return build_grid()


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(n=1024)


@pytest.fixture(scope="session")
def harmonic(grid):
    def make(m, s=1.0, alpha=0.0):
        return harmonic_map(m, HarmonicParams(s, alpha), grid)

    return make


def random_perturbed(grid, rng, m=None, delta_max=0.1):
    """Perturbed harmonic map with a random smooth displacement and deficit <= delta_max."""
    m = int(rng.integers(1, 4)) if m is None else m
    s = float(np.exp(rng.uniform(-0.7, 0.7)))
    alpha = float(rng.uniform(-np.pi, np.pi))
    n_bumps = int(rng.integers(1, 4))
    centers = np.exp(rng.uniform(-1.0, 1.0, n_bumps))
    widths = rng.uniform(0.3, 0.9, n_bumps)
    coef = rng.normal(size=n_bumps) + 1j * rng.normal(size=n_bumps)
    coef /= np.sum(np.abs(coef))
    target = rng.uniform(0.005, delta_max)

    def build(c):
        def z(r):
            return c * sum(a * log_bump(r, x, w) for a, x, w in zip(coef, centers, widths))

        return perturbed_map(m, z, grid, HarmonicParams(s, alpha))

    c = target
    for _ in range(6):
        c *= target / deficit(build(c))
    return build(c)


@pytest.fixture(scope="session")
def perturbed_maps(grid):
    """The fifty randomized maps shared by the gauge identity checks."""
    rng = np.random.default_rng(20240611)
    return [random_perturbed(grid, rng) for _ in range(50)]
