import numpy as np
import pytest

from rqab import wck as W


@pytest.fixture(scope="session")
def surface_k1():
    return W.load_or_build_surface(1)


@pytest.fixture(scope="session")
def surface_k2():
    return W.load_or_build_surface(2)


def flat_surface(k=1):
    """A surface with w identically one."""
    return W.WckSurface(k, np.array([-1e3, 1e3]), np.array([1e-3, 1e3]), np.ones((2, 2)), np.ones(2), {})


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture()
def acceptance_log(request):
    """Append ``(criterion, passed, detail)``; lines are printed in the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(lines, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
