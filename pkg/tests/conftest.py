import numpy as np
import pytest

from madbayes import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Run a test once per importable kernel backend."""
    previous = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


def set_partition_labels(N):
    """Restricted growth strings, written independently of the oracle module."""
    out = [[0]]
    for _ in range(1, N):
        out = [p + [k] for p in out for k in range(max(p) + 2)]
    return out


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def report(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
