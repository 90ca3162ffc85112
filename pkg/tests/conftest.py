import numpy as np
import pytest

from ensemblereg import _backend, _pykernels

BACKENDS = ["python"] + (["cython"] if _backend.NAME == "cython" else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    if request.param == "python":
        monkeypatch.setattr(_backend, "kernels", _pykernels)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion
_acceptance = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))
    elif report.when == "setup" and report.failed and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], "error"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
