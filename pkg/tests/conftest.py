import pytest

from rankr_fnn import _kernels as K

BACKENDS = ["numpy"] + (["numba"] if K.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    monkeypatch.setattr(K, "USE_NUMBA", request.param == "numba")
    return request.param


# Acceptance criteria register their verdicts here; printed after the run.
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
