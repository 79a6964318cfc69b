import pytest

from nmrx.molecule import load_shift_tables
from nmrx.synth import library

_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "FAIL"
        if hasattr(rep, "wasxfail"):
            status = "FAIL (expected, see xfail reason)"
        prev = _RESULTS.get(n)
        if prev is None or prev[1] == "PASS" or (status == "FAIL" and prev[1] != "FAIL"):
            _RESULTS[n] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, status = _RESULTS[n]
        terminalreporter.write_line(f"{status} criterion {n:2d}: {title}")


@pytest.fixture(scope="session")
def tables():
    return load_shift_tables()


@pytest.fixture(scope="session")
def lib(tables):
    return library(tables)


@pytest.fixture(scope="session")
def library_molecule_spectrum(lib):
    """``f(k_or_id, small=False)``: noise-free phased H1 spectrum of a library entry."""
    from helpers import molecule_spectrum

    by_id = {c.id: c for c in lib}

    def make(key, small=False):
        return molecule_spectrum(by_id[key] if isinstance(key, str) else lib[key], small)

    return make
