import contextlib
import time

import pytest

_RESULTS = {}


@pytest.fixture
def criterion():
    """Context manager that records one acceptance criterion's outcome.

    ``with criterion(3, "FIR design fidelity") as note:`` runs the checks;
    ``note("...")`` attaches a measured value to the report line.
    """

    @contextlib.contextmanager
    def run(number, title, max_seconds=None):
        details = []
        start = time.perf_counter()
        try:
            yield details.append
            elapsed = time.perf_counter() - start
            details.append(f"{elapsed:.2f} s")
            if max_seconds is not None:
                assert elapsed < max_seconds, f"took {elapsed:.1f} s, limit {max_seconds} s"
        except BaseException as exc:
            _RESULTS[number] = ("FAIL", title, "; ".join(details + [f"{type(exc).__name__}: {exc}"]))
            raise
        _RESULTS[number] = ("PASS", title, "; ".join(details))

    return run


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}: {title} ({detail})")
