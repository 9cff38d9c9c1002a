import time

import pytest

from edgetran import devices as D

_LINES: list[str] = []


class Criterion:
    """Times one acceptance criterion and records its PASS/FAIL line."""

    def __init__(self, name: str, limit_s: float):
        self.name = name
        self.limit_s = limit_s
        self.t0 = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def finish(self, ok: bool, detail: str) -> bool:
        dt = self.elapsed()
        within = dt < self.limit_s
        passed = bool(ok) and within
        line = f"{self.name} {'PASS' if passed else 'FAIL'}: {detail} [{dt:.1f} s, limit {self.limit_s:g} s]"
        _LINES.append(line)
        print(line)
        return passed


@pytest.fixture
def criterion():
    return Criterion


@pytest.fixture(scope="session")
def device_table():
    return D.load_devices()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
