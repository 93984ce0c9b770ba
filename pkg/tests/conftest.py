import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from regenstop.bench.config import default_config  # noqa: E402
from regenstop.bench.run import city_data, train_imitation  # noqa: E402

VERDICTS = pytest.StashKey[list]()


class StationaryBench:
    """Lazily generated stationary benchmark data and imitation runs, shared per session."""

    def __init__(self):
        self.cfg = default_config(stationary=True)
        self._data = {}
        self._il = {}

    def data(self, seed):
        if seed not in self._data:
            self._data[seed] = city_data(self.cfg, seed)
        return self._data[seed]

    def imitation(self, alpha, seed, **overrides):
        key = (alpha, seed, tuple(sorted(overrides.items())))
        if key not in self._il:
            self._il[key] = train_imitation(self.cfg, self.data(seed), alpha, seed, **overrides)
        return self._il[key]


@pytest.fixture(scope="session")
def stationary():
    return StationaryBench()


@pytest.fixture
def verdict(request):
    """Record a one-line PASS/FAIL result for an acceptance criterion."""

    def record(number, ok, detail=""):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        print(line)
        request.config.stash.setdefault(VERDICTS, []).append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
