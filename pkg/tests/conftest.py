import numpy as np
import pytest

from pedxing.data.dataset import samples_from_tracks
from pedxing.data.synthetic import render_synthetic
from pedxing.data.tracks import build_tracks


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def easy_data():
    return render_synthetic(12, seed=5, difficulty="easy")


@pytest.fixture(scope="session")
def easy_clips(easy_data):
    return samples_from_tracks(build_tracks(easy_data.records), easy_data.images.__getitem__)


# ------------------------------------------------------------ acceptance log

_VERDICTS = []


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; the line is printed and summarised at the end."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
