import numpy as np
import pytest

from tapkit.signal_core import Waveform, save_wav

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def write_wav(tmp_path):
    def _write(name, samples, fs=16000):
        p = tmp_path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        save_wav(p, Waveform(samples, fs))
        return p
    return _write
