import numpy as np
import pytest

from seqdropnet.volume import LabelVolume, MultiChannelVolume, Volume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_stack(rng, dims=(6, 5, 4), names=("T1", "T2", "PD", "FLAIR")):
    return MultiChannelVolume(tuple(Volume(rng.random(dims), n) for n in names))


def make_labels(rng, dims=(6, 5, 4), probs=(0.6, 0.1, 0.3)):
    return LabelVolume(rng.choice([0.0, 0.5, 1.0], size=dims, p=probs))


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, title, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {title}" + (f" ({detail})" if detail else ""))
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
