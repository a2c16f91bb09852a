import numpy as np
import pytest

from cratercount.lpm import LpmModel
from cratercount.scores import Axis, HistogramSpec
from cratercount.templates import APPEARANCE, DP


def gaussian_pmf(n_bins, centre, width):
    x = np.arange(n_bins)
    p = np.exp(-0.5 * ((x - centre) / width) ** 2)
    return p / p.sum()


def spec_1d(n_bins):
    return HistogramSpec((Axis(DP, APPEARANCE, n_bins, 0.0, 1.0),))


def two_class_model(n_bins=40, train_counts=(20000.0, 20000.0), centres=(14, 24), width=5.0):
    """One fixed PMF per class; attributed training counts are the expected histograms."""
    pt = gaussian_pmf(n_bins, centres[0], width)
    pf = gaussian_pmf(n_bins, centres[1], width)
    comps = {"true": pt[:, None], "false": pf[:, None]}
    attr = {"true": train_counts[0] * pt[:, None], "false": train_counts[1] * pf[:, None]}
    thist = {"true": attr["true"].T, "false": attr["false"].T}
    return LpmModel(spec_1d(n_bins), comps, thist, attr)


@pytest.fixture
def model_2c():
    return two_class_model()


# one PASS/FAIL line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES = {}


def record_criterion(number: int, passed: bool, detail: str):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
