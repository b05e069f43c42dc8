import numpy as np
import pytest

from quantjoint.distributions import rng_stream


@pytest.fixture
def rng():
    return rng_stream(20240611)


def ks_stat(sample, cdf):
    """One-sample Kolmogorov-Smirnov distance."""
    x = np.sort(np.asarray(sample))
    n = x.shape[0]
    f = cdf(x)
    return float(max(np.max(np.arange(1, n + 1) / n - f), np.max(f - np.arange(n) / n)))


def grid_cdf(logf, lo, hi, m=20001):
    """Numerical CDF of an unnormalised log density on a fine grid."""
    xs = np.linspace(lo, hi, m)
    h = np.array([logf(x) for x in xs])
    p = np.exp(h - h.max())
    c = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(xs))])
    c /= c[-1]
    return lambda x: np.interp(x, xs, c)


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
