import numpy as np
import pytest

from robust_miso.model import ChannelSet, SystemConfig, sample_channels

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def random_psd(rng, n, rank=None, trace=1.0):
    rank = n if rank is None else rank
    g = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    q = g @ g.conj().T
    return q * (trace / np.trace(q).real)


def random_covs(rng, n, k, power):
    """Random PSD covariances of random rank sharing ``power``."""
    shares = rng.dirichlet(np.ones(k)) * power
    return np.array([random_psd(rng, n, rng.integers(1, n + 1), s) for s in shares])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_system():
    cfg = SystemConfig(2, 2, 10.0, 0.01)
    return cfg, ChannelSet(sample_channels(cfg, 7), 0.1)
