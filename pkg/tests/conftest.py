import numpy as np
import pytest
from scipy.stats import norm

from stcp.mcmc import Hyperparams, SamplerConfig, initialize
from stcp.model import SpaceTimeGrid


def _k(k: float, count: int) -> float:
    # Bonferroni: a vector check keeps the family-wise level of one k-SE check
    if count <= 1:
        return k
    return float(norm.isf(norm.sf(k) / count))


def mc_close(draws, expected, k: float = 3.0) -> bool:
    """True when the sample mean is within ``k`` Monte Carlo standard errors."""
    d = np.asarray(draws, float)
    se = d.std(axis=0, ddof=1) / np.sqrt(d.shape[0])
    return bool(np.all(np.abs(d.mean(axis=0) - expected) <= _k(k, se.size) * se))


def mc_var_close(draws, expected_var, k: float = 3.0) -> bool:
    """Check the sample variance using the standard error of ``(x - mean)^2``."""
    d = np.asarray(draws, float)
    sq = (d - d.mean(axis=0)) ** 2
    se = sq.std(axis=0, ddof=1) / np.sqrt(d.shape[0])
    return bool(np.all(np.abs(sq.mean(axis=0) - expected_var) <= _k(k, se.size) * se))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grid():
    return SpaceTimeGrid.lattice(3, 6, origin_index=4)


def make_state(grid, y=None, seed=0, **cfg):
    """A sampler state on ``grid`` with a quiet default configuration."""
    defaults = dict(iterations=10, burn_in=0, adapt=False)
    defaults.update(cfg)
    config = SamplerConfig(**defaults)
    hyper = Hyperparams()
    if y is None:
        y = np.random.default_rng(seed).standard_normal((grid.m, grid.n))
    return initialize(y, grid, config, hyper, seed), y


def pytest_addoption(parser):
    group = parser.getgroup("acceptance")
    group.addoption("--smoke", action="store_true", help="reduced simulation study (the default)")
    group.addoption("--full", action="store_true", help="full-size simulation study")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
