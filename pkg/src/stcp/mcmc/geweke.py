"""Joint-distribution test of the sampler.

Draws of ``(parameters, data)`` obtained directly from the prior and the
likelihood (marginal-conditional) are compared with draws from a chain that
alternates one sampler sweep with a fresh data draw (successive-conditional).
Both target the same joint distribution when the sweep leaves the posterior
invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import SpaceTimeGrid
from .chain import draw_prior, pcg_sweep, simulate_data
from .state import DECAYS, Hyperparams, SamplerConfig, SamplerState

STAT_NAMES = ("alpha0", "gamma0F", "sigma_sq", "sigma_U_sq", "tau0", "log_delta1", "beta_lon",
              "gamma0R0")


def stat_names(variance_mode: str = "equal") -> tuple:
    """Monitored statistics; the extra-noise variance only moves in the unequal modes."""
    return STAT_NAMES if variance_mode == "equal" else STAT_NAMES + ("sigma_gamma_sq",)


def _stats(state: SamplerState) -> np.ndarray:
    free = np.flatnonzero(state.free)
    base = [state.mean.alpha0, state.mean.gamma0F, state.cov.sigma_sq, state.cov.sigma_U_sq,
            state.cp.tau0, state.log_delta[free[0]], state.cov.beta[0], state.mean.gamma0R[0]]
    if state.cov.variance_mode != "equal":
        base.append(state.cov.sigma_gamma_sq)
    base = np.array(base)
    return np.concatenate([base, base ** 2])


def stat_labels(variance_mode: str = "equal") -> list[str]:
    names = stat_names(variance_mode)
    return list(names) + [f"{s}^2" for s in names]


@dataclass
class GewekeResult:
    labels: list
    marginal_mean: np.ndarray
    successive_mean: np.ndarray
    z: np.ndarray

    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))


def tiny_setup(m: int = 8, random_effects: bool = True, delta_update: str = "integrated",
               variance_mode: str = "equal",
               backend: str | None = None) -> tuple[SpaceTimeGrid, SamplerConfig, Hyperparams, dict]:
    """A 2 x 2 lattice with fixed decay rates and moment-friendly priors."""
    grid = SpaceTimeGrid.lattice(2, m, origin_index=0)
    cfg = SamplerConfig(iterations=2, burn_in=1, variance_mode=variance_mode,
                        delta_update=delta_update,
                        random_effects=random_effects, fixed=DECAYS, adapt=False,
                        init_log_var_delta=0.0, init_log_var_effects=-2.0, backend=backend)
    hyper = Hyperparams(s_a_sq=4.0, s_b_sq=1.0, a1=6, b1=5, a2=6, b2=5, a3=6, b3=5, a4=6, b4=5,
                        a5=6, b5=5)
    decays = {"phi_U": 0.5, "psi_U": 0.7, "psi_Delta": 0.7, "psi_g0": 0.7, "psi_g1": 0.7}
    return grid, cfg, hyper, decays


def _batch_se(x: np.ndarray, batches: int) -> np.ndarray:
    k = x.shape[0] // batches
    means = x[: k * batches].reshape(batches, k, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(batches)


def geweke_test(n: int = 100_000, seed=0, batches: int = 200, **setup) -> GewekeResult:
    """Run both simulators for ``n`` draws each and return z-scores per statistic."""
    grid, cfg, hyper, decays = tiny_setup(**setup)
    ss = np.random.SeedSequence(seed)
    r_marg, r_succ = (np.random.default_rng(s) for s in ss.spawn(2))

    marg = np.empty((n, 2 * len(stat_names(cfg.variance_mode))))
    for i in range(n):
        marg[i] = _stats(draw_prior(grid, cfg, hyper, r_marg, decays))

    state = draw_prior(grid, cfg, hyper, r_succ, decays)
    y = simulate_data(state, r_succ)
    succ = np.empty_like(marg)
    for i in range(n):
        pcg_sweep(state, y)
        y = simulate_data(state, state.rng)
        succ[i] = _stats(state)

    se_m = marg.std(axis=0, ddof=1) / np.sqrt(n)
    se_s = _batch_se(succ, batches)
    diff = marg.mean(0) - succ.mean(0)
    se = np.sqrt(se_m ** 2 + se_s ** 2)
    # a statistic held constant by both simulators (e.g. a disabled effect) scores zero
    z = np.divide(diff, se, out=np.zeros_like(diff), where=se > 0)
    return GewekeResult(stat_labels(cfg.variance_mode), marg.mean(0), succ.mean(0), z)
