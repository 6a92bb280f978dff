"""Configuration, adaptive proposals, sampler state and chain traces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky

from ..kron_linalg import InvalidInput, KroneckerCovariance, NumericalFailure, exp_correlation
from ..model import (
    ChangepointField,
    CovarianceParams,
    LatentState,
    MeanParams,
    SpaceTimeGrid,
    VARIANCE_MODES,
    active_mask,
    build_tau,
    mean_surface,
)

DECAYS = ("phi_U", "psi_U", "psi_Delta", "psi_g0", "psi_g1")
TARGET_ACCEPT = 0.44


@dataclass
class Hyperparams:
    """Prior settings.

    Inverse-gamma pairs: ``(a1, b1)`` narrow measurement variance,
    ``(a2, b2)`` variance increment, ``(a3, b3)`` U scale, ``(a4, b4)``
    Delta scale, ``(a5, b5)`` random-effect scales (truncated above at
    ``gamma_F**2 / 9``).
    """

    s_a_sq: float = 100.0
    s_b_sq: float = 100.0
    a1: float = 2.0
    b1: float = 1.0
    a2: float = 2.0
    b2: float = 1.0
    a3: float = 2.0
    b3: float = 1.0
    a4: float = 2.0
    b4: float = 1.0
    a5: float = 2.0
    b5: float = 1.0
    decay_bounds: dict = field(default_factory=lambda: {k: (0.01, 10.0) for k in DECAYS})
    tau0_support: np.ndarray | None = None
    tau0_prior: np.ndarray | None = None
    trunc_floor: float = 1e-8

    def support(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Candidate values for ``tau0`` and their prior probabilities."""
        sup = np.arange(1, m + 1) if self.tau0_support is None else np.asarray(self.tau0_support, int)
        if self.tau0_prior is None:
            p = np.full(sup.size, 1.0 / sup.size)
        else:
            p = np.asarray(self.tau0_prior, float)
        if sup.shape != p.shape or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise InvalidInput("tau0 prior must be a probability vector over the support")
        if np.any(sup < 1) or np.any(sup > m) or m not in sup:
            raise InvalidInput("tau0 support must lie in 1..M and include M")
        return sup, p / p.sum()

    def check(self) -> None:
        for name in ("s_a_sq", "s_b_sq", "a1", "b1", "a2", "b2", "a3", "b3", "a4", "b4", "a5", "b5"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"{name} must be positive")
        for name, (lo, hi) in self.decay_bounds.items():
            if not 0 < lo < hi:
                raise InvalidInput(f"bounds for {name} must satisfy 0 < l < u")


@dataclass
class AdaptiveProposal:
    """Batch-adapted log proposal variances for component-wise random walks."""

    log_var: np.ndarray
    batch_size: int = 50
    batch_accept_counts: np.ndarray = None
    batch_index: int = 0
    in_batch: int = 0
    total_accepts: np.ndarray = None
    total_proposals: int = 0

    def __post_init__(self):
        self.log_var = np.asarray(self.log_var, dtype=float).copy()
        n = self.log_var.size
        if self.batch_accept_counts is None:
            self.batch_accept_counts = np.zeros(n)
        if self.total_accepts is None:
            self.total_accepts = np.zeros(n)

    @classmethod
    def uniform(cls, n: int, log_var: float, batch_size: int = 50) -> "AdaptiveProposal":
        return cls(np.full(n, float(log_var)), batch_size)

    @property
    def sd(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)

    def record(self, accepted, adapt: bool = True) -> None:
        accepted = np.asarray(accepted, dtype=float)
        self.batch_accept_counts += accepted
        self.total_accepts += accepted
        self.total_proposals += 1
        self.in_batch += 1
        if self.in_batch == self.batch_size:
            if adapt:
                adapt_batch(self)
            self.batch_accept_counts[:] = 0
            self.in_batch = 0

    def acceptance_rate(self) -> np.ndarray:
        return self.total_accepts / max(self.total_proposals, 1)


def adaptation_step(j: int) -> float:
    return min(0.1, 1.0 / np.sqrt(j))


def adapt_batch(ap: AdaptiveProposal) -> None:
    """Move each log variance up if its batch acceptance rate exceeded 0.44."""
    ap.batch_index += 1
    step = adaptation_step(ap.batch_index)
    rate = ap.batch_accept_counts / ap.batch_size
    ap.log_var += np.where(rate > TARGET_ACCEPT, step, -step)


@dataclass
class SamplerConfig:
    """Chain settings.

    ``delta_update`` selects the data term of the Delta update: ``"conditional"``
    conditions on the current ``U``; ``"integrated"`` integrates ``U`` out.
    ``eps_support`` is ``"active"`` (extra noise only on cells of the wider
    regime, zero elsewhere) or ``"full"`` (every cell carries a draw).
    """

    iterations: int = 4000
    burn_in: int = 1000
    thin: int = 1
    batch_size: int = 50
    variance_mode: str = "equal"
    delta_update: str = "integrated"
    eps_support: str = "active"
    random_effects: bool = True
    pin_beta: bool = False
    fixed: tuple = ()
    adapt: bool = True
    adapt_until: int | None = None
    init_log_var_delta: float = 0.0
    init_log_var_effects: float = -4.0
    init_log_var_decay: float = float(np.log(0.05 ** 2))
    backend: str | None = None

    def check(self) -> None:
        if self.variance_mode not in VARIANCE_MODES:
            raise InvalidInput(f"variance_mode must be one of {VARIANCE_MODES}")
        if self.delta_update not in ("conditional", "integrated"):
            raise InvalidInput("delta_update must be 'conditional' or 'integrated'")
        if self.eps_support not in ("active", "full"):
            raise InvalidInput("eps_support must be 'active' or 'full'")
        if self.thin < 1 or self.burn_in < 0:
            raise InvalidInput("thin must be >= 1 and burn_in >= 0")
        if self.iterations - self.burn_in < 1:
            raise InvalidInput("no post-burn-in iterations requested")
        unknown = set(self.fixed) - set(DECAYS) - {"beta"}
        if unknown:
            raise InvalidInput(f"cannot fix {sorted(unknown)}")


@dataclass
class CorrelationCache:
    """Exponential correlation over a subset of locations with its inverse.

    ``prec`` is the inverse of the sub-matrix on ``keep`` embedded in an
    ``N x N`` array (zeros outside), so it can multiply full-length vectors.
    """

    theta: float
    corr: np.ndarray
    prec: np.ndarray
    logdet: float

    @classmethod
    def build(cls, dist: np.ndarray, theta: float, keep: np.ndarray | None = None) -> "CorrelationCache":
        corr = exp_correlation(dist, theta)
        n = corr.shape[0]
        keep = np.ones(n, bool) if keep is None else keep
        sub = corr[np.ix_(keep, keep)]
        try:
            c = cholesky(sub, lower=True)
            inv = cho_solve((c, True), np.eye(sub.shape[0]))
            logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
        except np.linalg.LinAlgError:
            lam, q = np.linalg.eigh(sub)
            lam = np.maximum(lam, 1e-12)
            inv = (q / lam) @ q.T
            logdet = float(np.sum(np.log(lam)))
        prec = np.zeros((n, n))
        prec[np.ix_(keep, keep)] = 0.5 * (inv + inv.T)
        return cls(float(theta), corr, np.ascontiguousarray(prec), logdet)

    def quad(self, v: np.ndarray) -> float:
        return float(v @ self.prec @ v)


@dataclass
class SamplerState:
    grid: SpaceTimeGrid
    mean: MeanParams
    cov: CovarianceParams
    cp: ChangepointField
    latent: LatentState
    log_delta: np.ndarray
    ku: KroneckerCovariance
    c_delta: CorrelationCache
    c_g0: CorrelationCache
    c_g1: CorrelationCache
    adapt_delta: AdaptiveProposal
    adapt_g0: AdaptiveProposal
    adapt_g1: AdaptiveProposal
    adapt_decay: AdaptiveProposal
    rng: np.random.Generator
    x: np.ndarray
    dist_s: np.ndarray
    dist_t: np.ndarray
    hyper: Hyperparams
    config: SamplerConfig
    iteration: int = 0

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def free(self) -> np.ndarray:
        f = np.ones(self.n, bool)
        f[self.grid.origin_index] = False
        return f

    def delta(self) -> np.ndarray:
        return np.where(self.free, np.exp(self.log_delta), 0.0)

    def rebuild_cp(self, tau0: float | None = None) -> None:
        t0 = self.cp.tau0 if tau0 is None else tau0
        self.cp = build_tau(t0, self.delta(), self.m)

    def active(self) -> np.ndarray:
        return active_mask(self.cp, self.cov.variance_mode)

    def eps_term(self) -> np.ndarray:
        return self.latent.eps * self.active()

    def mu(self) -> np.ndarray:
        return mean_surface(self.mean, self.cp)

    def delta_resid(self) -> np.ndarray:
        """``log Delta - X beta`` with the origin entry zeroed."""
        v = self.log_delta - self.x @ self.cov.beta
        v[~self.free] = 0.0
        return v

    def check_finite(self) -> None:
        vals = [self.mean.alpha, self.cov.sigma_sq, self.cov.sigma_U_sq, self.cov.sigma_Delta_sq,
                self.cov.beta, self.log_delta, self.latent.u, self.mean.gamma0R, self.mean.gamma1R]
        for v in vals:
            if not np.all(np.isfinite(v)):
                raise NumericalFailure(f"non-finite sampler state at iteration {self.iteration}")


SCALAR_COLUMNS = (
    "tau0", "alpha0", "gamma0F", "gamma1F", "sigma1_sq", "sigma2_sq", "sigma_gamma_sq",
    "sigma_U_sq", "phi_U", "psi_U", "sigma_Delta_sq", "psi_Delta", "sigma_g0_sq", "psi_g0",
    "sigma_g1_sq", "psi_g1", "beta_lon", "beta_lat", "deviance",
)


def scalar_record(state: SamplerState, deviance: float) -> list[float]:
    c, mp = state.cov, state.mean
    return [state.cp.tau0, mp.alpha0, mp.gamma0F, mp.gamma1F, c.sigma1_sq, c.sigma2_sq,
            c.sigma_gamma_sq if c.variance_mode != "equal" else 0.0, c.sigma_U_sq, c.phi_U,
            c.psi_U, c.sigma_Delta_sq, c.psi_Delta, c.sigma_g0_sq, c.psi_g0, c.sigma_g1_sq,
            c.psi_g1, c.beta[0], c.beta[1], deviance]


@dataclass
class ChainTrace:
    """Retained draws of one or more chains.

    ``scalars`` has one column per name in ``SCALAR_COLUMNS``; ``tau`` and
    ``gamma0`` hold per-location changepoints ``min(M, tau(s))`` and total
    shifts ``gamma0F + gamma0R(s)``. ``latent_means`` stores posterior means
    needed for the deviance at the posterior mean.
    """

    m: int
    variance_mode: str
    iterations: np.ndarray
    chain: np.ndarray
    scalars: np.ndarray
    tau: np.ndarray
    gamma0: np.ndarray
    latent_means: dict
    acceptance: dict = field(default_factory=dict)
    burn_in: int = 0
    thin: int = 1
    deviance_at_mean: float | None = None

    def __len__(self) -> int:
        return self.scalars.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.scalars[:, SCALAR_COLUMNS.index(name)]

    @property
    def deviance(self) -> np.ndarray:
        return self.column("deviance")

    def dic(self) -> tuple[float, float]:
        from ..model import dic
        if self.deviance_at_mean is None:
            raise InvalidInput("deviance at the posterior mean has not been computed")
        return dic(self.deviance, self.deviance_at_mean)

    def floored_tau(self) -> np.ndarray:
        return np.floor(np.minimum(self.m, self.tau)).astype(int)

    def tau_mode(self) -> np.ndarray:
        """Posterior mode of ``floor(min(M, tau(s)))``; ties go to the smaller value."""
        fl = self.floored_tau()
        out = np.empty(fl.shape[1], dtype=int)
        for s in range(fl.shape[1]):
            vals, counts = np.unique(fl[:, s], return_counts=True)
            out[s] = vals[np.argmax(counts)]
        return out

    def detected(self) -> np.ndarray:
        return self.tau_mode() < self.m
