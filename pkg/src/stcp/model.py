"""Model types and deterministic functions of the changepoint model.

All space-time arrays are ``(M, N)``: row ``t-1`` holds time ``t`` for every
location, so ``arr.ravel()`` is the canonical length ``M*N`` vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .kron_linalg import (
    InvalidInput,
    InvalidParameter,
    KroneckerCovariance,
    distance_matrix,
    kron_plus_diag_logdet,
    kron_plus_diag_solve,
)

VARIANCE_MODES = ("equal", "increase", "decrease")
LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class SpaceTimeGrid:
    """``N`` locations in (lon, lat) degrees observed at times ``1..M``."""

    locations: np.ndarray
    m: int
    origin_index: int = 0
    metric: str = "great-circle"

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        object.__setattr__(self, "locations", loc)
        if loc.ndim != 2 or loc.shape[1] != 2:
            raise InvalidInput("locations must have shape (N, 2)")
        if loc.shape[0] < 2 or self.m < 3:
            raise InvalidInput("need N >= 2 locations and M >= 3 times")
        if len({tuple(r) for r in loc}) != loc.shape[0]:
            raise InvalidInput("locations must be distinct")
        if not 0 <= self.origin_index < loc.shape[0]:
            raise InvalidInput("origin_index out of range")
        if self.metric not in ("great-circle", "euclidean"):
            raise InvalidInput(f"unknown metric {self.metric!r}")

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.m + 1)

    def with_origin(self, index: int) -> "SpaceTimeGrid":
        return replace(self, origin_index=int(index))

    def distances(self) -> np.ndarray:
        return distance_matrix(self.locations, self.metric)

    @classmethod
    def lattice(cls, side: int, m: int, origin_index: int = 0) -> "SpaceTimeGrid":
        """Unit-spaced ``side x side`` lattice with Euclidean distances."""
        xs = np.arange(side, dtype=float)
        lon, lat = np.meshgrid(xs, xs, indexing="ij")
        loc = np.column_stack([lon.ravel(), lat.ravel()])
        return cls(loc, m, origin_index, "euclidean")


@dataclass(frozen=True)
class ChangepointField:
    tau0: float
    delta: np.ndarray
    tau: np.ndarray
    post: np.ndarray  # (M, N) bool, True where t > tau(s)

    @property
    def m(self) -> int:
        return self.post.shape[0]

    @property
    def has_changepoint(self) -> np.ndarray:
        return self.tau < self.m

    def lag(self) -> np.ndarray:
        """``(t - tau(s))`` on post-change cells, zero elsewhere."""
        t = np.arange(1, self.m + 1, dtype=float)[:, None]
        return np.where(self.post, t - self.tau[None, :], 0.0)


def build_tau(tau0: float, delta, m: int, origin_index: int | None = None) -> ChangepointField:
    """Changepoints ``tau(s) = min(M, tau0 + delta(s))`` and the post-change mask."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0) or not np.all(np.isfinite(delta) | (delta == np.inf)):
        raise InvalidInput("delta must be nonnegative")
    if origin_index is not None and delta[origin_index] != 0:
        raise InvalidInput("delta at the origin must be 0")
    if not 1 <= tau0 <= m:
        raise InvalidInput(f"tau0 must lie in [1, {m}]")
    tau = np.minimum(float(m), tau0 + delta)
    t = np.arange(1, m + 1, dtype=float)[:, None]
    return ChangepointField(float(tau0), delta, tau, t > tau[None, :])


def design_matrix_X(grid: SpaceTimeGrid) -> np.ndarray:
    """Row ``i`` is ``(lon_i - lon_0, lat_i - lat_0)`` relative to the origin."""
    return grid.locations - grid.locations[grid.origin_index]


@dataclass
class MeanParams:
    alpha0: float
    gamma0F: float
    gamma1F: float
    gamma0R: np.ndarray
    gamma1R: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        return np.array([self.alpha0, self.gamma0F, self.gamma1F])

    @classmethod
    def constant(cls, n: int, alpha0=0.0, gamma0F=0.0, gamma1F=0.0) -> "MeanParams":
        return cls(alpha0, gamma0F, gamma1F, np.zeros(n), np.zeros(n))


@dataclass
class CovarianceParams:
    """Variance, decay and diffusion parameters.

    ``sigma_sq`` is the narrower of the two measurement variances and
    ``sigma_gamma_sq`` the increment of the wider one, so under ``increase``
    ``sigma1_sq = sigma_sq`` and ``sigma2_sq = sigma_sq + sigma_gamma_sq``.
    """

    sigma_sq: float = 1.0
    sigma_gamma_sq: float = 0.1
    sigma_U_sq: float = 1.0
    phi_U: float = 1.0
    psi_U: float = 1.0
    sigma_Delta_sq: float = 1.0
    psi_Delta: float = 1.0
    sigma_g0_sq: float = 0.1
    psi_g0: float = 1.0
    sigma_g1_sq: float = 0.01
    psi_g1: float = 1.0
    beta: np.ndarray = field(default_factory=lambda: np.zeros(2))
    variance_mode: str = "equal"

    def __post_init__(self):
        if self.variance_mode not in VARIANCE_MODES:
            raise InvalidParameter(f"variance_mode must be one of {VARIANCE_MODES}")
        self.beta = np.asarray(self.beta, dtype=float)

    @property
    def sigma1_sq(self) -> float:
        if self.variance_mode == "decrease":
            return self.sigma_sq + self.sigma_gamma_sq
        return self.sigma_sq

    @property
    def sigma2_sq(self) -> float:
        if self.variance_mode == "increase":
            return self.sigma_sq + self.sigma_gamma_sq
        return self.sigma_sq

    def check(self) -> None:
        names = ("sigma_sq", "sigma_U_sq", "sigma_Delta_sq", "sigma_g0_sq", "sigma_g1_sq",
                 "phi_U", "psi_U", "psi_Delta", "psi_g0", "psi_g1")
        for name in names:
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"{name} must be positive")
        if self.variance_mode != "equal" and not self.sigma_gamma_sq > 0:
            raise InvalidParameter("sigma_gamma_sq must be positive")


@dataclass
class LatentState:
    u: np.ndarray    # (M, N)
    eps: np.ndarray  # (M, N)

    @classmethod
    def zeros(cls, m: int, n: int) -> "LatentState":
        return cls(np.zeros((m, n)), np.zeros((m, n)))


def active_mask(cp: ChangepointField, variance_mode: str) -> np.ndarray:
    """Cells that carry the extra noise term of the wider-variance regime."""
    if variance_mode == "increase":
        return cp.post
    if variance_mode == "decrease":
        return ~cp.post
    return np.zeros_like(cp.post)


def z_columns(cp: ChangepointField) -> np.ndarray:
    """Columns of ``Z_tau`` as a ``(3, M, N)`` stack: intercept, shift, slope."""
    post = cp.post.astype(float)
    return np.stack([np.ones_like(post), post, cp.lag()])


def random_part(mp: MeanParams, cp: ChangepointField) -> np.ndarray:
    """``mu_R * 1+`` where ``mu_R = gamma0R + gamma1R * (t - tau)``."""
    return cp.post * mp.gamma0R[None, :] + cp.lag() * mp.gamma1R[None, :]


def mean_surface(mp: MeanParams, cp: ChangepointField) -> np.ndarray:
    z = z_columns(cp)
    return np.tensordot(mp.alpha, z, axes=1) + random_part(mp, cp)


def mean_surface_pointwise(mp: MeanParams, cp: ChangepointField) -> np.ndarray:
    m, n = cp.post.shape
    out = np.empty((m, n))
    for t in range(1, m + 1):
        for s in range(n):
            if t <= cp.tau[s]:
                out[t - 1, s] = mp.alpha0
            else:
                g0 = mp.gamma0F + mp.gamma0R[s]
                g1 = mp.gamma1F + mp.gamma1R[s]
                out[t - 1, s] = mp.alpha0 + g0 + g1 * (t - cp.tau[s])
    return out


def conditional_loglik(y, mu, latent: LatentState, cov: CovarianceParams,
                       cp: ChangepointField) -> float:
    """Gaussian log-density of ``y`` given the mean, ``U`` and the extra noise.

    Uses the narrow-regime variance for every cell; the wide regime is
    represented by ``eps`` on the active cells.
    """
    s2 = cov.sigma_sq
    if not s2 > 0:
        raise InvalidParameter("measurement variance must be positive")
    y = np.asarray(y, float).reshape(mu.shape)
    eps_term = latent.eps * active_mask(cp, cov.variance_mode)
    r = y - mu - latent.u - eps_term
    return float(-0.5 * (r.size * (LOG_2PI + np.log(s2)) + np.sum(r * r) / s2))


def noise_marginal_loglik(y, mu, u, cov: CovarianceParams, cp: ChangepointField) -> float:
    """Log-density of ``y`` given the mean and ``U`` with the extra noise integrated out.

    Cells are independent normals with variance ``sigma_sq``, or
    ``sigma_sq + sigma_gamma_sq`` on the active cells. In the equal-variance
    mode this equals :func:`conditional_loglik` with zero extra noise.
    """
    s2 = cov.sigma_sq
    if not s2 > 0:
        raise InvalidParameter("measurement variance must be positive")
    mu = np.asarray(mu, float)
    r = np.asarray(y, float).reshape(mu.shape) - mu - u
    var = np.where(active_mask(cp, cov.variance_mode), s2 + cov.sigma_gamma_sq, s2)
    return float(-0.5 * (r.size * LOG_2PI + np.sum(np.log(var)) + np.sum(r * r / var)))


def integrated_loglik(y, mu, eps_term, sigma1_sq: float, cov_U: KroneckerCovariance) -> float:
    """Log-density of ``y`` with ``U`` integrated out, covariance ``s2*I + Sigma_U``."""
    y = np.asarray(y, float)
    r = (y.reshape(-1) - np.asarray(mu, float).reshape(-1) - np.asarray(eps_term, float).reshape(-1))
    x = kron_plus_diag_solve(cov_U, sigma1_sq, r)
    logdet = kron_plus_diag_logdet(cov_U, sigma1_sq)
    return float(-0.5 * (logdet + r @ x + r.size * LOG_2PI))


def dic(deviances, deviance_at_mean: float) -> tuple[float, float]:
    """Return ``(DIC, p_D)`` with ``p_D = mean(D) - D(theta_bar)``."""
    d = np.asarray(deviances, dtype=float)
    if d.size == 0:
        raise InvalidInput("empty trace")
    dbar = float(d.mean())
    p_d = dbar - float(deviance_at_mean)
    return dbar + p_d, p_d
