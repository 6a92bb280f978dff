"""Distances, exponential correlations and Kronecker-structured linear algebra.

Vectors of length ``M*N`` are stored time-major with the spatial index
running fastest, i.e. entry ``t*N + s`` holds location ``s`` at time ``t``.
Reshaping such a vector to ``(M, N)`` in C order gives a matrix whose rows
are time slices, and ``(A kron B) vec(X) == vec(A @ X @ B.T)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EIG_FLOOR = 1e-12
EARTH_RADIUS_KM = 6371.0


class InvalidInput(ValueError):
    """Raised for malformed or out-of-domain inputs."""


class InvalidParameter(ValueError):
    """Raised for model parameters outside their admissible range."""


class NumericalFailure(ArithmeticError):
    """Raised when a linear system or density cannot be evaluated."""


def great_circle_distance(p, q, radius: float = 1.0) -> float:
    """Haversine distance between two ``(lon, lat)`` points given in degrees."""
    lon1, lat1 = (float(v) for v in p)
    lon2, lat2 = (float(v) for v in q)
    if not all(np.isfinite([lon1, lat1, lon2, lat2])):
        raise InvalidInput("coordinates must be finite")
    if abs(lat1) > 90 or abs(lat2) > 90:
        raise InvalidInput("latitude must lie in [-90, 90]")
    return float(_haversine(np.array([[lon1, lat1]]), np.array([[lon2, lat2]]))[0, 0] * radius)


def _haversine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    lon1, lat1 = np.radians(a[:, 0])[:, None], np.radians(a[:, 1])[:, None]
    lon2, lat2 = np.radians(b[:, 0])[None, :], np.radians(b[:, 1])[None, :]
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def distance_matrix(coords, metric: str = "great-circle", radius: float = 1.0) -> np.ndarray:
    """Pairwise distances between ``(lon, lat)`` rows.

    ``metric`` is ``"great-circle"`` (degrees in, ``radius`` units out) or
    ``"euclidean"`` (plain coordinate units, used for abstract lattices).
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise InvalidInput("coords must have shape (n, 2)")
    if not np.all(np.isfinite(coords)):
        raise InvalidInput("coordinates must be finite")
    if metric == "great-circle":
        if np.any(np.abs(coords[:, 1]) > 90):
            raise InvalidInput("latitude must lie in [-90, 90]")
        d = _haversine(coords, coords) * radius
    elif metric == "euclidean":
        diff = coords[:, None, :] - coords[None, :, :]
        d = np.sqrt((diff ** 2).sum(-1))
    else:
        raise InvalidInput(f"unknown metric {metric!r}")
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def time_distance(m: int) -> np.ndarray:
    t = np.arange(m, dtype=float)
    return np.abs(t[:, None] - t[None, :])


def exp_correlation(dist, theta: float) -> np.ndarray:
    """Exponential correlation ``exp(-theta * d)`` evaluated entry-wise."""
    if not theta > 0:
        raise InvalidParameter(f"decay rate must be positive, got {theta}")
    return np.exp(-theta * np.asarray(dist, dtype=float))


@dataclass(frozen=True)
class EigenFactorization:
    """Symmetric eigendecomposition with eigenvalues sorted descending."""

    q: np.ndarray
    lam: np.ndarray

    @classmethod
    def of(cls, a: np.ndarray) -> "EigenFactorization":
        lam, q = np.linalg.eigh(a)
        order = np.argsort(lam)[::-1]
        return cls(np.ascontiguousarray(q[:, order]), lam[order])

    @property
    def clipped(self) -> np.ndarray:
        return np.maximum(self.lam, EIG_FLOOR)

    def logdet(self) -> float:
        return float(np.sum(np.log(self.clipped)))

    def reconstruct(self) -> np.ndarray:
        return (self.q * self.lam) @ self.q.T


def kron_matvec(a, b, v) -> np.ndarray:
    """``(A kron B) @ v`` without forming the Kronecker product."""
    a, b, v = np.asarray(a, float), np.asarray(b, float), np.asarray(v, float)
    p, q = a.shape[0], b.shape[0]
    if a.shape != (p, p) or b.shape != (q, q) or v.shape != (p * q,):
        raise InvalidInput(f"shapes {a.shape}, {b.shape}, {v.shape} are incompatible")
    return (a @ v.reshape(p, q) @ b.T).ravel()


@dataclass
class KroneckerCovariance:
    """``scale * (temporal kron spatial)`` with cached eigenfactors.

    The temporal factor is ``M x M`` and the spatial factor ``N x N``; the
    caches are rebuilt lazily after either factor is replaced.
    """

    scale: float
    temporal: np.ndarray
    spatial: np.ndarray
    _teig: EigenFactorization | None = field(default=None, repr=False)
    _seig: EigenFactorization | None = field(default=None, repr=False)

    def __post_init__(self):
        self.temporal = np.asarray(self.temporal, float)
        self.spatial = np.asarray(self.spatial, float)
        if self.scale < 0:
            raise InvalidParameter("scale must be nonnegative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.temporal.shape[0], self.spatial.shape[0]

    @property
    def temporal_eig(self) -> EigenFactorization:
        if self._teig is None:
            self._teig = EigenFactorization.of(self.temporal)
        return self._teig

    @property
    def spatial_eig(self) -> EigenFactorization:
        if self._seig is None:
            self._seig = EigenFactorization.of(self.spatial)
        return self._seig

    def set_temporal(self, r: np.ndarray, eig: EigenFactorization | None = None) -> None:
        self.temporal = r
        self._teig = eig

    def set_spatial(self, r: np.ndarray, eig: EigenFactorization | None = None) -> None:
        self.spatial = r
        self._seig = eig

    def dense(self) -> np.ndarray:
        return self.scale * np.kron(self.temporal, self.spatial)

    def eigprod(self) -> np.ndarray:
        """Clipped products ``lambda_t[a] * lambda_s[b]`` as an ``(M, N)`` array."""
        return np.outer(self.temporal_eig.clipped, self.spatial_eig.clipped)

    def diag_plus(self, c: float) -> np.ndarray:
        """Eigenvalues of ``c*I + Sigma`` in the joint basis, shape ``(M, N)``."""
        return c + self.scale * self.eigprod()

    def whiten(self, x: np.ndarray) -> np.ndarray:
        """Rotate ``(..., M, N)`` arrays into the joint eigenbasis."""
        return self.temporal_eig.q.T @ x @ self.spatial_eig.q

    def unwhiten(self, x: np.ndarray) -> np.ndarray:
        return self.temporal_eig.q @ x @ self.spatial_eig.q.T

    def matvec(self, v) -> np.ndarray:
        return self.scale * kron_matvec(self.temporal, self.spatial, v)


def _as_grid(cov: KroneckerCovariance, v) -> np.ndarray:
    m, n = cov.shape
    v = np.asarray(v, float)
    if v.size != m * n:
        raise InvalidInput(f"vector of length {v.size} does not match M*N = {m * n}")
    return v.reshape(m, n)


def kron_plus_diag_solve(cov: KroneckerCovariance, c: float, v) -> np.ndarray:
    """Solve ``(c*I + Sigma_U) x = v`` using only the two small eigenfactors."""
    d = cov.diag_plus(c)
    if np.any(d <= 0):
        raise NumericalFailure("system c*I + Sigma_U is singular")
    x = cov.unwhiten(cov.whiten(_as_grid(cov, v)) / d)
    return x.ravel()


def kron_plus_diag_logdet(cov: KroneckerCovariance, c: float) -> float:
    d = cov.diag_plus(c)
    if np.any(d <= 0):
        raise NumericalFailure("nonpositive eigenvalue in c*I + Sigma_U")
    return float(np.sum(np.log(d)))


def kron_quadratic_inverse(cov: KroneckerCovariance, u) -> float:
    """``u' (R_t^-1 kron R_s^-1) u``; the scale is not applied."""
    w = cov.whiten(_as_grid(cov, u))
    return float(np.sum(w * w / cov.eigprod()))


def sample_U_posterior(cov: KroneckerCovariance, sigma1_sq: float, residual, rng) -> np.ndarray:
    """Draw from ``N(P^-1 r / sigma1_sq, P^-1)`` with ``P = I/sigma1_sq + Sigma_U^-1``.

    The precision is diagonal in the joint eigenbasis, so the draw costs two
    rotations plus ``M*N`` independent normals.
    """
    if not sigma1_sq > 0:
        raise InvalidParameter("sigma1_sq must be positive")
    rt = cov.whiten(_as_grid(cov, residual))
    m, n = cov.shape
    if cov.scale == 0:
        return np.zeros(m * n)
    prec = 1.0 / sigma1_sq + 1.0 / (cov.scale * cov.eigprod())
    ut = rt / sigma1_sq / prec + rng.standard_normal((m, n)) / np.sqrt(prec)
    return cov.unwhiten(ut).ravel()
