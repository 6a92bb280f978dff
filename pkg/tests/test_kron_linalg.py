import numpy as np
import pytest

from stcp.kron_linalg import (
    EigenFactorization,
    InvalidInput,
    InvalidParameter,
    KroneckerCovariance,
    distance_matrix,
    exp_correlation,
    great_circle_distance,
    kron_matvec,
    kron_plus_diag_logdet,
    kron_plus_diag_solve,
    kron_quadratic_inverse,
    sample_U_posterior,
    time_distance,
)

from conftest import mc_close, mc_var_close


def random_cov(rng, m, n, scale=None):
    ts = np.sort(rng.uniform(0, 5, m))
    pts = rng.uniform(-3, 3, (n, 2))
    rt = exp_correlation(np.abs(ts[:, None] - ts[None, :]), rng.uniform(0.3, 2))
    rs = exp_correlation(distance_matrix(pts, "euclidean"), rng.uniform(0.3, 2))
    return KroneckerCovariance(rng.uniform(0.5, 2) if scale is None else scale, rt, rs)


# distances --------------------------------------------------------------------------

def test_great_circle_identical_points():
    assert great_circle_distance((0, 0), (0, 0)) == 0.0


def test_great_circle_antipodal_on_equator():
    assert great_circle_distance((0, 0), (180, 0)) == pytest.approx(np.pi)


def test_great_circle_quarter_circle():
    assert great_circle_distance((0, 0), (90, 0)) == pytest.approx(np.pi / 2)


def test_great_circle_radius_scales():
    d = great_circle_distance((10, 20), (-30, 45), radius=6371.0)
    assert d == pytest.approx(6371.0 * great_circle_distance((10, 20), (-30, 45)))


def test_great_circle_rejects_nonfinite():
    with pytest.raises(InvalidInput):
        great_circle_distance((np.nan, 0), (0, 0))


def test_distance_matrix_is_a_metric(rng):
    pts = np.column_stack([rng.uniform(-180, 180, 12), rng.uniform(-80, 80, 12)])
    d = distance_matrix(pts)
    assert np.allclose(d, d.T) and np.all(np.diag(d) == 0) and np.all(d >= 0)
    assert np.all(d <= np.pi + 1e-12)
    tri = d[:, None, :] <= d[:, :, None] + d[None, :, :] + 1e-12
    assert tri.all()


def test_distance_matrix_unknown_metric():
    with pytest.raises(InvalidInput):
        distance_matrix(np.zeros((2, 2)) + [[0, 0], [1, 1]], "manhattan")


# correlations -----------------------------------------------------------------------

def test_exp_correlation_zero_distance_is_one():
    assert exp_correlation(np.zeros((1, 1)), 3.0)[0, 0] == 1.0


def test_exp_correlation_value():
    assert exp_correlation(np.array([[1.0]]), 2.0)[0, 0] == pytest.approx(np.exp(-2.0))


def test_exp_correlation_matches_scalar_loop(rng):
    d = distance_matrix(rng.uniform(0, 4, (3, 2)), "euclidean")
    r = exp_correlation(d, 0.7)
    for i in range(3):
        for j in range(3):
            assert r[i, j] == pytest.approx(np.exp(-0.7 * d[i, j]), rel=1e-15)


def test_exp_correlation_rejects_nonpositive_decay():
    with pytest.raises(InvalidParameter):
        exp_correlation(np.zeros((2, 2)), 0.0)


def test_time_distance():
    assert np.array_equal(time_distance(3), [[0, 1, 2], [1, 0, 1], [2, 1, 0]])


# eigenfactors -----------------------------------------------------------------------

def test_eigen_factorization_reconstructs(rng):
    c = random_cov(rng, 7, 5)
    for r in (c.temporal, c.spatial):
        e = EigenFactorization.of(r)
        assert np.max(np.abs(e.reconstruct() - r)) < 1e-10
        assert np.max(np.abs(e.q.T @ e.q - np.eye(r.shape[0]))) < 1e-10
        assert np.all(np.diff(e.lam) <= 0) and np.all(e.lam > 0)


# Kronecker products -----------------------------------------------------------------

def test_kron_matvec_identity(rng):
    v = rng.standard_normal(6)
    assert np.allclose(kron_matvec(np.eye(2), np.eye(3), v), v)


def test_kron_matvec_scalar_case():
    assert kron_matvec([[2.0]], [[3.0]], [5.0])[0] == 30.0


def test_kron_matvec_matches_dense(rng):
    a, b = rng.standard_normal((4, 4)), rng.standard_normal((5, 5))
    v = rng.standard_normal(20)
    dense = np.kron(a, b) @ v
    assert np.max(np.abs(kron_matvec(a, b, v) - dense)) <= 1e-12 * np.max(np.abs(dense))


def test_kron_matvec_dimension_mismatch():
    with pytest.raises(InvalidInput):
        kron_matvec(np.eye(2), np.eye(3), np.ones(5))


def test_solve_diagonal_case(rng):
    cov = KroneckerCovariance(2.0, np.eye(3), np.eye(4))
    v = rng.standard_normal(12)
    assert np.allclose(kron_plus_diag_solve(cov, 0.5, v), v / 2.5)


def test_solve_zero_rhs(rng):
    cov = random_cov(rng, 5, 4)
    assert np.all(kron_plus_diag_solve(cov, 1.0, np.zeros(20)) == 0)


def test_solve_matches_dense(rng):
    cov = random_cov(rng, 5, 4)
    v = rng.standard_normal(20)
    c = 0.7
    x = kron_plus_diag_solve(cov, c, v)
    dense = np.linalg.solve(c * np.eye(20) + cov.dense(), v)
    assert np.linalg.norm(x - dense) / np.linalg.norm(dense) < 1e-10
    # round trip through a dense multiply
    back = (c * np.eye(20) + cov.dense()) @ x
    assert np.linalg.norm(back - v) / np.linalg.norm(v) < 1e-9


def test_logdet_zero_scale():
    cov = KroneckerCovariance(0.0, np.eye(3), np.eye(2))
    assert kron_plus_diag_logdet(cov, 2.0) == pytest.approx(6 * np.log(2.0))


def test_logdet_identity_correlations():
    cov = KroneckerCovariance(1.5, np.eye(3), np.eye(4))
    assert kron_plus_diag_logdet(cov, 0.5) == pytest.approx(12 * np.log(2.0))


def test_logdet_matches_dense(rng):
    cov = random_cov(rng, 4, 5)
    _, ld = np.linalg.slogdet(0.3 * np.eye(20) + cov.dense())
    assert abs(kron_plus_diag_logdet(cov, 0.3) - ld) < 1e-8


def test_logdet_of_kronecker_product(rng):
    cov = random_cov(rng, 4, 3, scale=1.0)
    m, n = cov.shape
    _, la = np.linalg.slogdet(cov.temporal)
    _, lb = np.linalg.slogdet(cov.spatial)
    eig_sum = float(np.sum(np.log(cov.eigprod())))
    assert eig_sum == pytest.approx(n * la + m * lb, abs=1e-9)


def test_quadratic_inverse_matches_dense(rng):
    cov = random_cov(rng, 4, 3, scale=3.0)
    u = rng.standard_normal(12)
    dense = u @ np.linalg.solve(np.kron(cov.temporal, cov.spatial), u)
    assert kron_quadratic_inverse(cov, u) == pytest.approx(dense, rel=1e-9)


# posterior draws of U ---------------------------------------------------------------

def test_sample_U_identity_case(rng):
    cov = KroneckerCovariance(1.0, np.eye(2), np.eye(3))
    r = np.arange(6.0)
    draws = np.array([sample_U_posterior(cov, 1.0, r, rng) for _ in range(100_000)])
    assert mc_close(draws, r / 2)
    assert mc_var_close(draws, 0.5)


def test_sample_U_large_noise_is_prior(rng):
    cov = random_cov(rng, 3, 2)
    draws = np.array([sample_U_posterior(cov, 1e12, np.ones(6), rng) for _ in range(20000)])
    assert np.allclose(np.cov(draws.T), cov.dense(), atol=0.06 * cov.scale)


def test_sample_U_matches_dense_posterior(rng):
    cov = random_cov(rng, 4, 3)
    s2 = 0.6
    r = rng.standard_normal(12)
    prec = np.eye(12) / s2 + np.linalg.inv(cov.dense())
    post_cov = np.linalg.inv(prec)
    mean = post_cov @ r / s2
    draws = np.array([sample_U_posterior(cov, s2, r, rng) for _ in range(100_000)])
    assert mc_close(draws, mean)
    assert np.max(np.abs(np.cov(draws.T) - post_cov)) < 0.01


def test_sample_U_rejects_bad_variance(rng):
    with pytest.raises(InvalidParameter):
        sample_U_posterior(random_cov(rng, 2, 2), 0.0, np.zeros(4), rng)
