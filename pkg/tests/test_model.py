import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from stcp.kron_linalg import InvalidInput, InvalidParameter, KroneckerCovariance, exp_correlation
from stcp.model import (
    ChangepointField,
    CovarianceParams,
    LatentState,
    MeanParams,
    SpaceTimeGrid,
    active_mask,
    build_tau,
    conditional_loglik,
    design_matrix_X,
    dic,
    integrated_loglik,
    mean_surface,
    mean_surface_pointwise,
    random_part,
    z_columns,
)


# grid -------------------------------------------------------------------------------

def test_grid_validation():
    with pytest.raises(InvalidInput):
        SpaceTimeGrid(np.zeros((2, 2)), 5)  # duplicate locations
    with pytest.raises(InvalidInput):
        SpaceTimeGrid([[0, 0], [1, 1]], 2)  # M too short
    with pytest.raises(InvalidInput):
        SpaceTimeGrid([[0, 0], [1, 1]], 5, origin_index=2)
    with pytest.raises(InvalidInput):
        SpaceTimeGrid([[0, 0], [1, 1]], 5, metric="taxicab")


def test_lattice_layout():
    g = SpaceTimeGrid.lattice(3, 4)
    assert g.n == 9 and g.m == 4 and g.metric == "euclidean"
    assert np.array_equal(g.times, [1, 2, 3, 4])


# changepoint field ------------------------------------------------------------------

def test_build_tau_origin():
    cp = build_tau(18, np.zeros(3), 61)
    assert np.all(cp.tau == 18)


def test_build_tau_caps_at_m():
    cp = build_tau(18, np.array([0.0, 100.0]), 61)
    assert cp.tau[1] == 61 and not cp.has_changepoint[1]
    assert not cp.post[:, 1].any()


def test_build_tau_at_m_has_no_post_cells():
    cp = build_tau(10, np.array([0.0, 2.5, 7.0]), 10)
    assert np.all(cp.tau == 10) and not cp.post.any()


def test_build_tau_rejects_negative_delta():
    with pytest.raises(InvalidInput):
        build_tau(5, np.array([0.0, -1.0]), 10)


def test_build_tau_rejects_nonzero_origin():
    with pytest.raises(InvalidInput):
        build_tau(5, np.array([0.5, 1.0]), 10, origin_index=0)


def test_build_tau_rejects_tau0_out_of_range():
    with pytest.raises(InvalidInput):
        build_tau(0.5, np.zeros(2), 10)


def test_post_indicator_and_lag():
    cp = build_tau(2.5, np.array([0.0, 1.0]), 5)
    assert np.array_equal(cp.post[:, 0], [False, False, True, True, True])
    assert np.array_equal(cp.post[:, 1], [False, False, False, True, True])
    assert np.allclose(cp.lag()[:, 1], [0, 0, 0, 0.5, 1.5])


# design matrix ----------------------------------------------------------------------

def test_design_matrix_origin_row_is_zero():
    g = SpaceTimeGrid.lattice(3, 4, origin_index=5)
    assert np.all(design_matrix_X(g)[5] == 0)


def test_design_matrix_offsets():
    g = SpaceTimeGrid(np.array([[20.0, 40.0], [30.0, 35.0]]), 4, origin_index=0)
    assert np.array_equal(design_matrix_X(g)[1], [10.0, -5.0])


def test_design_matrix_lattice_span():
    g = SpaceTimeGrid.lattice(11, 4, origin_index=60)  # centre of the lattice
    x = design_matrix_X(g)
    expected = {(a, b) for a in range(-5, 6) for b in range(-5, 6)}
    assert {tuple(r) for r in x.astype(int)} == expected


# mean surface -----------------------------------------------------------------------

def test_mean_surface_no_changepoints():
    cp = build_tau(6, np.zeros(3), 6)
    mp = MeanParams(1.7, 2.0, 0.3, np.ones(3), np.ones(3))
    assert np.all(mean_surface(mp, cp) == 1.7)


def test_mean_surface_pure_shift():
    cp = build_tau(2, np.array([0.0, 1.0, 3.0]), 6)
    mp = MeanParams.constant(3, alpha0=1.0, gamma0F=2.0)
    mu = mean_surface(mp, cp)
    assert np.array_equal(mu, np.where(cp.post, 3.0, 1.0))


def test_mean_surface_matches_pointwise(rng):
    for _ in range(20):
        cp = build_tau(rng.uniform(1, 6), np.r_[0.0, rng.exponential(2, 2)], 6)
        mp = MeanParams(*rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3))
        assert np.allclose(mean_surface(mp, cp), mean_surface_pointwise(mp, cp), atol=1e-13)


def test_mean_surface_equals_z_alpha_plus_random_part(rng):
    cp = build_tau(2.2, np.array([0.0, 0.7, 9.0]), 6)
    mp = MeanParams(0.5, -1.0, 0.25, rng.standard_normal(3), rng.standard_normal(3))
    z = z_columns(cp).reshape(3, -1).T
    assert np.allclose(mean_surface(mp, cp).ravel(), z @ mp.alpha + random_part(mp, cp).ravel())


# covariance parameters --------------------------------------------------------------

def test_variance_modes():
    c = CovarianceParams(sigma_sq=1.0, sigma_gamma_sq=2.0, variance_mode="increase")
    assert c.sigma1_sq == 1.0 and c.sigma2_sq == 3.0
    c = CovarianceParams(sigma_sq=1.0, sigma_gamma_sq=2.0, variance_mode="decrease")
    assert c.sigma1_sq == 3.0 and c.sigma2_sq == 1.0
    c = CovarianceParams(sigma_sq=1.0, sigma_gamma_sq=2.0)
    assert c.sigma1_sq == c.sigma2_sq == 1.0


def test_covariance_params_check():
    with pytest.raises(InvalidParameter):
        CovarianceParams(variance_mode="sideways")
    with pytest.raises(InvalidParameter):
        CovarianceParams(sigma_sq=0.0).check()


def test_active_mask():
    cp = build_tau(2, np.array([0.0, 1.0]), 4)
    assert np.array_equal(active_mask(cp, "increase"), cp.post)
    assert np.array_equal(active_mask(cp, "decrease"), ~cp.post)
    assert not active_mask(cp, "equal").any()


# likelihoods ------------------------------------------------------------------------

def _tiny(rng, m=4, n=3):
    cp = build_tau(2.0, np.array([0.0, 0.5, 1.5])[:n], m)
    mp = MeanParams(*rng.standard_normal(3), rng.standard_normal(n), rng.standard_normal(n))
    return cp, mp


def test_conditional_loglik_zero_residual(rng):
    cp, mp = _tiny(rng)
    mu = mean_surface(mp, cp)
    u = rng.standard_normal(mu.shape)
    lat = LatentState(u, np.zeros_like(u))
    cov = CovarianceParams(sigma_sq=0.7)
    ll = conditional_loglik(mu + u, mu, lat, cov, cp)
    assert ll == pytest.approx(-mu.size / 2 * np.log(2 * np.pi * 0.7))


def test_conditional_loglik_doubling_variance(rng):
    cp, mp = _tiny(rng)
    mu = mean_surface(mp, cp)
    lat = LatentState.zeros(*mu.shape)
    a = conditional_loglik(mu, mu, lat, CovarianceParams(sigma_sq=1.0), cp)
    b = conditional_loglik(mu, mu, lat, CovarianceParams(sigma_sq=2.0), cp)
    assert a - b == pytest.approx(mu.size / 2 * np.log(2))


def test_conditional_loglik_matches_scalar_sum(rng):
    cp, mp = _tiny(rng)
    mu = mean_surface(mp, cp)
    lat = LatentState(rng.standard_normal(mu.shape), rng.standard_normal(mu.shape))
    cov = CovarianceParams(sigma_sq=0.4, sigma_gamma_sq=1.0, variance_mode="increase")
    y = rng.standard_normal(mu.shape)
    total = 0.0
    for t in range(mu.shape[0]):
        for s in range(mu.shape[1]):
            e = lat.eps[t, s] if cp.post[t, s] else 0.0
            total += norm.logpdf(y[t, s], mu[t, s] + lat.u[t, s] + e, np.sqrt(0.4))
    assert abs(conditional_loglik(y, mu, lat, cov, cp) - total) < 1e-10


def test_conditional_loglik_permutation_invariant(rng):
    cp, mp = _tiny(rng)
    mu = mean_surface(mp, cp)
    lat = LatentState(rng.standard_normal(mu.shape), np.zeros(mu.shape))
    y = rng.standard_normal(mu.shape)
    cov = CovarianceParams(sigma_sq=0.9)
    perm = rng.permutation(mu.shape[1])
    cp2 = ChangepointField(cp.tau0, cp.delta[perm], cp.tau[perm], cp.post[:, perm])
    a = conditional_loglik(y, mu, lat, cov, cp)
    b = conditional_loglik(y[:, perm], mu[:, perm], LatentState(lat.u[:, perm], lat.eps[:, perm]),
                           cov, cp2)
    assert a == pytest.approx(b, abs=1e-12)


def test_conditional_loglik_rejects_bad_variance(rng):
    cp, mp = _tiny(rng)
    mu = mean_surface(mp, cp)
    cov = CovarianceParams()
    cov.sigma_sq = -1.0
    with pytest.raises(InvalidParameter):
        conditional_loglik(mu, mu, LatentState.zeros(*mu.shape), cov, cp)


def _kron(rng, m, n, scale):
    t = np.arange(m, dtype=float)
    pts = rng.uniform(0, 3, (n, 2))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    return KroneckerCovariance(scale, exp_correlation(np.abs(t[:, None] - t[None]), 0.8),
                               exp_correlation(d, 1.1))


def test_integrated_loglik_zero_scale_is_conditional(rng):
    cp, mp = _tiny(rng)
    mu = mean_surface(mp, cp)
    y = rng.standard_normal(mu.shape)
    ku = _kron(rng, *mu.shape, scale=0.0)
    a = integrated_loglik(y, mu, np.zeros_like(mu), 0.6, ku)
    b = conditional_loglik(y, mu, LatentState.zeros(*mu.shape), CovarianceParams(sigma_sq=0.6), cp)
    assert abs(a - b) < 1e-10


def test_integrated_loglik_zero_residual(rng):
    ku = _kron(rng, 4, 3, scale=1.3)
    mu = rng.standard_normal((4, 3))
    _, ld = np.linalg.slogdet(0.5 * np.eye(12) + ku.dense())
    expect = -0.5 * ld - 6 * np.log(2 * np.pi)
    assert integrated_loglik(mu, mu, np.zeros_like(mu), 0.5, ku) == pytest.approx(expect)


def test_integrated_loglik_matches_dense(rng):
    ku = _kron(rng, 4, 3, scale=1.3)
    mu = rng.standard_normal((4, 3))
    eps = rng.standard_normal((4, 3)) * 0.2
    y = rng.standard_normal((4, 3))
    dense = multivariate_normal(mean=(mu + eps).ravel(), cov=0.5 * np.eye(12) + ku.dense())
    assert abs(integrated_loglik(y, mu, eps, 0.5, ku) - dense.logpdf(y.ravel())) < 1e-8


# DIC --------------------------------------------------------------------------------

def test_dic_point_mass():
    assert dic([7.0, 7.0, 7.0], 7.0) == (7.0, 0.0)


def test_dic_two_equal_draws():
    assert dic([4.5, 4.5], 4.5)[0] == 4.5


def test_dic_hand_computed():
    d = [10.0, 12.0, 11.0, 13.0, 9.0]  # mean 11
    value, p_d = dic(d, 8.5)
    assert p_d == pytest.approx(2.5) and value == pytest.approx(13.5)


def test_dic_empty():
    with pytest.raises(InvalidInput):
        dic([], 0.0)
