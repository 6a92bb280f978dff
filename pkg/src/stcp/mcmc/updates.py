"""Full-conditional draws and Metropolis updates for one PCG sweep.

Every update takes the sampler state (and the ``(M, N)`` data where it
enters) and mutates the state in place.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import gammaincc, gammainccinv, logsumexp, ndtr, ndtri

from .. import kernels
from ..kron_linalg import (
    EigenFactorization,
    InvalidParameter,
    NumericalFailure,
    exp_correlation,
    kron_quadratic_inverse,
    sample_U_posterior,
)
from ..model import noise_marginal_loglik, random_part, z_columns
from .state import DECAYS, CorrelationCache, SamplerState

WEIGHT_FLOOR = 1e-300
_EPS_FLAG = {"equal": 0, "increase": 1, "decrease": 2}


def _kern(state: SamplerState):
    b = state.config.backend
    return kernels.active if b in (None, "auto") else kernels.get(b)


def _adapting(state: SamplerState) -> bool:
    c = state.config
    return c.adapt and (c.adapt_until is None or state.iteration <= c.adapt_until)


def _effects(state: SamplerState) -> tuple[np.ndarray, np.ndarray]:
    mp = state.mean
    return mp.gamma0F + mp.gamma0R, mp.gamma1F + mp.gamma1R


def _mask_eps(state: SamplerState) -> None:
    if state.config.eps_support == "active":
        state.latent.eps = state.latent.eps * state.active()


def _fill_eps(state: SamplerState) -> None:
    """Draw the extra noise on inactive cells from its prior.

    Under ``eps_support="active"`` those cells are integrated out and stored
    as zero. Steps that move the changepoints while holding the extra noise
    fixed need a value there: a cell that becomes active must enter with a
    draw, not with zero. The draw is exact because inactive cells do not
    touch the likelihood; ``_mask_eps`` discards it again afterwards.
    """
    if state.config.eps_support != "active" or state.cov.variance_mode == "equal":
        return
    off = ~state.active()
    z = state.rng.standard_normal((state.m, state.n))
    state.latent.eps = np.where(off, np.sqrt(state.cov.sigma_gamma_sq) * z, state.latent.eps)


def sample_inv_gamma(rng, shape: float, scale: float) -> float:
    if not (shape > 0 and scale > 0):
        raise InvalidParameter(f"inverse gamma needs positive shape/scale, got {shape}, {scale}")
    return scale / rng.gamma(shape)


def sample_trunc_inv_gamma(rng, shape: float, scale: float, upper: float) -> float:
    """Inverse gamma restricted to ``(0, upper]`` by inverse-CDF on the precision.

    The precision ``1/x`` is gamma with rate ``scale`` and must exceed
    ``1/upper``; a uniform draw is mapped through the gamma survival function.
    """
    if not (shape > 0 and scale > 0):
        raise InvalidParameter(f"inverse gamma needs positive shape/scale, got {shape}, {scale}")
    if not upper > 0:
        raise InvalidParameter("truncation bound must be positive")
    lower_prec = 1.0 / upper
    tail = gammaincc(shape, scale * lower_prec)
    v = rng.random()
    if tail > 1e-300:
        x = gammainccinv(shape, v * tail) / scale
    else:
        # far tail: the excess over the bound is close to exponential
        rate = scale - (shape - 1.0) / lower_prec
        x = lower_prec + (-np.log1p(-v) / rate if rate > 0 else 0.0)
    return 1.0 / max(x, lower_prec)


def sample_trunc_normal(rng, mean: float, sd: float, lo: float, hi: float) -> float:
    """Normal draw restricted to ``(lo, hi)`` by inverse CDF."""
    a, b = ndtr((lo - mean) / sd), ndtr((hi - mean) / sd)
    return float(mean + sd * ndtri(a + rng.random() * (b - a)))


# Step 1: changepoints with U integrated out -------------------------------------

def tau0_log_weights(state: SamplerState, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized log full-conditional weights over the ``tau0`` support.

    Residuals for all candidates are laid out as ``(M, S, N)`` so that each
    rotation into the eigenbasis is a single matrix product.
    """
    m, n = state.m, state.n
    sup, prior = state.hyper.support(m)
    g0, g1 = _effects(state)
    r = np.empty((m, sup.size, n))
    _kern(state).tau0_residuals(sup.astype(float), state.delta(), np.ascontiguousarray(y),
                                state.mean.alpha0, g0, g1, np.ascontiguousarray(state.latent.eps),
                                _EPS_FLAG[state.cov.variance_mode], r)
    ku = state.ku
    r = (r.reshape(-1, n) @ ku.spatial_eig.q).reshape(m, -1)
    rt = (ku.temporal_eig.q.T @ r).reshape(m, sup.size, n)
    rt *= rt
    quad = np.einsum("akb,ab->k", rt, 1.0 / ku.diag_plus(state.cov.sigma_sq))
    with np.errstate(divide="ignore"):
        logw = np.log(prior) - 0.5 * quad
    return sup, logw


def categorical_from_log(logw: np.ndarray, rng) -> int:
    lse = logsumexp(logw)
    if not np.isfinite(lse):
        raise NumericalFailure("all categorical weights vanish")
    p = np.maximum(np.exp(logw - lse), WEIGHT_FLOOR)
    c = np.cumsum(p)
    return int(np.searchsorted(c, rng.random() * c[-1], side="right"))


def sample_tau0(state: SamplerState, y: np.ndarray) -> None:
    _fill_eps(state)
    sup, logw = tau0_log_weights(state, y)
    k = categorical_from_log(logw, state.rng)
    state.rebuild_cp(float(sup[min(k, sup.size - 1)]))
    _mask_eps(state)


def fitted_without_u(state: SamplerState) -> np.ndarray:
    return state.mu() + state.eps_term()


def mh_update_delta(state: SamplerState, y: np.ndarray) -> None:
    """Component-wise random walk on ``log Delta`` (origin pinned)."""
    _fill_eps(state)
    n, m = state.n, state.m
    rng = state.rng
    z = rng.standard_normal(n)
    log_u = np.log(rng.random(n))
    free = state.free.astype(np.uint8)
    prec = state.c_delta.prec
    prior_w = prec @ state.delta_resid()
    g0, g1 = _effects(state)
    eps = np.ascontiguousarray(state.latent.eps)
    acc = np.zeros(n, np.uint8)
    flag = _EPS_FLAG[state.cov.variance_mode]
    sd = state.adapt_delta.sd
    args = (state.log_delta, free, z, log_u, sd, prec, prior_w, state.cov.sigma_Delta_sq,
            state.cp.tau0, m, state.mean.alpha0, g0, g1, eps, flag)
    if state.config.delta_update == "conditional":
        base = np.ascontiguousarray(y - state.latent.u)
        _kern(state).delta_sweep_conditional(*args, base, state.cov.sigma_sq, acc)
    else:
        ku = state.ku
        rt = np.ascontiguousarray(ku.whiten(y - fitted_without_u(state)))
        dinv = np.ascontiguousarray(1.0 / ku.diag_plus(state.cov.sigma_sq))
        _kern(state).delta_sweep_integrated(*args, np.ascontiguousarray(ku.temporal_eig.q),
                                            np.ascontiguousarray(ku.spatial_eig.q), rt, dinv, acc)
    state.adapt_delta.record(acc, _adapting(state))
    state.rebuild_cp()
    _mask_eps(state)


def collapsed_tau0_log_weights(state: SamplerState, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log weights over the ``tau0`` support given ``U``, with the extra noise integrated out.

    Each cell is then independent normal with variance ``sigma_sq`` or, on the
    wider-regime cells, ``sigma_sq + sigma_gamma_sq``.
    """
    m, n = state.m, state.n
    sup, prior = state.hyper.support(m)
    g0, g1 = _effects(state)
    r = np.empty((m, sup.size, n))
    _kern(state).tau0_residuals(sup.astype(float), state.delta(),
                                np.ascontiguousarray(y - state.latent.u), state.mean.alpha0,
                                g0, g1, np.zeros((m, n)), 0, r)
    r *= r
    s2, sg = state.cov.sigma_sq, state.cov.sigma_gamma_sq
    tau = np.minimum(float(m), sup[:, None] + state.delta()[None, :])
    post = np.arange(1, m + 1, dtype=float)[:, None, None] > tau[None]
    wide = post if state.cov.variance_mode == "increase" else ~post
    shrink = 1.0 / s2 - 1.0 / (s2 + sg)
    ll = -0.5 * (r.sum(axis=(0, 2)) / s2 - shrink * np.einsum("akb,akb->k", r, wide)
                 + wide.sum(axis=(0, 2)) * np.log1p(sg / s2))
    with np.errstate(divide="ignore"):
        return sup, np.log(prior) + ll


def refresh_changepoints(state: SamplerState, y: np.ndarray) -> None:
    """Redraw ``(tau0, Delta)`` and the noise variances given ``U`` with the extra noise integrated out.

    Only used in the unequal-variance modes, immediately before the extra
    noise is redrawn. Conditioning the changepoints on the extra-noise draw
    makes them nearly immobile, because that draw absorbs the residuals of
    the wider-regime cells; integrating it out here restores mixing.
    """
    mode = state.cov.variance_mode
    if mode == "equal":
        return
    sup, logw = collapsed_tau0_log_weights(state, y)
    k = categorical_from_log(logw, state.rng)
    state.rebuild_cp(float(sup[min(k, sup.size - 1)]))

    n, rng = state.n, state.rng
    z = rng.standard_normal(n)
    log_u = np.log(rng.random(n))
    prec = state.c_delta.prec
    g0, g1 = _effects(state)
    acc = np.zeros(n, np.uint8)
    _kern(state).delta_sweep_collapsed(
        state.log_delta, state.free.astype(np.uint8), z, log_u, state.adapt_delta.sd, prec,
        prec @ state.delta_resid(), state.cov.sigma_Delta_sq, state.cp.tau0, state.m,
        state.mean.alpha0, g0, g1, np.ascontiguousarray(y - state.latent.u),
        state.cov.sigma_sq, state.cov.sigma_gamma_sq, _EPS_FLAG[mode], acc)
    state.rebuild_cp()
    collapsed_variances(state, y)
    _mask_eps(state)


def slice_sample(logf, x0: float, rng, width: float = 1.0, max_steps: int = 32) -> float:
    """One univariate slice-sampling step with stepping out and shrinkage."""
    level = logf(x0) + np.log(rng.random())
    lo = x0 - width * rng.random()
    hi = lo + width
    j = int(rng.random() * max_steps)
    k = max_steps - 1 - j
    while j > 0 and logf(lo) > level:
        lo -= width
        j -= 1
    while k > 0 and logf(hi) > level:
        hi += width
        k -= 1
    while True:
        x = lo + (hi - lo) * rng.random()
        if logf(x) > level:
            return x
        if x < x0:
            lo = x
        else:
            hi = x


def collapsed_variances(state: SamplerState, y: np.ndarray) -> None:
    """Slice-sample ``log sigma_sq`` and ``log sigma_gamma_sq`` given ``U``, extra noise integrated out.

    Each cell is normal with variance ``sigma_sq`` or, on the active cells,
    ``sigma_sq + sigma_gamma_sq``. Drawing the two variances from this
    likelihood avoids the slow drift of the extra-noise variance when it is
    updated only through the extra-noise draws.
    """
    h, cv = state.hyper, state.cov
    r = y - state.latent.u - state.mu()
    act = state.active()
    s_w, n_w = float(np.sum(r[act] ** 2)), int(act.sum())
    s_n, n_n = float(np.sum(r * r)) - s_w, r.size - n_w

    def loglik(s2, sg):
        w = s2 + sg
        return -0.5 * (s_n / s2 + s_w / w + n_n * np.log(s2) + n_w * np.log(w))

    # log inverse-gamma prior plus the log-scale Jacobian: -a*x - b*exp(-x)
    def log_s2(x):
        return loglik(np.exp(x), cv.sigma_gamma_sq) - h.a1 * x - h.b1 * np.exp(-x)

    cv.sigma_sq = float(np.exp(slice_sample(log_s2, np.log(cv.sigma_sq), state.rng)))

    def log_sg(x):
        return loglik(cv.sigma_sq, np.exp(x)) - h.a2 * x - h.b2 * np.exp(-x)

    cv.sigma_gamma_sq = float(np.exp(slice_sample(log_sg, np.log(cv.sigma_gamma_sq), state.rng)))


# Step 2: fixed effects with U integrated out ------------------------------------

def alpha_conditional(state: SamplerState, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and precision of the Gaussian full conditional of ``alpha``."""
    ku = state.ku
    z = z_columns(state.cp)
    b = y - state.eps_term() - random_part(state.mean, state.cp)
    d = ku.diag_plus(state.cov.sigma_sq)
    zt = ku.whiten(z) / np.sqrt(d)
    bt = ku.whiten(b) / np.sqrt(d)
    prec = np.einsum("imn,jmn->ij", zt, zt) + np.eye(3) / state.hyper.s_a_sq
    rhs = np.einsum("imn,mn->i", zt, bt)
    try:
        c = cholesky(prec, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("singular alpha precision") from exc
    return cho_solve((c, True), rhs), prec


def sample_alpha(state: SamplerState, y: np.ndarray) -> None:
    """Exact draw from the Gaussian full conditional of ``(alpha0, gamma0F, gamma1F)``."""
    mean, prec = alpha_conditional(state, y)
    c = cholesky(prec, lower=True)
    draw = mean + solve_triangular(c.T, state.rng.standard_normal(3), lower=False)
    state.mean.alpha0, state.mean.gamma0F, state.mean.gamma1F = (float(v) for v in draw)


# Step 3: space-time process ------------------------------------------------------

def sample_U(state: SamplerState, y: np.ndarray) -> None:
    resid = y - fitted_without_u(state)
    u = sample_U_posterior(state.ku, state.cov.sigma_sq, resid, state.rng)
    state.latent.u = u.reshape(state.m, state.n)


# Step 4: remaining parameters given U --------------------------------------------

def sample_eps_gamma(state: SamplerState, y: np.ndarray) -> None:
    cv = state.cov
    if cv.variance_mode == "equal":
        state.latent.eps = np.zeros((state.m, state.n))
        return
    act = state.active()
    r = y - state.mu() - state.latent.u
    var = 1.0 / (1.0 / cv.sigma_sq + 1.0 / cv.sigma_gamma_sq)
    z = state.rng.standard_normal((state.m, state.n))
    on = var * r / cv.sigma_sq + np.sqrt(var) * z
    off = np.sqrt(cv.sigma_gamma_sq) * z if state.config.eps_support == "full" else 0.0
    state.latent.eps = np.where(act, on, off)


def gibbs_variances(state: SamplerState, y: np.ndarray) -> None:
    h, cv, rng = state.hyper, state.cov, state.rng
    mn = state.m * state.n
    r = y - state.latent.u - fitted_without_u(state)
    cv.sigma_sq = sample_inv_gamma(rng, h.a1 + mn / 2, h.b1 + float(r.ravel() @ r.ravel()) / 2)
    if cv.variance_mode != "equal":
        if state.config.eps_support == "active":
            e = state.eps_term()
            k = int(state.active().sum())
        else:
            e = state.latent.eps
            k = mn
        cv.sigma_gamma_sq = sample_inv_gamma(rng, h.a2 + k / 2, h.b2 + float(np.sum(e * e)) / 2)
    q = kron_quadratic_inverse(state.ku, state.latent.u)
    cv.sigma_U_sq = sample_inv_gamma(rng, h.a3 + mn / 2, h.b3 + q / 2)
    state.ku.scale = cv.sigma_U_sq
    nfree = int(state.free.sum())
    cv.sigma_Delta_sq = sample_inv_gamma(
        rng, h.a4 + nfree / 2, h.b4 + state.c_delta.quad(state.delta_resid()) / 2)


def gibbs_trunc_variances(state: SamplerState) -> None:
    if not state.config.random_effects:
        return
    h, cv, mp = state.hyper, state.cov, state.mean
    shape = h.a5 + state.n / 2
    for name, gF, gR, cache in (("sigma_g0_sq", mp.gamma0F, mp.gamma0R, state.c_g0),
                                ("sigma_g1_sq", mp.gamma1F, mp.gamma1R, state.c_g1)):
        upper = max(gF ** 2 / 9.0, h.trunc_floor)
        setattr(cv, name, sample_trunc_inv_gamma(state.rng, shape, h.b5 + cache.quad(gR) / 2, upper))


def beta_conditional(state: SamplerState) -> tuple[np.ndarray, np.ndarray]:
    x, p = state.x, state.c_delta.prec
    ld = np.where(state.free, state.log_delta, 0.0)
    s2 = state.cov.sigma_Delta_sq
    prec = x.T @ p @ x / s2 + np.eye(2) / state.hyper.s_b_sq
    cov = np.linalg.inv(prec)
    return cov @ (x.T @ p @ ld / s2), cov


def gibbs_beta(state: SamplerState) -> None:
    if state.config.pin_beta or "beta" in state.config.fixed:
        return
    mean, cov = beta_conditional(state)
    try:
        c = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("singular beta covariance") from exc
    state.cov.beta = mean + c @ state.rng.standard_normal(2)


def _log_trunc_mass(theta: float, lo: float, hi: float, s: float) -> float:
    return float(np.log(ndtr((hi - theta) / s) - ndtr((lo - theta) / s)))


def decay_log_target(state: SamplerState, name: str, theta: float):
    """Log full conditional (up to a constant) of one decay rate and the cache it implies."""
    cv = state.cov
    if name in ("phi_U", "psi_U"):
        ku = state.ku
        u = state.latent.u
        if name == "phi_U":
            eig = EigenFactorization.of(exp_correlation(state.dist_t, theta))
            ut = eig.q.T @ u @ ku.spatial_eig.q
            lam = np.outer(eig.clipped, ku.spatial_eig.clipped)
            power = state.n
        else:
            eig = EigenFactorization.of(exp_correlation(state.dist_s, theta))
            ut = ku.temporal_eig.q.T @ u @ eig.q
            lam = np.outer(ku.temporal_eig.clipped, eig.clipped)
            power = state.m
        quad = float(np.sum(ut * ut / lam))
        return -0.5 * power * eig.logdet() - quad / (2 * cv.sigma_U_sq), eig
    if name == "psi_Delta":
        cache = CorrelationCache.build(state.dist_s, theta, state.free)
        v, s2 = state.delta_resid(), cv.sigma_Delta_sq
    elif name == "psi_g0":
        cache = CorrelationCache.build(state.dist_s, theta)
        v, s2 = state.mean.gamma0R, cv.sigma_g0_sq
    else:
        cache = CorrelationCache.build(state.dist_s, theta)
        v, s2 = state.mean.gamma1R, cv.sigma_g1_sq
    return -0.5 * cache.logdet - cache.quad(v) / (2 * s2), cache


def _current_decay_target(state: SamplerState, name: str) -> float:
    cv = state.cov
    if name in ("phi_U", "psi_U"):
        ku = state.ku
        power = state.n if name == "phi_U" else state.m
        logdet = (ku.temporal_eig if name == "phi_U" else ku.spatial_eig).logdet()
        quad = kron_quadratic_inverse(ku, state.latent.u)
        return -0.5 * power * logdet - quad / (2 * cv.sigma_U_sq)
    cache, v, s2 = {
        "psi_Delta": (state.c_delta, state.delta_resid(), cv.sigma_Delta_sq),
        "psi_g0": (state.c_g0, state.mean.gamma0R, cv.sigma_g0_sq),
        "psi_g1": (state.c_g1, state.mean.gamma1R, cv.sigma_g1_sq),
    }[name]
    return -0.5 * cache.logdet - cache.quad(v) / (2 * s2)


def _install_decay(state: SamplerState, name: str, theta: float, cache) -> None:
    setattr(state.cov, name, theta)
    if name == "phi_U":
        state.ku.set_temporal(exp_correlation(state.dist_t, theta), cache)
    elif name == "psi_U":
        state.ku.set_spatial(exp_correlation(state.dist_s, theta), cache)
    elif name == "psi_Delta":
        state.c_delta = cache
    elif name == "psi_g0":
        state.c_g0 = cache
    else:
        state.c_g1 = cache


def mh_update_ranges(state: SamplerState) -> None:
    """One truncated-normal random-walk step for each decay rate."""
    acc = np.zeros(len(DECAYS))
    sds = state.adapt_decay.sd
    for j, name in enumerate(DECAYS):
        if name in state.config.fixed:
            continue
        if name in ("psi_g0", "psi_g1") and not state.config.random_effects:
            continue
        lo, hi = state.hyper.decay_bounds[name]
        cur = getattr(state.cov, name)
        s = sds[j]
        prop = sample_trunc_normal(state.rng, cur, s, lo, hi)
        if not lo < prop < hi:
            continue
        new_target, cache = decay_log_target(state, name, prop)
        log_r = (new_target - _current_decay_target(state, name)
                 + _log_trunc_mass(cur, lo, hi, s) - _log_trunc_mass(prop, lo, hi, s))
        if np.isfinite(log_r) and np.log(state.rng.random()) < log_r:
            _install_decay(state, name, prop, cache)
            acc[j] = 1
    state.adapt_decay.record(acc, _adapting(state))


def conditional_residual(state: SamplerState, y: np.ndarray) -> np.ndarray:
    return y - state.latent.u - fitted_without_u(state)


def _mh_effect(state: SamplerState, y: np.ndarray, which: int) -> None:
    n = state.n
    rng = state.rng
    z = rng.standard_normal(n)
    log_u = np.log(rng.random(n))
    if which == 0:
        x, cache, s2, ap = state.mean.gamma0R, state.c_g0, state.cov.sigma_g0_sq, state.adapt_g0
        basis = state.cp.post.astype(float)
    else:
        x, cache, s2, ap = state.mean.gamma1R, state.c_g1, state.cov.sigma_g1_sq, state.adapt_g1
        basis = np.ascontiguousarray(state.cp.lag())
    resid = np.ascontiguousarray(conditional_residual(state, y))
    prior_w = cache.prec @ x
    acc = np.zeros(n, np.uint8)
    _kern(state).re_sweep(x, z, log_u, ap.sd, cache.prec, prior_w, s2, basis, resid,
                          state.cov.sigma_sq, acc)
    ap.record(acc, _adapting(state))


def mh_update_gamma0R(state: SamplerState, y: np.ndarray) -> None:
    if state.config.random_effects:
        _mh_effect(state, y, 0)


def mh_update_gamma1R(state: SamplerState, y: np.ndarray) -> None:
    if state.config.random_effects:
        _mh_effect(state, y, 1)


def deviance(state: SamplerState, y: np.ndarray) -> float:
    """``-2`` times the log-likelihood given ``U``, with the extra noise integrated out."""
    return -2.0 * noise_marginal_loglik(y, state.mu(), state.latent.u, state.cov, state.cp)
