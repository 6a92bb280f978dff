"""Pure-Python component-wise Metropolis sweeps.

Reference implementation of the compiled kernels in ``_mh_kernels.pyx``.
Both take identical arguments, consume pre-drawn random numbers and update
their array arguments in place, so a chain gives the same draws under
either backend up to floating-point rounding.

``eps_flag`` selects where the extra-noise vector enters the fitted value:
0 nowhere, 1 on post-change cells, 2 on pre-change cells.
"""

import numpy as np


def _fitted_column(tau, alpha0, g0, g1, eps_col, eps_flag, t):
    post = t > tau
    f = alpha0 + np.where(post, g0 + g1 * (t - tau), 0.0)
    if eps_flag == 1:
        f = f + np.where(post, eps_col, 0.0)
    elif eps_flag == 2:
        f = f + np.where(post, 0.0, eps_col)
    return f


def _prior_delta(i, d, prec, prior_w, prior_var):
    return -(2.0 * d * prior_w[i] + d * d * prec[i, i]) / (2.0 * prior_var)


def delta_sweep_conditional(log_delta, free, z, log_u, prop_sd, prec, prior_w, prior_var,
                            tau0, m, alpha0, g0, g1, eps, eps_flag, base, sigma_sq,
                            accepted):
    """Random-walk update of each free ``log Delta`` given ``U``.

    ``base`` is ``Y - U``; the data term is the Gaussian likelihood of the
    affected column with variance ``sigma_sq``.
    """
    n = log_delta.shape[0]
    t = np.arange(1, m + 1, dtype=float)
    for i in range(n):
        accepted[i] = 0
        if not free[i]:
            continue
        d = prop_sd[i] * z[i]
        cur = log_delta[i]
        tau_old = min(float(m), tau0 + np.exp(cur))
        tau_new = min(float(m), tau0 + np.exp(cur + d))
        col = base[:, i]
        e_old = col - _fitted_column(tau_old, alpha0, g0[i], g1[i], eps[:, i], eps_flag, t)
        e_new = col - _fitted_column(tau_new, alpha0, g0[i], g1[i], eps[:, i], eps_flag, t)
        log_r = (_prior_delta(i, d, prec, prior_w, prior_var)
                 + (np.dot(e_old, e_old) - np.dot(e_new, e_new)) / (2.0 * sigma_sq))
        if np.isfinite(log_r) and log_u[i] < log_r:
            log_delta[i] = cur + d
            prior_w += d * prec[:, i]
            accepted[i] = 1


def _column_loglik(tau, col, alpha0, g0, g1, sigma_sq, wide_sq, var_flag, t):
    e = col - _fitted_column(tau, alpha0, g0, g1, None, 0, t)
    post = t > tau
    wide = post if var_flag == 1 else ~post
    v = np.where(wide, wide_sq, sigma_sq) if var_flag else np.full_like(t, sigma_sq)
    return -0.5 * float(np.sum(e * e / v + np.log(v)))


def delta_sweep_collapsed(log_delta, free, z, log_u, prop_sd, prec, prior_w, prior_var,
                          tau0, m, alpha0, g0, g1, base, sigma_sq, sigma_gamma_sq, var_flag,
                          accepted):
    """Random-walk update of each free ``log Delta`` given ``U`` with the extra noise integrated out.

    ``base`` is ``Y - U``. Cells of the wider regime (post-change for
    ``var_flag`` 1, pre-change for 2) have variance ``sigma_sq + sigma_gamma_sq``.
    """
    n = log_delta.shape[0]
    t = np.arange(1, m + 1, dtype=float)
    wide = sigma_sq + sigma_gamma_sq
    for i in range(n):
        accepted[i] = 0
        if not free[i]:
            continue
        d = prop_sd[i] * z[i]
        cur = log_delta[i]
        tau_old = min(float(m), tau0 + np.exp(cur))
        tau_new = min(float(m), tau0 + np.exp(cur + d))
        col = base[:, i]
        log_r = (_prior_delta(i, d, prec, prior_w, prior_var)
                 + _column_loglik(tau_new, col, alpha0, g0[i], g1[i], sigma_sq, wide, var_flag, t)
                 - _column_loglik(tau_old, col, alpha0, g0[i], g1[i], sigma_sq, wide, var_flag, t))
        if np.isfinite(log_r) and log_u[i] < log_r:
            log_delta[i] = cur + d
            prior_w += d * prec[:, i]
            accepted[i] = 1


def delta_sweep_integrated(log_delta, free, z, log_u, prop_sd, prec, prior_w, prior_var,
                           tau0, m, alpha0, g0, g1, eps, eps_flag, qt, qs, rt, dinv,
                           accepted):
    """Random-walk update of each free ``log Delta`` with ``U`` integrated out.

    ``rt`` holds the residual ``Y - fitted`` rotated into the joint eigenbasis
    (``Qt' R Qs``) and ``dinv`` the reciprocal eigenvalues of
    ``sigma_sq*I + Sigma_U``. A change confined to column ``i`` rotates to the
    rank-one update ``outer(Qt' dr, Qs[i])``.
    """
    n = log_delta.shape[0]
    t = np.arange(1, m + 1, dtype=float)
    for i in range(n):
        accepted[i] = 0
        if not free[i]:
            continue
        d = prop_sd[i] * z[i]
        cur = log_delta[i]
        tau_old = min(float(m), tau0 + np.exp(cur))
        tau_new = min(float(m), tau0 + np.exp(cur + d))
        dr = (_fitted_column(tau_old, alpha0, g0[i], g1[i], eps[:, i], eps_flag, t)
              - _fitted_column(tau_new, alpha0, g0[i], g1[i], eps[:, i], eps_flag, t))
        g = qt.T @ dr
        h = qs[i]
        cross = (rt * dinv) @ h
        self_term = dinv @ (h * h)
        dquad = 2.0 * np.dot(g, cross) + np.dot(g * g, self_term)
        log_r = _prior_delta(i, d, prec, prior_w, prior_var) - 0.5 * dquad
        if np.isfinite(log_r) and log_u[i] < log_r:
            log_delta[i] = cur + d
            prior_w += d * prec[:, i]
            rt += np.outer(g, h)
            accepted[i] = 1


def re_sweep(x, z, log_u, prop_sd, prec, prior_w, prior_var, basis, resid, sigma_sq,
             accepted):
    """Random-walk update of each spatial random effect.

    The fitted value moves by ``d * basis[:, i]`` when component ``i`` moves
    by ``d``; ``resid`` is the current conditional residual and ``prior_w``
    the product ``prec @ x``.
    """
    n = x.shape[0]
    for i in range(n):
        d = prop_sd[i] * z[i]
        b = basis[:, i]
        e = resid[:, i]
        log_r = (_prior_delta(i, d, prec, prior_w, prior_var)
                 + (2.0 * d * np.dot(e, b) - d * d * np.dot(b, b)) / (2.0 * sigma_sq))
        if np.isfinite(log_r) and log_u[i] < log_r:
            x[i] += d
            prior_w += d * prec[:, i]
            resid[:, i] -= d * b
            accepted[i] = 1
        else:
            accepted[i] = 0


def tau0_residuals(cand, delta, y, alpha0, g0, g1, eps, eps_flag, out):
    """Residuals ``Y - fitted`` for every candidate origin changepoint.

    ``out`` has shape ``(M, S, N)``: time, candidate, location.
    """
    m = y.shape[0]
    t = np.arange(1, m + 1, dtype=float)[:, None, None]
    tau = np.minimum(float(m), cand[:, None] + delta[None, :])[None, :, :]
    lag = t - tau
    post = lag > 0
    f = alpha0 + np.where(post, g0 + g1 * lag, 0.0)
    if eps_flag == 1:
        f = f + np.where(post, eps[:, None, :], 0.0)
    elif eps_flag == 2:
        f = f + np.where(post, 0.0, eps[:, None, :])
    out[...] = y[:, None, :] - f
