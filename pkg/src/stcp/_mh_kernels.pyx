# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled component-wise Metropolis sweeps.

See ``_mh_kernels_py`` for the reference semantics; arguments and in-place
effects are identical. ``prec`` must be symmetric (row ``i`` is read in place
of column ``i``).
"""

import numpy as np
from libc.math cimport exp, isfinite, log


cdef inline double _fitted(double tau, double t, double alpha0, double g0, double g1,
                           double eps, int eps_flag) nogil:
    cdef double f = alpha0
    if t > tau:
        f += g0 + g1 * (t - tau)
        if eps_flag == 1:
            f += eps
    elif eps_flag == 2:
        f += eps
    return f


cdef inline double _prior_delta(Py_ssize_t i, double d, const double[:, ::1] prec,
                                const double[::1] prior_w, double prior_var) nogil:
    return -(2.0 * d * prior_w[i] + d * d * prec[i, i]) / (2.0 * prior_var)


def delta_sweep_conditional(double[::1] log_delta, const unsigned char[::1] free,
                            const double[::1] z, const double[::1] log_u,
                            const double[::1] prop_sd, const double[:, ::1] prec,
                            double[::1] prior_w, double prior_var, double tau0, int m,
                            double alpha0, const double[::1] g0, const double[::1] g1,
                            const double[:, ::1] eps, int eps_flag,
                            const double[:, ::1] base, double sigma_sq,
                            unsigned char[::1] accepted):
    cdef Py_ssize_t n = log_delta.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double d, cur, tau_old, tau_new, t, e_old, e_new, ss_old, ss_new, log_r
    with nogil:
        for i in range(n):
            accepted[i] = 0
            if not free[i]:
                continue
            d = prop_sd[i] * z[i]
            cur = log_delta[i]
            tau_old = min(<double>m, tau0 + exp(cur))
            tau_new = min(<double>m, tau0 + exp(cur + d))
            ss_old = 0.0
            ss_new = 0.0
            for k in range(m):
                t = k + 1.0
                e_old = base[k, i] - _fitted(tau_old, t, alpha0, g0[i], g1[i], eps[k, i], eps_flag)
                e_new = base[k, i] - _fitted(tau_new, t, alpha0, g0[i], g1[i], eps[k, i], eps_flag)
                ss_old += e_old * e_old
                ss_new += e_new * e_new
            log_r = _prior_delta(i, d, prec, prior_w, prior_var) + (ss_old - ss_new) / (2.0 * sigma_sq)
            if isfinite(log_r) and log_u[i] < log_r:
                log_delta[i] = cur + d
                for j in range(n):
                    prior_w[j] += d * prec[i, j]
                accepted[i] = 1


cdef inline double _column_loglik(double tau, Py_ssize_t i, int m, double alpha0, double g0,
                                  double g1, const double[:, ::1] base, double sigma_sq,
                                  double wide_sq, int var_flag) nogil:
    cdef Py_ssize_t k
    cdef double t, e, v, ll = 0.0
    cdef bint post
    for k in range(m):
        t = k + 1.0
        e = base[k, i] - _fitted(tau, t, alpha0, g0, g1, 0.0, 0)
        post = t > tau
        if (var_flag == 1 and post) or (var_flag == 2 and not post):
            v = wide_sq
        else:
            v = sigma_sq
        ll -= 0.5 * (e * e / v + log(v))
    return ll


def delta_sweep_collapsed(double[::1] log_delta, const unsigned char[::1] free,
                          const double[::1] z, const double[::1] log_u,
                          const double[::1] prop_sd, const double[:, ::1] prec,
                          double[::1] prior_w, double prior_var, double tau0, int m,
                          double alpha0, const double[::1] g0, const double[::1] g1,
                          const double[:, ::1] base, double sigma_sq, double sigma_gamma_sq,
                          int var_flag, unsigned char[::1] accepted):
    cdef Py_ssize_t n = log_delta.shape[0]
    cdef Py_ssize_t i, j
    cdef double d, cur, tau_old, tau_new, log_r
    cdef double wide = sigma_sq + sigma_gamma_sq
    with nogil:
        for i in range(n):
            accepted[i] = 0
            if not free[i]:
                continue
            d = prop_sd[i] * z[i]
            cur = log_delta[i]
            tau_old = min(<double>m, tau0 + exp(cur))
            tau_new = min(<double>m, tau0 + exp(cur + d))
            log_r = (_prior_delta(i, d, prec, prior_w, prior_var)
                     + _column_loglik(tau_new, i, m, alpha0, g0[i], g1[i], base, sigma_sq, wide, var_flag)
                     - _column_loglik(tau_old, i, m, alpha0, g0[i], g1[i], base, sigma_sq, wide, var_flag))
            if isfinite(log_r) and log_u[i] < log_r:
                log_delta[i] = cur + d
                for j in range(n):
                    prior_w[j] += d * prec[i, j]
                accepted[i] = 1


def delta_sweep_integrated(double[::1] log_delta, const unsigned char[::1] free,
                           const double[::1] z, const double[::1] log_u,
                           const double[::1] prop_sd, const double[:, ::1] prec,
                           double[::1] prior_w, double prior_var, double tau0, int m,
                           double alpha0, const double[::1] g0, const double[::1] g1,
                           const double[:, ::1] eps, int eps_flag,
                           const double[:, ::1] qt, const double[:, ::1] qs,
                           double[:, ::1] rt, const double[:, ::1] dinv,
                           unsigned char[::1] accepted):
    cdef Py_ssize_t n = log_delta.shape[0]
    cdef Py_ssize_t i, j, a, b, k
    cdef double d, cur, tau_old, tau_new, t, dr, cross, self_term, dquad, log_r, ga, hb
    cdef double[::1] g = np.zeros(m)
    with nogil:
        for i in range(n):
            accepted[i] = 0
            if not free[i]:
                continue
            d = prop_sd[i] * z[i]
            cur = log_delta[i]
            tau_old = min(<double>m, tau0 + exp(cur))
            tau_new = min(<double>m, tau0 + exp(cur + d))
            for a in range(m):
                g[a] = 0.0
            for k in range(m):
                t = k + 1.0
                dr = (_fitted(tau_old, t, alpha0, g0[i], g1[i], eps[k, i], eps_flag)
                      - _fitted(tau_new, t, alpha0, g0[i], g1[i], eps[k, i], eps_flag))
                if dr != 0.0:
                    for a in range(m):
                        g[a] += qt[k, a] * dr
            dquad = 0.0
            for a in range(m):
                ga = g[a]
                if ga == 0.0:
                    continue
                cross = 0.0
                self_term = 0.0
                for b in range(n):
                    hb = qs[i, b]
                    cross += rt[a, b] * dinv[a, b] * hb
                    self_term += dinv[a, b] * hb * hb
                dquad += 2.0 * ga * cross + ga * ga * self_term
            log_r = _prior_delta(i, d, prec, prior_w, prior_var) - 0.5 * dquad
            if isfinite(log_r) and log_u[i] < log_r:
                log_delta[i] = cur + d
                for j in range(n):
                    prior_w[j] += d * prec[i, j]
                for a in range(m):
                    ga = g[a]
                    if ga != 0.0:
                        for b in range(n):
                            rt[a, b] += ga * qs[i, b]
                accepted[i] = 1


def re_sweep(double[::1] x, const double[::1] z, const double[::1] log_u,
             const double[::1] prop_sd, const double[:, ::1] prec, double[::1] prior_w,
             double prior_var, const double[:, ::1] basis, double[:, ::1] resid,
             double sigma_sq, unsigned char[::1] accepted):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = basis.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double d, eb, bb, bk, log_r
    with nogil:
        for i in range(n):
            d = prop_sd[i] * z[i]
            eb = 0.0
            bb = 0.0
            for k in range(m):
                bk = basis[k, i]
                eb += resid[k, i] * bk
                bb += bk * bk
            log_r = _prior_delta(i, d, prec, prior_w, prior_var) + (2.0 * d * eb - d * d * bb) / (2.0 * sigma_sq)
            if isfinite(log_r) and log_u[i] < log_r:
                x[i] += d
                for j in range(n):
                    prior_w[j] += d * prec[i, j]
                for k in range(m):
                    resid[k, i] -= d * basis[k, i]
                accepted[i] = 1
            else:
                accepted[i] = 0


def tau0_residuals(const double[::1] cand, const double[::1] delta, const double[:, ::1] y,
                   double alpha0, const double[::1] g0, const double[::1] g1,
                   const double[:, ::1] eps, int eps_flag, double[:, :, ::1] out):
    cdef Py_ssize_t s_count = cand.shape[0]
    cdef Py_ssize_t m = y.shape[0]
    cdef Py_ssize_t n = y.shape[1]
    cdef Py_ssize_t k, a, i
    cdef double tau, t
    with nogil:
        for a in range(m):
            t = a + 1.0
            for k in range(s_count):
                for i in range(n):
                    tau = min(<double>m, cand[k] + delta[i])
                    out[a, k, i] = y[a, i] - _fitted(tau, t, alpha0, g0[i], g1[i], eps[a, i], eps_flag)
