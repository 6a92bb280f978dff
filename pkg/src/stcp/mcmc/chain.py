"""Initialization, the fixed-order sweep and chain orchestration."""

from __future__ import annotations

import concurrent.futures as cf

import numpy as np

from ..baseline1d import amoc_detect
from ..kron_linalg import InvalidInput, KroneckerCovariance, exp_correlation, time_distance
from ..model import (
    ChangepointField,
    CovarianceParams,
    LatentState,
    MeanParams,
    SpaceTimeGrid,
    design_matrix_X,
    mean_surface,
    noise_marginal_loglik,
    z_columns,
)
from . import updates as up
from .state import (
    DECAYS,
    SCALAR_COLUMNS,
    AdaptiveProposal,
    ChainTrace,
    CorrelationCache,
    Hyperparams,
    SamplerConfig,
    SamplerState,
    scalar_record,
)

# The draw order of one sweep. Steps that integrate U out (tau0, Delta,
# alpha) must precede the U draw, and the parameter block follows it. The
# changepoint refresh integrates the extra noise out, so it must come
# directly before the extra-noise draw.
SWEEP_ORDER = (
    ("tau0", up.sample_tau0),
    ("delta", up.mh_update_delta),
    ("alpha", up.sample_alpha),
    ("U", up.sample_U),
    ("changepoints", up.refresh_changepoints),
    ("eps_gamma", up.sample_eps_gamma),
    ("variances", up.gibbs_variances),
    ("trunc_variances", lambda s, y: up.gibbs_trunc_variances(s)),
    ("beta", lambda s, y: up.gibbs_beta(s)),
    ("decays", lambda s, y: up.mh_update_ranges(s)),
    ("gamma0R", up.mh_update_gamma0R),
    ("gamma1R", up.mh_update_gamma1R),
)


def _detrended_variance(y: np.ndarray) -> float:
    m = y.shape[0]
    t = np.column_stack([np.ones(m), np.arange(1, m + 1, dtype=float)])
    coef, *_ = np.linalg.lstsq(t, y, rcond=None)
    r = y - t @ coef
    v = float(np.mean(r * r))
    return v if v > 0 else 1.0


def initialize(y: np.ndarray, grid: SpaceTimeGrid, config: SamplerConfig | None = None,
               hyper: Hyperparams | None = None, rng=None) -> SamplerState:
    """Starting state for a chain.

    ``tau0`` starts at the lower median of its support, ``log Delta`` is a
    prior draw with ``beta = 0``, ``alpha`` is the no-changepoint least-squares
    fit (``alpha0`` the grand mean) and the variances are moment estimates from
    per-location linearly detrended data. Decay rates start at the midpoints
    of their bounds. Unequal-variance chains with data then get a short
    ``warm_start``.
    """
    config = config or SamplerConfig()
    hyper = hyper or Hyperparams()
    config.check()
    hyper.check()
    rng = np.random.default_rng(rng)
    m, n = grid.m, grid.n
    data_given = y is not None
    y = np.zeros((m, n)) if y is None else _as_field(y, grid)
    sup, _ = hyper.support(m)
    tau0 = float(np.sort(sup)[(sup.size - 1) // 2])

    mid = {k: 0.5 * sum(hyper.decay_bounds[k]) for k in DECAYS}
    v = _detrended_variance(y)
    cov = CovarianceParams(
        sigma_sq=v / 2, sigma_gamma_sq=v / 10, sigma_U_sq=v / 2,
        phi_U=mid["phi_U"], psi_U=mid["psi_U"], sigma_Delta_sq=1.0, psi_Delta=mid["psi_Delta"],
        sigma_g0_sq=hyper.trunc_floor, psi_g0=mid["psi_g0"],
        sigma_g1_sq=hyper.trunc_floor, psi_g1=mid["psi_g1"],
        beta=np.zeros(2), variance_mode=config.variance_mode,
    )
    dist_s = grid.distances()
    dist_t = time_distance(m)
    free = np.ones(n, bool)
    free[grid.origin_index] = False
    c_delta = CorrelationCache.build(dist_s, cov.psi_Delta, free)
    chol = np.linalg.cholesky(c_delta.corr + 1e-10 * np.eye(n))
    log_delta = np.sqrt(cov.sigma_Delta_sq) * (chol @ rng.standard_normal(n))
    log_delta[grid.origin_index] = 0.0

    ku = KroneckerCovariance(cov.sigma_U_sq, exp_correlation(dist_t, cov.phi_U),
                             exp_correlation(dist_s, cov.psi_U))
    b = config.batch_size
    state = SamplerState(
        grid=grid,
        mean=MeanParams.constant(n, alpha0=float(y.mean())),
        cov=cov,
        cp=None,
        latent=LatentState.zeros(m, n),
        log_delta=log_delta,
        ku=ku,
        c_delta=c_delta,
        c_g0=CorrelationCache.build(dist_s, cov.psi_g0),
        c_g1=CorrelationCache.build(dist_s, cov.psi_g1),
        adapt_delta=AdaptiveProposal.uniform(n, config.init_log_var_delta, b),
        adapt_g0=AdaptiveProposal.uniform(n, config.init_log_var_effects, b),
        adapt_g1=AdaptiveProposal.uniform(n, config.init_log_var_effects, b),
        adapt_decay=AdaptiveProposal.uniform(len(DECAYS), config.init_log_var_decay, b),
        rng=rng,
        x=design_matrix_X(grid),
        dist_s=dist_s,
        dist_t=dist_t,
        hyper=hyper,
        config=config,
    )
    state.rebuild_cp(tau0)
    if data_given and config.variance_mode != "equal":
        warm_start(state, y)
    return state


WARM_START_ROUNDS = 10


def scan_start(state: SamplerState, y: np.ndarray) -> None:
    """Set ``tau0``, ``log Delta``, ``beta`` and ``sigma_Delta_sq`` from per-location scans.

    Each series gets a mean-and-variance single-change scan. ``tau0`` is
    the origin's changepoint (or the earliest one found, if the origin has
    none), moved to the nearest support value; locations without a change
    get ``Delta = 2M``. ``beta`` and ``sigma_Delta_sq`` are the least-squares
    fit of ``log Delta`` on the offsets. Nothing changes if no scan finds a
    change.
    """
    m, n = state.m, state.n
    est = np.array([np.inf if r.changepoint is None else float(r.changepoint)
                    for r in (amoc_detect(y[:, i], "meanvar", i) for i in range(n))])
    found = np.isfinite(est)
    if not found.any():
        return
    o = state.grid.origin_index
    sup, _ = state.hyper.support(m)
    target = est[o] if found[o] else est[found].min()
    tau0 = float(sup[np.argmin(np.abs(sup - target))])
    delta = np.where(found, np.maximum(est - tau0, 0.5), 2.0 * m)
    free = state.free
    log_delta = np.log(delta)
    log_delta[o] = 0.0
    beta, *_ = np.linalg.lstsq(state.x[free], log_delta[free], rcond=None)
    resid = log_delta[free] - state.x[free] @ beta
    state.log_delta = log_delta
    state.cov.beta = beta
    state.cov.sigma_Delta_sq = max(float(np.mean(resid * resid)), 0.1)
    state.rebuild_cp(tau0)


def warm_start(state: SamplerState, y: np.ndarray, rounds: int = WARM_START_ROUNDS) -> None:
    """Move an unequal-variance chain to the data before its first sweep.

    The changepoints start from per-location single-change scans. From a
    zero ``U`` the changepoints and both noise variances are then redrawn
    with the extra noise integrated out, alternating with a least-squares
    fit of ``alpha``, and finally the extra noise is drawn from its
    conditional. From the default start the first ``tau0`` step sees extra
    noise that fits the data nowhere and jumps to the latest changepoint;
    the space-time process then absorbs the variance increase and the chain
    needs thousands of sweeps to leave that region.
    """
    scan_start(state, y)
    for _ in range(rounds):
        _fit_alpha(state, y)
        up.refresh_changepoints(state, y)
    _fit_alpha(state, y)
    up.sample_eps_gamma(state, y)


def _fit_alpha(state: SamplerState, y: np.ndarray) -> None:
    """Least-squares ``alpha`` for the current changepoints."""
    z = z_columns(state.cp).reshape(3, -1).T
    coef, *_ = np.linalg.lstsq(z, (y - state.latent.u).ravel(), rcond=None)
    state.mean.alpha0, state.mean.gamma0F, state.mean.gamma1F = (float(c) for c in coef)


def draw_prior(grid: SpaceTimeGrid, config: SamplerConfig | None = None,
               hyper: Hyperparams | None = None, rng=None, decays: dict | None = None) -> SamplerState:
    """A state drawn from the prior.

    Decay rates listed in ``decays`` are set to the given values, the rest are
    uniform on their bounds. With random effects on, ``sigma_gi^2`` is drawn
    from its inverse gamma prior truncated to ``(0, max(gamma_iF^2 / 9, floor)]``.
    """
    config = config or SamplerConfig()
    hyper = hyper or Hyperparams()
    rng = np.random.default_rng(rng)
    st = initialize(None, grid, config, hyper, rng)
    cv, mp, h = st.cov, st.mean, hyper
    m, n = grid.m, grid.n
    decays = decays or {}
    for k in DECAYS:
        lo, hi = h.decay_bounds[k]
        setattr(cv, k, float(decays[k]) if k in decays else float(rng.uniform(lo, hi)))
    st.ku.set_temporal(exp_correlation(st.dist_t, cv.phi_U))
    st.ku.set_spatial(exp_correlation(st.dist_s, cv.psi_U))
    st.c_delta = CorrelationCache.build(st.dist_s, cv.psi_Delta, st.free)
    st.c_g0 = CorrelationCache.build(st.dist_s, cv.psi_g0)
    st.c_g1 = CorrelationCache.build(st.dist_s, cv.psi_g1)

    ig = up.sample_inv_gamma
    cv.sigma_sq = ig(rng, h.a1, h.b1)
    cv.sigma_gamma_sq = ig(rng, h.a2, h.b2)
    cv.sigma_U_sq = ig(rng, h.a3, h.b3)
    st.ku.scale = cv.sigma_U_sq
    cv.sigma_Delta_sq = ig(rng, h.a4, h.b4)
    cv.beta = np.sqrt(h.s_b_sq) * rng.standard_normal(2)
    sup, p = h.support(m)
    tau0 = float(sup[rng.choice(sup.size, p=p)])

    free = st.free
    corr = st.c_delta.corr[np.ix_(free, free)]
    ld = np.zeros(n)
    ld[free] = st.x[free] @ cv.beta + np.sqrt(cv.sigma_Delta_sq) * (
        np.linalg.cholesky(corr) @ rng.standard_normal(free.sum()))
    st.log_delta = ld

    alpha = np.sqrt(h.s_a_sq) * rng.standard_normal(3)
    if config.random_effects:
        tig = up.sample_trunc_inv_gamma
        cv.sigma_g0_sq, cv.sigma_g1_sq = (tig(rng, h.a5, h.b5, max(g ** 2 / 9, h.trunc_floor))
                                          for g in alpha[1:])
    mp.alpha0, mp.gamma0F, mp.gamma1F = (float(a) for a in alpha)
    if config.random_effects:
        mp.gamma0R = np.sqrt(cv.sigma_g0_sq) * (np.linalg.cholesky(st.c_g0.corr) @ rng.standard_normal(n))
        mp.gamma1R = np.sqrt(cv.sigma_g1_sq) * (np.linalg.cholesky(st.c_g1.corr) @ rng.standard_normal(n))
    st.rebuild_cp(tau0)
    lt = np.linalg.cholesky(st.ku.temporal)
    ls = np.linalg.cholesky(st.ku.spatial)
    st.latent.u = np.sqrt(cv.sigma_U_sq) * (lt @ rng.standard_normal((m, n)) @ ls.T)
    if cv.variance_mode != "equal":
        e = np.sqrt(cv.sigma_gamma_sq) * rng.standard_normal((m, n))
        st.latent.eps = e * st.active() if config.eps_support == "active" else e
    return st


def simulate_data(state: SamplerState, rng) -> np.ndarray:
    """Draw ``Y`` given every parameter and latent field in ``state``."""
    noise = np.sqrt(state.cov.sigma_sq) * rng.standard_normal((state.m, state.n))
    return state.mu() + state.latent.u + state.eps_term() + noise


def pcg_sweep(state: SamplerState, y: np.ndarray) -> SamplerState:
    """Run one sweep in the fixed order of ``SWEEP_ORDER``."""
    state.iteration += 1
    for _, step in SWEEP_ORDER:
        step(state, y)
    return state


def _as_field(y, grid: SpaceTimeGrid) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.size != grid.m * grid.n:
        raise InvalidInput(f"data has {y.size} values, grid needs {grid.m * grid.n}")
    y = y.reshape(grid.m, grid.n)
    if not np.all(np.isfinite(y)):
        raise InvalidInput("data contain non-finite values")
    return y


def run_chain(y, grid: SpaceTimeGrid, config: SamplerConfig | None = None,
              hyper: Hyperparams | None = None, seed=None, state: SamplerState | None = None,
              chain_id: int = 0) -> ChainTrace:
    """Run one chain and return its post-burn-in, thinned trace.

    ``state`` may supply a prepared starting state (its config and hyperparameters
    are then used); otherwise :func:`initialize` builds one from ``seed``.
    """
    if state is None:
        config = config or SamplerConfig()
        config.check()
        state = initialize(y, grid, config, hyper, seed)
    config = state.config
    config.check()
    y = _as_field(y, grid)
    m, n = grid.m, grid.n
    keep = range(config.burn_in + 1, config.iterations + 1, config.thin)
    n_keep = len(keep)
    scal = np.empty((n_keep, len(SCALAR_COLUMNS)))
    taus = np.empty((n_keep, n))
    g0s = np.empty((n_keep, n))
    sums = {"u": np.zeros((m, n)), "gamma0R": np.zeros(n), "gamma1R": np.zeros(n),
            "sigma_sq": 0.0, "sigma_gamma_sq": 0.0, "alpha": np.zeros(3)}
    row = 0
    for it in range(1, config.iterations + 1):
        pcg_sweep(state, y)
        state.check_finite()
        if row < n_keep and it == keep[row]:
            dev = up.deviance(state, y)
            scal[row] = scalar_record(state, dev)
            taus[row] = state.cp.tau
            g0s[row] = state.mean.gamma0F + state.mean.gamma0R
            sums["u"] += state.latent.u
            sums["gamma0R"] += state.mean.gamma0R
            sums["gamma1R"] += state.mean.gamma1R
            sums["sigma_sq"] += state.cov.sigma_sq
            sums["sigma_gamma_sq"] += state.cov.sigma_gamma_sq
            sums["alpha"] += state.mean.alpha
            row += 1
    means = {k: v / n_keep for k, v in sums.items()}
    acc = {"delta": state.adapt_delta.acceptance_rate(),
           "gamma0R": state.adapt_g0.acceptance_rate(),
           "gamma1R": state.adapt_g1.acceptance_rate(),
           "decay": state.adapt_decay.acceptance_rate()}
    trace = ChainTrace(m, config.variance_mode, np.asarray(keep), np.full(n_keep, chain_id),
                       scal, taus, g0s, means, acc, config.burn_in, config.thin)
    trace.deviance_at_mean = deviance_at_posterior_mean(trace, y)
    return trace


def deviance_at_posterior_mean(trace: ChainTrace, y: np.ndarray) -> float:
    """Deviance at posterior means, with changepoints at their posterior modes.

    Like the per-draw deviance it conditions on ``U`` and integrates the
    extra noise out, so the three variance modes share one likelihood focus.
    """
    lm = trace.latent_means
    m = trace.m
    y = np.asarray(y, float).reshape(m, -1)
    tau = trace.tau_mode().astype(float)
    t = np.arange(1, m + 1, dtype=float)[:, None]
    cp = ChangepointField(float(tau.min()), np.zeros_like(tau), tau, t > tau[None, :])
    a = lm["alpha"]
    mp = MeanParams(float(a[0]), float(a[1]), float(a[2]), lm["gamma0R"], lm["gamma1R"])
    cov = CovarianceParams(sigma_sq=float(lm["sigma_sq"]),
                           sigma_gamma_sq=float(lm["sigma_gamma_sq"]),
                           variance_mode=trace.variance_mode)
    return -2.0 * noise_marginal_loglik(y, mean_surface(mp, cp), lm["u"], cov, cp)


def merge_traces(traces: list[ChainTrace], y) -> ChainTrace:
    """Concatenate chains; latent means are pooled by retained length."""
    if not traces:
        raise InvalidInput("no traces to merge")
    if len(traces) == 1:
        return traces[0]
    w = np.array([len(t) for t in traces], float)
    w = w / w.sum()
    means = {k: sum(wi * t.latent_means[k] for wi, t in zip(w, traces))
             for k in traces[0].latent_means}
    first = traces[0]
    acc = {k: np.mean([t.acceptance[k] for t in traces], axis=0) for k in first.acceptance}
    out = ChainTrace(first.m, first.variance_mode,
                     np.concatenate([t.iterations for t in traces]),
                     np.concatenate([t.chain for t in traces]),
                     np.vstack([t.scalars for t in traces]),
                     np.vstack([t.tau for t in traces]),
                     np.vstack([t.gamma0 for t in traces]),
                     means, acc, first.burn_in, first.thin)
    out.deviance_at_mean = deviance_at_posterior_mean(out, y)
    return out


def _chain_job(args):
    y, grid, config, hyper, seed, cid = args
    return run_chain(y, grid, config, hyper, seed, chain_id=cid)


def run_chains(y, grid: SpaceTimeGrid, config: SamplerConfig | None = None,
               hyper: Hyperparams | None = None, seed=None, chains: int = 1,
               workers: int = 1) -> ChainTrace:
    """Run independent chains seeded by spawning ``SeedSequence(seed)`` and merge them."""
    if chains < 1:
        raise InvalidInput("chains must be >= 1")
    config = config or SamplerConfig()
    seeds = np.random.SeedSequence(seed).spawn(chains)
    jobs = [(y, grid, config, hyper, s, i) for i, s in enumerate(seeds)]
    if workers > 1 and chains > 1:
        with cf.ProcessPoolExecutor(workers) as ex:
            traces = list(ex.map(_chain_job, jobs))
    else:
        traces = [_chain_job(j) for j in jobs]
    return merge_traces(traces, y)
