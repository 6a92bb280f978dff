"""Partially collapsed Gibbs sampler for the spatially varying changepoint model."""

from .chain import (
    SWEEP_ORDER,
    draw_prior,
    initialize,
    merge_traces,
    pcg_sweep,
    run_chain,
    run_chains,
    scan_start,
    simulate_data,
    warm_start,
)
from .state import (
    DECAYS,
    SCALAR_COLUMNS,
    TARGET_ACCEPT,
    AdaptiveProposal,
    ChainTrace,
    CorrelationCache,
    Hyperparams,
    SamplerConfig,
    SamplerState,
    adapt_batch,
    adaptation_step,
)
from .updates import (
    deviance,
    gibbs_beta,
    gibbs_trunc_variances,
    gibbs_variances,
    mh_update_delta,
    mh_update_gamma0R,
    mh_update_gamma1R,
    mh_update_ranges,
    refresh_changepoints,
    sample_alpha,
    sample_eps_gamma,
    sample_tau0,
    sample_U,
    sample_trunc_inv_gamma,
    tau0_log_weights,
)

__all__ = [
    "AdaptiveProposal", "ChainTrace", "CorrelationCache", "DECAYS", "Hyperparams",
    "SCALAR_COLUMNS", "SWEEP_ORDER", "SamplerConfig", "SamplerState", "TARGET_ACCEPT",
    "adapt_batch", "adaptation_step", "deviance", "draw_prior", "gibbs_beta",
    "gibbs_trunc_variances", "gibbs_variances", "initialize", "merge_traces", "mh_update_delta",
    "mh_update_gamma0R", "mh_update_gamma1R", "mh_update_ranges", "pcg_sweep",
    "refresh_changepoints", "run_chain", "run_chains", "sample_U", "sample_alpha",
    "sample_eps_gamma", "sample_tau0", "sample_trunc_inv_gamma", "scan_start", "simulate_data",
    "tau0_log_weights", "warm_start",
]
