"""Pure-Python adaptation loop (fallback backend).

Drives :mod:`proxsaf.adaptive` frame by frame over precomputed subband
signals.  The compiled extension in ``_core.pyx`` implements the same
contract; ``proxsaf._backend`` picks whichever is available.

Conventions shared by both backends:

* frame k covers fullband samples kN .. kN+N-1 and its regressors end
  at time n_k = (k+1)N - 1;
* ``sub_u_padded[i, j]`` is the band-i filtered input at time j-(M-1)
  (M-1 leading zeros, so startup regressors read zeros);
* ``msd[k]`` is measured against the weights *before* the frame-k
  update, aligning index k with the performance model's iteration k;
* the delayless fullband residual for the samples of frame k uses the
  same pre-update weight snapshot;
* a frame whose pre-update deviation is non-finite or above
  ``DIVERGENCE_LIMIT``, or whose update produces non-finite values,
  marks the trial diverged; the remaining series is NaN;
* frames before ``adapt_start`` hold the weights (the runner uses this
  to wait out the delay-line fill, where partially overlapping short
  regressor windows make the stacked per-band updates locally unstable
  at large step sizes).
"""

from __future__ import annotations

import numpy as np

from . import adaptive
from .filterbank import SubbandFrame

BACKEND_NAME = "python"
DIVERGENCE_LIMIT = 1e12

_RULES = {0: adaptive.IdentityRule, 1: adaptive.SimplifiedRule, 2: adaptive.PnlmsRule}


def run_adaptation(
    sub_u_padded: np.ndarray,
    sub_d: np.ndarray,
    wo_pre: np.ndarray,
    wo_post: np.ndarray,
    change_frame: int,
    mu: float,
    beta: float,
    delta: float,
    rule_kind: int,
    zeta: float,
    epsilon: float,
    rho: float,
    gamma: float,
    auto_beta: bool,
    tau: float,
    tracker_period: int,
    full_u_padded: np.ndarray | None = None,
    full_d: np.ndarray | None = None,
    ss_start: int = -1,
    adapt_start: int = 0,
) -> dict:
    n_bands, padded_len = sub_u_padded.shape
    num_frames = sub_d.shape[0]
    m = wo_pre.size
    if padded_len != num_frames * n_bands + m - 1:
        raise ValueError("sub_u_padded length inconsistent with frame count")

    if rule_kind == 0:
        rule = adaptive.IdentityRule()
    elif rule_kind == 1:
        rule = adaptive.SimplifiedRule(zeta=zeta, epsilon=epsilon)
    elif rule_kind == 2:
        rule = adaptive.PnlmsRule(rho=rho, gamma=gamma)
    else:
        raise ValueError(f"unknown rule kind {rule_kind}")

    state = adaptive.FilterState.create(
        m,
        n_bands,
        step_size=mu,
        threshold=beta,
        regularization=delta,
        prop_rule=rule,
        beta_mode="auto" if auto_beta else "fixed",
        tau=tau,
    )
    state.tracker_period = int(tracker_period)

    want_aec = full_u_padded is not None
    msd = np.full(num_frames, np.nan)
    beta_trace = np.full(num_frames, np.nan)
    e_full = np.full(num_frames * n_bands, np.nan) if want_aec else None
    ss_gain_sum = np.zeros(m)
    ss_werr2_sum = np.zeros(m)
    ss_count = 0
    diverged = False
    diverged_at = -1

    for k in range(num_frames):
        wo = wo_pre if k < change_frame else wo_post
        dev = state.weights - wo
        msd[k] = dev @ dev
        if not np.isfinite(msd[k]) or msd[k] > DIVERGENCE_LIMIT:
            diverged, diverged_at = True, k
            break
        start = k * n_bands
        if want_aec:
            w_rev = state.weights[::-1]
            for j in range(n_bands):
                n = start + j
                e_full[n] = full_d[n] - full_u_padded[n : n + m] @ w_rev
        if k < adapt_start:
            beta_trace[k] = state.threshold
            continue
        end = start + n_bands - 1  # = n_k, position of newest sample in padded array
        regressors = sub_u_padded[:, end : end + m][:, ::-1]
        frame = SubbandFrame(k, regressors, sub_d[k])
        try:
            adaptive.iterate(state, frame)
        except adaptive.DivergenceError:
            diverged, diverged_at = True, k
            break
        beta_trace[k] = state.threshold
        if 0 <= ss_start <= k:
            ss_gain_sum += state.gains
            ss_werr2_sum += (state.weights - wo) ** 2
            ss_count += 1

    return {
        "msd": msd,
        "weights": state.weights.copy(),
        "diverged": diverged,
        "diverged_at": diverged_at,
        "e_full": e_full,
        "beta_trace": beta_trace,
        "ss_gain_sum": ss_gain_sum,
        "ss_werr2_sum": ss_werr2_sum,
        "ss_count": ss_count,
    }
