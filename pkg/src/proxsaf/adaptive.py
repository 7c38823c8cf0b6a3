"""Subband adaptive weight updates.

One update pipeline covers the whole algorithm family: a proportionate
forward step followed by a soft-thresholding proximal step.  Setting the
threshold to zero recovers the plain proportionate update (PNSAF), and
additionally using the identity gain rule recovers the normalized
update (NSAF).  The gain matrix is kept trace-normalized (gains sum to
about 1), so the regularizer delta is always expressed in units of the
per-subband signal variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .filterbank import SubbandFrame

__all__ = [
    "FilterState",
    "IdentityRule",
    "SimplifiedRule",
    "PnlmsRule",
    "DivergenceError",
    "gains_simplified",
    "gains_pnlms",
    "compute_gains",
    "subband_errors",
    "forward_step",
    "proximal_step",
    "beta_update",
    "iterate",
    "delayless_error",
    "save_weights",
    "load_weights",
]


class DivergenceError(RuntimeError):
    """The update produced non-finite values; state was not committed."""


@dataclass(frozen=True)
class IdentityRule:
    """All gains equal 1/M: proportionate mechanism disabled."""

    kind = "identity"


@dataclass(frozen=True)
class SimplifiedRule:
    """Cost-effective proportionate rule driven by |w_m| shares."""

    kind = "simplified"
    zeta: float = 0.0
    epsilon: float = 1e-4

    def __post_init__(self):
        if not -1.0 <= self.zeta < 1.0:
            raise ValueError("zeta must lie in [-1, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class PnlmsRule:
    """Classic PNLMS-style gains with floor rho and startup constant gamma."""

    kind = "pnlms"
    rho: float = 0.04
    gamma: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def gains_simplified(weights: np.ndarray, zeta: float, epsilon: float) -> np.ndarray:
    """g_m = (1-zeta)/(2M) + (1+zeta)|w_m| / (2*sum|w| + epsilon)."""
    w = np.abs(np.asarray(weights, dtype=float))
    m = w.size
    return (1.0 - zeta) / (2.0 * m) + (1.0 + zeta) * w / (2.0 * w.sum() + epsilon)


def gains_pnlms(weights: np.ndarray, rho: float, gamma: float) -> np.ndarray:
    """q_m = max(rho*max(gamma, max|w|), |w_m|), normalized to sum 1."""
    w = np.abs(np.asarray(weights, dtype=float))
    floor = rho * max(gamma, float(w.max()))
    q = np.maximum(floor, w)
    return q / q.sum()


def compute_gains(rule, weights: np.ndarray) -> np.ndarray:
    if rule.kind == "identity":
        return np.full(weights.size, 1.0 / weights.size)
    if rule.kind == "simplified":
        return gains_simplified(weights, rule.zeta, rule.epsilon)
    if rule.kind == "pnlms":
        return gains_pnlms(weights, rule.rho, rule.gamma)
    raise ValueError(f"unknown proportionate rule {rule!r}")


@dataclass
class FilterState:
    """Mutable per-trial state of the adaptive filter.

    ``threshold`` is the sparsity penalty intensity beta (the proximal
    step thresholds at mu*beta).  ``beta_mode`` is "fixed" or "auto";
    in auto mode beta is re-estimated every iteration from the
    intermediate vector and the slow tracker ``w_hat``.
    """

    weights: np.ndarray
    intermediate: np.ndarray
    gains: np.ndarray
    step_size: float
    threshold: float
    regularization: float
    prop_rule: object
    beta_mode: str = "fixed"
    tau: float = 0.0
    w_hat: np.ndarray | None = None
    iteration: int = 0
    tracker_period: int = 1

    @classmethod
    def create(
        cls,
        filter_length: int,
        num_subbands: int,
        step_size: float,
        threshold: float = 0.0,
        regularization: float = 1e-3,
        prop_rule=None,
        beta_mode: str = "fixed",
        tau: float = 0.0,
    ) -> "FilterState":
        if step_size <= 0:
            raise ValueError("step_size must be positive")
        if threshold < 0:
            raise ValueError("threshold must be non-negative")
        if regularization <= 0:
            raise ValueError("regularization must be positive")
        if beta_mode not in ("fixed", "auto"):
            raise ValueError("beta_mode must be 'fixed' or 'auto'")
        if tau < 0:
            raise ValueError("tau must be non-negative")
        rule = prop_rule if prop_rule is not None else IdentityRule()
        m = int(filter_length)
        zeros = np.zeros(m)
        # the tracker resets every M/N iterations; round for indivisible pairs
        period = max(1, round(m / num_subbands))
        return cls(
            weights=zeros.copy(),
            intermediate=zeros.copy(),
            gains=compute_gains(rule, zeros),
            step_size=float(step_size),
            threshold=float(threshold),
            regularization=float(regularization),
            prop_rule=rule,
            beta_mode=beta_mode,
            tau=float(tau),
            w_hat=zeros.copy(),
            iteration=0,
            tracker_period=period,
        )

    @property
    def filter_length(self) -> int:
        return self.weights.size


def subband_errors(state: FilterState, frame: SubbandFrame) -> np.ndarray:
    """Decimated subband errors e_i = d_i - u_i^T w."""
    if frame.regressors.shape[1] != state.filter_length:
        raise ValueError(
            f"regressor length {frame.regressors.shape[1]} does not match "
            f"filter length {state.filter_length}"
        )
    return frame.desired - frame.regressors @ state.weights


def forward_step(
    state: FilterState, frame: SubbandFrame, errors: np.ndarray
) -> np.ndarray:
    """Proportionate gradient step producing the intermediate vector.

    psi = w + mu * sum_i G u_i e_i / (u_i^T G u_i + delta), with the
    gains in ``state.gains`` (computed from the current weights).
    """
    g = state.gains
    u = frame.regressors
    denom = (u * u) @ g + state.regularization
    scale = state.step_size * errors / denom
    psi = state.weights + (scale @ u) * g
    if not np.all(np.isfinite(psi)):
        bad = int(np.flatnonzero(~np.isfinite(psi))[0])
        raise DivergenceError(
            f"non-finite intermediate weight at index {bad}, iteration {state.iteration}"
        )
    return psi


def proximal_step(psi: np.ndarray, threshold: float) -> np.ndarray:
    """Component-wise soft threshold: sgn(psi) * max(|psi| - threshold, 0)."""
    if threshold == 0.0:
        return psi.copy()
    return np.sign(psi) * np.maximum(np.abs(psi) - threshold, 0.0)


def beta_update(state: FilterState, psi: np.ndarray) -> float:
    """Re-estimate the thresholding intensity from the intermediate vector.

    Tracks a reference weight vector (reset to psi every
    ``tracker_period`` iterations, otherwise an equal-weight running
    average) and returns max(||psi||_1 - ||w_hat||_1, tau) divided by
    the number of nonzero psi entries.  An all-zero psi yields 0.

    The derivation behind this rule folds the step size into the
    proximal index, so the returned value is the soft threshold itself
    (auto mode applies it directly, without the mu* scaling used for a
    fixed beta).
    """
    if state.iteration % state.tracker_period == 0:
        state.w_hat = psi.copy()
    else:
        state.w_hat = 0.5 * state.w_hat + 0.5 * psi
    active = float(np.count_nonzero(psi))
    if active == 0.0:
        return 0.0
    gap = float(np.abs(psi).sum() - np.abs(state.w_hat).sum())
    return max(gap, state.tau) / active


def iterate(state: FilterState, frame: SubbandFrame) -> FilterState:
    """Run one full adaptation cycle and commit it atomically.

    Order: gains from w(k) -> errors -> forward step -> beta update
    (auto mode) -> proximal step.  On divergence the state is left at
    the last valid iteration.
    """
    gains = compute_gains(state.prop_rule, state.weights)
    state.gains = gains
    errors = subband_errors(state, frame)
    psi = forward_step(state, frame, errors)
    beta = state.threshold
    if state.beta_mode == "auto":
        beta = beta_update(state, psi)
        level = beta  # adapted value is already the proximal index
    else:
        level = state.step_size * beta
    weights = proximal_step(psi, level)
    state.intermediate = psi
    state.threshold = beta
    state.weights = weights
    state.iteration += 1
    return state


def delayless_error(
    weights_snapshot: np.ndarray, fullband_regressor: np.ndarray, fullband_desired: float
) -> float:
    """Fullband residual e(n) = d(n) - u(n)^T w(n) for the auxiliary loop."""
    if fullband_regressor.shape != weights_snapshot.shape:
        raise ValueError("regressor and weight snapshot lengths differ")
    return float(fullband_desired - fullband_regressor @ weights_snapshot)


def save_weights(path, weights: np.ndarray) -> None:
    """Export a weight vector as plain text, one value per line."""
    with open(path, "w") as fh:
        for w in np.asarray(weights, dtype=float):
            fh.write(f"{float(w)!r}\n")


def load_weights(path) -> np.ndarray:
    with open(path) as fh:
        values = [float(line) for line in fh if line.strip()]
    if not values:
        raise ValueError(f"no weights found in {path}")
    return np.array(values)
