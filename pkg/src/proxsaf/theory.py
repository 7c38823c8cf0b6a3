"""Statistical performance model of the adaptive filter family.

Propagates the mean and covariance of the weight error through the
forward and thresholding steps under Gaussian per-component
assumptions, and evaluates steady-state deviation, stability bounds,
and the sign of the thresholding correction.  All second-order inputs
(per-subband autocorrelations and variances) come from
:class:`proxsaf.filterbank.SubbandStatistics`.

The saturation nonlinearity ``clip(x) = min(max(x, -level), level)``
that the thresholding step induces on the weight errors has closed-form
Gaussian moments; they are implemented here and cross-checked against
Monte-Carlo in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .filterbank import SubbandStatistics

__all__ = [
    "GaussianMomentInput",
    "TheoryState",
    "StabilityError",
    "expected_abs",
    "expected_clip",
    "expected_x_clip",
    "expected_clip_sq",
    "mean_gains",
    "transient_step",
    "run_transient",
    "msd_emse",
    "steady_state_msd",
    "delta_estimate",
    "stability_bounds",
]

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_DETERMINISTIC_STD = 1e-12  # below this the Gaussian collapses to a point mass


class StabilityError(RuntimeError):
    """The configuration is mean-square unstable."""


@dataclass(frozen=True)
class GaussianMomentInput:
    """Scalar Gaussian N(mean, std^2) and the saturation level.

    Fields may also be equal-shaped arrays for vectorized evaluation.
    std=0 is handled as the deterministic limit.
    """

    mean: float
    std: float
    threshold: float = 0.0


def _clip(x, level):
    return np.clip(x, -level, level)


def _moments(mean, std, threshold):
    """Common precomputation for the clip moments."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    level = np.asarray(threshold, dtype=float)
    point_mass = std < _DETERMINISTIC_STD
    safe_std = np.where(point_mass, 1.0, std)
    a1 = (level + mean) / (np.sqrt(2.0) * safe_std)
    a2 = (level - mean) / (np.sqrt(2.0) * safe_std)
    return mean, safe_std, level, point_mass, a1, a2


def expected_abs(mean, std) -> np.ndarray | float:
    """E{|x|} for x ~ N(mean, std^2)."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    point_mass = std < _DETERMINISTIC_STD
    safe_std = np.where(point_mass, 1.0, std)
    value = _SQRT_2_OVER_PI * safe_std * np.exp(-(mean**2) / (2.0 * safe_std**2)) + mean * erf(
        mean / (np.sqrt(2.0) * safe_std)
    )
    return np.where(point_mass, np.abs(mean), value)[()]


def expected_clip(mean, std, threshold) -> np.ndarray | float:
    """E{clip(x)} with clip saturating at +-threshold."""
    mean, s, level, point_mass, a1, a2 = _moments(mean, std, threshold)
    value = (
        0.5 * _SQRT_2_OVER_PI * s * (np.exp(-(a1**2)) - np.exp(-(a2**2)))
        + (mean + level) / 2.0 * erf(a1)
        + (mean - level) / 2.0 * erf(a2)
    )
    return np.where(point_mass, _clip(mean, level), value)[()]


def expected_x_clip(mean, std, threshold) -> np.ndarray | float:
    """E{x * clip(x)}."""
    mean, s, level, point_mass, a1, a2 = _moments(mean, std, threshold)
    e1 = np.exp(-(a1**2))
    e2 = np.exp(-(a2**2))
    value = (
        (level / 2.0 * _SQRT_2_OVER_PI * s + _SQRT_2_OVER_PI * s * mean - s**2 / np.sqrt(np.pi) * a1) * e1
        + (level / 2.0 * _SQRT_2_OVER_PI * s - _SQRT_2_OVER_PI * s * mean - s**2 / np.sqrt(np.pi) * a2) * e2
        + 0.5 * (s**2 + mean**2 + level * mean) * erf(a1)
        + 0.5 * (s**2 + mean**2 - level * mean) * erf(a2)
    )
    return np.where(point_mass, mean * _clip(mean, level), value)[()]


def expected_clip_sq(mean, std, threshold) -> np.ndarray | float:
    """E{clip(x)^2}."""
    mean, s, level, point_mass, a1, a2 = _moments(mean, std, threshold)
    e1 = np.exp(-(a1**2))
    e2 = np.exp(-(a2**2))
    value = (
        (_SQRT_2_OVER_PI * s * mean - s**2 / np.sqrt(np.pi) * a1) * e1
        - (_SQRT_2_OVER_PI * s * mean + s**2 / np.sqrt(np.pi) * a2) * e2
        + 0.5 * (s**2 + mean**2 - level**2) * (erf(a1) + erf(a2))
        + level**2
    )
    return np.where(point_mass, _clip(mean, level) ** 2, value)[()]


def moments_of(inp: GaussianMomentInput) -> dict:
    """All four moments for one GaussianMomentInput."""
    return {
        "abs": expected_abs(inp.mean, inp.std),
        "clip": expected_clip(inp.mean, inp.std, inp.threshold),
        "x_clip": expected_x_clip(inp.mean, inp.std, inp.threshold),
        "clip_sq": expected_clip_sq(inp.mean, inp.std, inp.threshold),
    }


@dataclass(frozen=True)
class TheoryState:
    """Mean/covariance snapshot of the weight-error recursion at iteration k."""

    mean_w_err: np.ndarray  # E{w° - w(k)}, (M,)
    cov_w_err: np.ndarray  # E{(w°-w)(w°-w)^T}, (M, M)
    mean_psi_err: np.ndarray  # pre-threshold counterpart, (M,)
    cov_psi_err: np.ndarray  # (M, M)
    gains_mean: np.ndarray  # mean proportionate gains used at step k, (M,)
    stats: SubbandStatistics
    true_system: np.ndarray
    iteration: int = 0

    @classmethod
    def initial(cls, true_system: np.ndarray, stats: SubbandStatistics) -> "TheoryState":
        """State for w(0)=0: the weight error is deterministically w°."""
        wo = np.asarray(true_system, dtype=float)
        m = wo.size
        return cls(
            mean_w_err=wo.copy(),
            cov_w_err=np.outer(wo, wo),
            mean_psi_err=wo.copy(),
            cov_psi_err=np.outer(wo, wo),
            gains_mean=np.full(m, 1.0 / m),
            stats=stats,
            true_system=wo,
        )

    def component_moments(self):
        """Per-component (mean, std) of the weight error, variance clamped at 0."""
        var = np.maximum(np.diag(self.cov_w_err) - self.mean_w_err**2, 0.0)
        return self.mean_w_err, np.sqrt(var)


def mean_gains(state: TheoryState, zeta: float, epsilon: float) -> np.ndarray:
    """Mean proportionate gains under per-component Gaussian weights.

    Feeds E{|w_m|} (weights distributed around w°_m minus the current
    mean error) through the simplified gain rule.
    """
    z_w, std_w = state.component_moments()
    abs_mean = np.asarray(expected_abs(state.true_system - z_w, std_w))
    m = abs_mean.size
    return (1.0 - zeta) / (2.0 * m) + (1.0 + zeta) * abs_mean / (2.0 * abs_mean.sum() + epsilon)


def _abs_weighted_sq_moment(a, z, s):
    """T = E{|a - Y| * Y^2} for Y ~ N(z, s^2), elementwise.

    Built from truncated-Gaussian partial moments; collapses to
    |a - z| * z^2 as s -> 0.
    """
    a = np.asarray(a, dtype=float)
    z = np.asarray(z, dtype=float)
    s = np.asarray(s, dtype=float)
    point_mass = s < _DETERMINISTIC_STD
    safe = np.where(point_mass, 1.0, s)
    alpha = (a - z) / safe
    tail = 0.5 * (1.0 - erf(alpha / np.sqrt(2.0)))
    density = np.exp(-0.5 * alpha**2) / np.sqrt(2.0 * np.pi)
    ey2 = safe**2 + z**2
    ey3 = z**3 + 3.0 * z * safe**2
    ey2_tail = ey2 * tail + safe * density * (a + z)
    ey3_tail = z * (z**2 + 3.0 * safe**2) * tail + safe * density * (
        a**2 + a * z + z**2 + 2.0 * safe**2
    )
    value = (a * ey2 - ey3) - 2.0 * (a * ey2_tail - ey3_tail)
    return np.where(point_mass, np.abs(a - z) * z**2, value)


def drift_gains(state: TheoryState, zeta: float, epsilon: float) -> np.ndarray:
    """Error-weighted mean gains driving the covariance contraction.

    The instantaneous gain of a coefficient co-varies with its own
    error: where the error is momentarily large, |w_m| and hence g_m
    are too, so the update pulls harder exactly when needed.  Treating
    the gains as independent of the errors (the plain mean-gain model)
    therefore understates the contraction, visibly so for the
    near-zero coefficients whose gains are error-dominated.  Under the
    same per-component Gaussian model this second-order effect is the
    closed-form ratio E{|w_m| werr_m^2} / E{werr_m^2} replacing
    E{|w_m|} in the gain rule (numerator and denominator stay coupled
    through the rule's shared normalization sum).
    """
    z_w, std_w = state.component_moments()
    wo = state.true_system
    abs_mean = np.asarray(expected_abs(wo - z_w, std_w))
    m = abs_mean.size
    err_power = z_w**2 + std_w**2
    weighted = np.asarray(_abs_weighted_sq_moment(wo, z_w, std_w))
    ratio = np.where(err_power > 0.0, weighted / np.maximum(err_power, 1e-300), abs_mean)
    # Only the positive side of the coupling is kept: for error-dominated
    # (near-zero) coefficients it is exact under the component model,
    # while for mean-dominated ones it is cancelled by the co-varying
    # innovation magnitude, which a per-component model cannot express.
    ratio = np.maximum(ratio, abs_mean)
    return (1.0 - zeta) / (2.0 * m) + (1.0 + zeta) * ratio / (2.0 * abs_mean.sum() + epsilon)


def _aux_matrices(stats: SubbandStatistics, delta: float, gain_trace: float = 1.0):
    """Denominator-weighted sums of the subband autocorrelations.

    The model's denominators are the mean weighted input powers
    E{u^T G u} + delta = sigma_i^2 * tr(G) + delta; ``gain_trace``
    carries the current tr(G).  (The gain rule starts at trace
    (1-zeta)/2 with zero weights and only approaches 1 near
    convergence, and pinning the trace at 1 makes the early transient
    far too slow.)
    """
    denom = stats.input_variances * gain_trace + delta
    scaled = stats.autocorrelation / denom[:, None, None]
    a_sum = scaled.sum(axis=0)
    noise_sum = (
        stats.autocorrelation
        * (stats.noise_variances / denom**2)[:, None, None]
    ).sum(axis=0)
    return a_sum, noise_sum, denom


def transient_step(
    state: TheoryState,
    mu: float,
    beta: float,
    delta: float,
    zeta: float = 0.0,
    epsilon: float = 1e-4,
    rule: str = "simplified",
    gain_coupling: bool = True,
) -> TheoryState:
    """Advance the mean/covariance recursion by one iteration.

    Order: mean gains from the current weight-error statistics; mean and
    covariance of the pre-threshold error; per-component Gaussian
    moments of the saturation nonlinearity; post-threshold covariance
    and mean.  With beta=0 the saturation moments vanish and the
    post-threshold state equals the pre-threshold one.

    ``rule`` selects how the mean gains are computed: "simplified"
    uses the proportionate rule's closed-form mean, "identity" pins
    gains at 1/M.  The classic PNLMS rule has no closed-form mean here.

    ``gain_coupling`` applies the error-weighted gains of
    :func:`drift_gains` to the covariance contraction (the first-order
    model treats gains and errors as independent, which noticeably
    understates how fast the near-zero coefficients settle).
    """
    stats = state.stats
    wo = state.true_system
    m = wo.size
    if rule == "identity":
        g_bar = np.full(m, 1.0 / m)
        g_drift = g_bar
    elif rule == "simplified":
        g_bar = mean_gains(state, zeta, epsilon)
        g_drift = drift_gains(state, zeta, epsilon) if gain_coupling else g_bar
    else:
        raise ValueError(f"no mean-gain model for rule {rule!r}")

    corr = stats.autocorrelation
    denom = stats.input_variances * float(g_bar.sum()) + delta
    a_sum = (corr / denom[:, None, None]).sum(axis=0)
    noise_sum = (corr * (stats.noise_variances / denom**2)[:, None, None]).sum(axis=0)

    mean_psi = state.mean_w_err - mu * (g_bar[:, None] * a_sum) @ state.mean_w_err

    cov_w = state.cov_w_err
    drift = (g_drift[:, None] * a_sum) @ cov_w
    sandwich = np.zeros((m, m))
    for i in range(stats.num_subbands):
        r = corr[i]
        rw = r @ cov_w
        sandwich += (rw @ r + r * np.trace(rw)) / denom[i] ** 2
    g_outer = np.outer(g_bar, g_bar)
    cov_psi = (
        cov_w
        - mu * drift
        - mu * drift.T
        + mu**2 * g_outer * sandwich
        + mu**2 * g_outer * noise_sum
    )
    cov_psi = 0.5 * (cov_psi + cov_psi.T)
    if not np.all(np.isfinite(cov_psi)):
        raise ArithmeticError(
            f"non-finite pre-threshold covariance at iteration {state.iteration + 1}"
        )

    level = mu * beta
    if level == 0.0:
        mean_w_next = mean_psi
        cov_w_next = cov_psi
    else:
        z_psi = mean_psi
        var_psi = np.maximum(np.diag(cov_psi) - z_psi**2, 0.0)
        x_bar = wo - z_psi  # per-component mean of the pre-threshold weights
        std = np.sqrt(var_psi)
        clip_mean = np.asarray(expected_clip(x_bar, std, level))
        x_clip = np.asarray(expected_x_clip(x_bar, std, level))
        clip_sq = np.asarray(expected_clip_sq(x_bar, std, level))
        cross = np.outer(z_psi, clip_mean)
        np.fill_diagonal(cross, wo * clip_mean - x_clip)
        quad = np.outer(clip_mean, clip_mean)
        np.fill_diagonal(quad, clip_sq)
        cov_w_next = cov_psi + cross + cross.T + quad
        cov_w_next = 0.5 * (cov_w_next + cov_w_next.T)
        mean_w_next = mean_psi + clip_mean
    if not np.all(np.isfinite(cov_w_next)):
        raise ArithmeticError(
            f"non-finite weight-error covariance at iteration {state.iteration + 1}"
        )

    return TheoryState(
        mean_w_err=mean_w_next,
        cov_w_err=cov_w_next,
        mean_psi_err=mean_psi,
        cov_psi_err=cov_psi,
        gains_mean=g_bar,
        stats=stats,
        true_system=wo,
        iteration=state.iteration + 1,
    )


def run_transient(
    true_system: np.ndarray,
    stats: SubbandStatistics,
    mu: float,
    beta: float,
    delta: float,
    num_iterations: int,
    zeta: float = 0.0,
    epsilon: float = 1e-4,
    rule: str = "simplified",
    startup_delay: int = 0,
    gain_coupling: bool = True,
):
    """Iterate the transient model; returns (msd, emse, final_state).

    ``msd[k]``/``emse[k]`` describe iteration k, with k=0 the initial
    condition, matching the simulation's pre-update measurement.
    ``startup_delay`` holds the state for that many leading iterations,
    mirroring a run that waits out the delay-line fill before adapting.
    """
    state = TheoryState.initial(true_system, stats)
    msd = np.empty(num_iterations)
    emse = np.empty(num_iterations)
    for k in range(num_iterations):
        msd[k], emse[k] = msd_emse(state)
        if k + 1 < num_iterations and k >= startup_delay:
            state = transient_step(
                state, mu, beta, delta, zeta, epsilon, rule,
                gain_coupling=gain_coupling,
            )
    return msd, emse, state


def msd_emse(state: TheoryState) -> tuple[float, float]:
    """Deviation power Tr(W) and mean a-priori subband error power."""
    cov = state.cov_w_err
    msd = float(np.trace(cov))
    emse = float(
        np.mean([np.trace(cov @ r) for r in state.stats.autocorrelation])
    )
    return msd, emse


def steady_state_msd(
    stats: SubbandStatistics, mu: float, delta: float, extra: float = 0.0
) -> dict:
    """Closed-form steady-state deviation (and mean a-priori error power).

    ``extra`` is the thresholding correction (0 for the plain
    proportionate algorithm).  Raises StabilityError when the weighted
    energy balance has no positive solution.
    """
    s2 = stats.input_variances
    denom = (s2 + delta) ** 2
    y = float((((2.0 * mu * (s2 + delta) - mu**2 * s2) * s2) / denom).sum())
    if y <= 0.0:
        raise StabilityError(
            f"mean-square unstable: step size {mu} yields non-positive energy slope"
        )
    msd = float((mu**2 * (s2 * stats.noise_variances / denom).sum() + extra) / y)
    emse = msd * float(np.mean(s2))
    return {"msd": msd, "emse": emse}


def delta_estimate(
    gains_mean: np.ndarray,
    weight_err_sq: np.ndarray,
    nonzero_mask: np.ndarray,
    mu: float,
    beta: float,
    num_subbands: int,
) -> float:
    """Steady-state correction of the thresholding step.

    Positive contribution mu*beta^2*g_m^-2*(2/N + mu) over the active
    (nonzero) coefficients, minus g_m^-1 * E{werr_m^2} over the zero
    coefficients.  Negative values mean the thresholding step improves
    the steady-state deviation.
    """
    g = np.asarray(gains_mean, dtype=float)
    we2 = np.asarray(weight_err_sq, dtype=float)
    nz = np.asarray(nonzero_mask, dtype=bool)
    gain_term = float((mu * beta**2 * g[nz] ** -2.0 * (2.0 / num_subbands + mu)).sum())
    loss_term = float((we2[~nz] / g[~nz]).sum())
    return gain_term - loss_term


def stability_bounds(
    stats: SubbandStatistics, gains_mean: np.ndarray, delta: float
) -> dict:
    """Step-size limits: mean bound, mean-square bound, fastest practical.

    The mean bound depends on the spectra of diag(g)R_i; the mean-square
    bound and the fastest-convergence point depend only on the subband
    variances (about 2 and 1 respectively for small delta).
    """
    g = np.asarray(gains_mean, dtype=float)
    sqrt_g = np.sqrt(g)
    acc = 0.0
    for i in range(stats.num_subbands):
        sym = sqrt_g[:, None] * stats.autocorrelation[i] * sqrt_g[None, :]
        lam = float(np.linalg.eigvalsh(sym)[-1])
        acc += lam / (stats.input_variances[i] + delta)
    total = float(stats.input_variances.sum())
    return {
        "mu_mean_max": 2.0 / acc,
        "mu_ms_max": 2.0 * (total + delta) / total,
        "mu_practical": (total + delta) / total,
    }
