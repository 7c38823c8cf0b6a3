"""Channels, input generators, metrics, and the Monte-Carlo trial runner.

Reproduces the evaluation protocols around the adaptive filters: sparse
random and file-loaded echo channels, AR(1)/white/speech excitation,
SNR-calibrated noise, per-iteration deviation curves averaged over
independent trials, sudden-change tracking, and the delayless residual
path used for echo-cancellation scoring.
"""

from __future__ import annotations

import wave
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from . import _backend, filterbank

__all__ = [
    "ChangeSchedule",
    "ChannelModel",
    "AlgorithmConfig",
    "InputSpec",
    "ChannelSpec",
    "ExperimentConfig",
    "TrialResult",
    "MetricSeries",
    "MonteCarloResult",
    "gen_type1_channel",
    "load_channel",
    "save_channel",
    "shift_response",
    "apply_sudden_change",
    "gen_ar1",
    "gen_white",
    "load_wav",
    "save_wav",
    "noise_variance_for_snr",
    "build_bank",
    "run_trial",
    "monte_carlo",
    "erle_series",
    "algorithm_config",
]

NONZERO_TOLERANCE = 1e-12
ERLE_CLIP_DB = 100.0

_RULE_CODES = {"identity": 0, "simplified": 1, "pnlms": 2}


# ---------------------------------------------------------------------------
# channels


@dataclass(frozen=True)
class ChangeSchedule:
    """Shift the echo path right by ``shift_taps`` at sample ``at_sample``."""

    at_sample: int
    shift_taps: int = 12


@dataclass(frozen=True)
class ChannelModel:
    impulse_response: np.ndarray
    sparsity_q: int
    change_schedule: ChangeSchedule | None = None

    def __post_init__(self):
        w = np.asarray(self.impulse_response, dtype=float)
        object.__setattr__(self, "impulse_response", w)

    @property
    def length(self) -> int:
        return self.impulse_response.size


def gen_type1_channel(
    length: int, num_nonzero: int, seed, value_scale: str = "variance"
) -> ChannelModel:
    """Random sparse channel: Q nonzero Gaussian taps at random positions.

    The nonzero values are zero-mean Gaussian with variance 1/sqrt(Q)
    (``value_scale="variance"``, the default reading) or standard
    deviation 1/sqrt(Q) (``value_scale="std"``).
    """
    if not 1 <= num_nonzero <= length:
        raise ValueError(f"need 1 <= Q <= M, got Q={num_nonzero}, M={length}")
    if value_scale not in ("variance", "std"):
        raise ValueError("value_scale must be 'variance' or 'std'")
    rng = np.random.default_rng(seed)
    positions = rng.choice(length, size=num_nonzero, replace=False)
    spread = num_nonzero**-0.25 if value_scale == "variance" else num_nonzero**-0.5
    values = rng.normal(0.0, spread, size=num_nonzero)
    w = np.zeros(length)
    w[positions] = values
    return ChannelModel(w, num_nonzero)


def load_channel(path, change_schedule: ChangeSchedule | None = None) -> ChannelModel:
    """Read a channel file (one coefficient per line)."""
    with open(path) as fh:
        try:
            values = [float(line) for line in fh if line.strip()]
        except ValueError as exc:
            raise ValueError(f"cannot parse channel file {path}: {exc}") from exc
    if not values:
        raise ValueError(f"channel file {path} is empty")
    w = np.array(values)
    q = int(np.count_nonzero(np.abs(w) > NONZERO_TOLERANCE))
    if q == 0:
        raise ValueError(f"channel file {path} holds only zeros")
    return ChannelModel(w, q, change_schedule)


def save_channel(path, channel) -> None:
    w = channel.impulse_response if isinstance(channel, ChannelModel) else np.asarray(channel)
    with open(path, "w") as fh:
        for v in w:
            fh.write(f"{float(v)!r}\n")


def shift_response(response: np.ndarray, taps: int) -> np.ndarray:
    """Right-shift: zeros enter at the front, overflow taps are dropped."""
    w = np.asarray(response, dtype=float)
    if taps <= 0:
        return w.copy()
    out = np.zeros_like(w)
    if taps < w.size:
        out[taps:] = w[: w.size - taps]
    return out


def apply_sudden_change(channel: ChannelModel, sample_index: int) -> ChannelModel:
    """Channel in effect at ``sample_index``: shifted once the schedule fires."""
    sched = channel.change_schedule
    if sched is None or sample_index < sched.at_sample:
        return channel
    shifted = shift_response(channel.impulse_response, sched.shift_taps)
    q = int(np.count_nonzero(np.abs(shifted) > NONZERO_TOLERANCE))
    return ChannelModel(shifted, q, None)


# ---------------------------------------------------------------------------
# inputs and noise


def gen_ar1(coefficient: float, num_samples: int, seed, warmup: int = 1000) -> np.ndarray:
    """First-order autoregressive signal driven by unit-variance noise.

    The first ``warmup`` samples are discarded so the returned stream is
    stationary.
    """
    if not abs(coefficient) < 1:
        raise ValueError("AR(1) coefficient must satisfy |a| < 1")
    rng = np.random.default_rng(seed)
    drive = rng.standard_normal(num_samples + warmup)
    out = lfilter([1.0], [1.0, -coefficient], drive)
    return out[warmup:]


def gen_white(num_samples: int, seed) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(num_samples)


def load_wav(path) -> tuple[np.ndarray, int]:
    """Read 16-bit PCM mono WAV; samples scaled to [-1, 1]."""
    with wave.open(str(path), "rb") as wav:
        if wav.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, got {wav.getnchannels()} channels")
        if wav.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * wav.getsampwidth()}-bit")
        frames = wav.getnframes()
        if frames == 0:
            raise ValueError(f"{path}: empty WAV file")
        raw = wav.readframes(frames)
        rate = wav.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    return samples, rate


def save_wav(path, samples: np.ndarray, rate: int) -> None:
    """Write 16-bit PCM mono WAV (values clipped to [-1, 1))."""
    pcm = np.clip(np.asarray(samples, dtype=float), -1.0, 32767.0 / 32768.0)
    data = np.round(pcm * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(int(rate))
        wav.writeframes(data.tobytes())


def noise_variance_for_snr(clean_echo: np.ndarray, snr_db: float) -> float:
    """sigma_v^2 giving the requested SNR against the clean echo power."""
    power = float(np.mean(np.asarray(clean_echo, dtype=float) ** 2))
    if power <= 0.0:
        raise ValueError("clean echo is degenerate (zero power)")
    return power / 10.0 ** (snr_db / 10.0)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class AlgorithmConfig:
    """One algorithm variant plus its hyperparameters."""

    name: str
    step_size: float = 0.5
    beta: float = 0.0
    beta_mode: str = "fixed"  # "fixed" | "auto"
    tau: float = 0.0
    regularization: float | None = None  # None: per-input default
    prop_rule: str = "simplified"  # "identity" | "simplified" | "pnlms"
    zeta: float = 0.0
    epsilon: float = 1e-4
    rho: float = 0.04
    gamma: float = 0.01

    def validate(self) -> None:
        if self.step_size <= 0:
            raise ValueError(f"algorithm.step_size must be positive, got {self.step_size}")
        if self.beta < 0:
            raise ValueError(f"algorithm.beta must be non-negative, got {self.beta}")
        if self.beta_mode not in ("fixed", "auto"):
            raise ValueError(f"algorithm.beta_mode must be fixed or auto, got {self.beta_mode}")
        if self.tau < 0:
            raise ValueError(f"algorithm.tau must be non-negative, got {self.tau}")
        if self.regularization is not None and self.regularization <= 0:
            raise ValueError("algorithm.regularization must be positive")
        if self.prop_rule not in _RULE_CODES:
            raise ValueError(f"algorithm.prop_rule must be one of {sorted(_RULE_CODES)}")
        if not -1.0 <= self.zeta < 1.0:
            raise ValueError(f"algorithm.zeta must lie in [-1, 1), got {self.zeta}")
        if self.epsilon <= 0:
            raise ValueError("algorithm.epsilon must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"algorithm.rho must lie in (0, 1), got {self.rho}")
        if self.gamma <= 0:
            raise ValueError("algorithm.gamma must be positive")


_ALGORITHM_PRESETS = {
    "nsaf": dict(prop_rule="identity", beta=0.0),
    "pnsaf": dict(prop_rule="simplified", beta=0.0),
    "pfbs_pnsaf": dict(prop_rule="simplified"),
    "auto_pfbs_pnsaf": dict(prop_rule="simplified", beta_mode="auto"),
}


def algorithm_config(name: str, **overrides) -> AlgorithmConfig:
    """Build an AlgorithmConfig from a preset name plus overrides."""
    preset = dict(_ALGORITHM_PRESETS.get(name, {}))
    preset.update(overrides)
    cfg = AlgorithmConfig(name=name, **preset)
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class InputSpec:
    kind: str = "ar1"  # "ar1" | "white" | "wav"
    ar_coefficient: float = 0.8
    wav_file: str | None = None

    def validate(self) -> None:
        if self.kind not in ("ar1", "white", "wav"):
            raise ValueError(f"input.kind must be ar1, white, or wav, got {self.kind}")
        if self.kind == "ar1" and not abs(self.ar_coefficient) < 1:
            raise ValueError("input.ar_coefficient must satisfy |a| < 1")
        if self.kind == "wav" and not self.wav_file:
            raise ValueError("input.wav_file is required for wav input")

    def generate(self, num_samples: int, seed) -> np.ndarray:
        if self.kind == "ar1":
            return gen_ar1(self.ar_coefficient, num_samples, seed)
        if self.kind == "white":
            return gen_white(num_samples, seed)
        samples, _ = load_wav(self.wav_file)
        if samples.size < num_samples:
            raise ValueError(
                f"wav file holds {samples.size} samples, need {num_samples}"
            )
        return samples[:num_samples]


@dataclass(frozen=True)
class ChannelSpec:
    kind: str = "type1"  # "type1" | "file"
    length: int = 128
    nonzeros: int = 8
    file: str | None = None
    seed: int = 0
    value_scale: str = "variance"
    change_at: int | None = None
    change_shift: int = 12

    def validate(self) -> None:
        if self.kind not in ("type1", "file"):
            raise ValueError(f"channel.kind must be type1 or file, got {self.kind}")
        if self.kind == "type1" and not 1 <= self.nonzeros <= self.length:
            raise ValueError("channel.nonzeros must lie in [1, channel.length]")
        if self.kind == "file" and not self.file:
            raise ValueError("channel.file is required for file channels")
        if self.change_at is not None and self.change_at < 0:
            raise ValueError("channel.change_at must be non-negative")

    def build(self) -> ChannelModel:
        schedule = (
            ChangeSchedule(self.change_at, self.change_shift)
            if self.change_at is not None
            else None
        )
        if self.kind == "type1":
            channel = gen_type1_channel(self.length, self.nonzeros, self.seed, self.value_scale)
            return replace(channel, change_schedule=schedule)
        return load_channel(self.file, schedule)


@dataclass(frozen=True)
class ExperimentConfig:
    algorithms: tuple = (AlgorithmConfig("pnsaf"),)
    num_subbands: int = 4
    prototype_length: int | None = None
    prototype_file: str | None = None
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    input: InputSpec = field(default_factory=InputSpec)
    snr_db: float = 30.0
    trials: int = 100
    total_samples: int = 50_000
    seed: int = 1234
    steady_state_window: int = 500
    mode: str = "system_id"  # "system_id" | "aec"
    erle_smoothing: float = 0.996
    stats_frames: int | None = None  # frames for model statistics; default 20*M

    def validate(self) -> None:
        if not self.algorithms:
            raise ValueError("at least one algorithm is required")
        for alg in self.algorithms:
            alg.validate()
        if self.num_subbands < 1:
            raise ValueError("filterbank.num_subbands must be >= 1")
        self.channel.validate()
        self.input.validate()
        if self.trials < 1:
            raise ValueError("run.trials must be >= 1")
        if self.total_samples < self.num_subbands:
            raise ValueError("run.total_samples must cover at least one frame")
        if self.steady_state_window < 1:
            raise ValueError("run.steady_state_window must be >= 1")
        if self.mode not in ("system_id", "aec"):
            raise ValueError(f"run.mode must be system_id or aec, got {self.mode}")
        if not 0.0 < self.erle_smoothing < 1.0:
            raise ValueError("run.erle_smoothing must lie in (0, 1)")
        if self.stats_frames is not None and self.stats_frames < 1:
            raise ValueError("run.stats_frames must be >= 1")


def build_bank(config: ExperimentConfig) -> filterbank.AnalysisBank:
    if config.prototype_file:
        proto = filterbank.load_prototype(config.prototype_file)
        if proto.num_subbands != config.num_subbands:
            raise ValueError(
                f"prototype file is for N={proto.num_subbands}, config wants N={config.num_subbands}"
            )
    else:
        proto = filterbank.design_prototype(config.num_subbands, config.prototype_length)
    return filterbank.modulate_cosine(proto)


def resolve_regularization(alg: AlgorithmConfig, input_spec: InputSpec,
                           input_power: float, num_subbands: int, filter_length: int) -> float:
    """Fill in the default regularizer when the config leaves it unset.

    Stationary inputs use 0.001.  Speech uses 20*power/M for the
    proportionate family and the trace-normalized equivalent
    20*power/(N*M) for the identity rule (the gain matrix here always
    has unit trace, so the identity rule's denominator is ||u||^2/M and
    the conventional 20*power/N regularizer must be divided by M).
    """
    if alg.regularization is not None:
        return alg.regularization
    if input_spec.kind != "wav":
        return 1e-3
    if alg.prop_rule == "identity":
        return 20.0 * input_power / (num_subbands * filter_length)
    return 20.0 * input_power / filter_length


# ---------------------------------------------------------------------------
# trial runner


@dataclass
class TrialResult:
    msd: np.ndarray  # linear deviation power per iteration
    weights: np.ndarray
    diverged: bool
    diverged_at: int
    error_signal: np.ndarray | None = None  # delayless fullband residual
    desired_signal: np.ndarray | None = None
    beta_trace: np.ndarray | None = None
    ss_gain_mean: np.ndarray | None = None
    ss_werr2_mean: np.ndarray | None = None


def _change_frame(change_sample: int | None, num_frames: int, num_subbands: int) -> int:
    """First frame whose regressor endpoint falls at/after the change."""
    if change_sample is None:
        return num_frames
    k = int(np.ceil((change_sample + 1) / num_subbands)) - 1
    return int(np.clip(k, 0, num_frames))


def run_trial(
    config: ExperimentConfig,
    channel: ChannelModel,
    seed,
    algorithm: AlgorithmConfig | None = None,
    bank: filterbank.AnalysisBank | None = None,
    collect_steady_state: bool = False,
    backend=None,
) -> TrialResult:
    """One full adaptation run: input -> echo -> noise -> subbands -> update.

    Deterministic in (config, channel, seed).  The deviation series has
    ``total_samples // N`` entries; entry k is measured before the
    frame-k update.  In "aec" mode the delayless fullband residual is
    returned alongside the noisy desired signal.
    """
    alg = algorithm if algorithm is not None else config.algorithms[0]
    alg.validate()
    if bank is None:
        bank = build_bank(config)
    n = bank.num_subbands
    total = (config.total_samples // n) * n
    num_frames = total // n
    m = channel.length

    seq = np.random.SeedSequence(seed)
    input_seed, noise_seed = seq.spawn(2)
    u = config.input.generate(total, input_seed)

    wo_pre = channel.impulse_response
    sched = channel.change_schedule
    if sched is not None:
        wo_post = shift_response(wo_pre, sched.shift_taps)
        echo_pre = lfilter(wo_pre, [1.0], u)
        echo_post = lfilter(wo_post, [1.0], u)
        clean = np.where(np.arange(total) < sched.at_sample, echo_pre, echo_post)
        change_frame = _change_frame(sched.at_sample, num_frames, n)
    else:
        wo_post = wo_pre
        clean = lfilter(wo_pre, [1.0], u)
        change_frame = num_frames

    sigma_v2 = noise_variance_for_snr(clean, config.snr_db)
    noise = np.random.default_rng(noise_seed).normal(0.0, np.sqrt(sigma_v2), total)
    desired = clean + noise

    sub_u = filterbank.subband_signals(bank, u)
    sub_u_padded = np.concatenate([np.zeros((n, m - 1)), sub_u], axis=1)
    sub_d = filterbank.subband_signals(bank, desired)[:, n - 1 :: n].T.copy()

    want_aec = config.mode == "aec"
    full_u_padded = np.concatenate([np.zeros(m - 1), u]) if want_aec else None

    input_power = float(np.mean(u**2))
    delta = resolve_regularization(alg, config.input, input_power, n, m)

    # hold adaptation until the oldest regressor component has a fully
    # loaded analysis-filter history
    adapt_start = min(
        num_frames, max(0, -(-(m + bank.filter_length - 1) // n) - 1)
    )
    impl = backend if backend is not None else _backend
    out = impl.run_adaptation(
        np.ascontiguousarray(sub_u_padded),
        np.ascontiguousarray(sub_d),
        np.ascontiguousarray(wo_pre),
        np.ascontiguousarray(wo_post),
        change_frame,
        float(alg.step_size),
        float(alg.beta),
        float(delta),
        _RULE_CODES[alg.prop_rule],
        float(alg.zeta),
        float(alg.epsilon),
        float(alg.rho),
        float(alg.gamma),
        alg.beta_mode == "auto",
        float(alg.tau),
        max(1, round(m / n)),
        full_u_padded,
        desired if want_aec else None,
        max(0, num_frames - config.steady_state_window) if collect_steady_state else -1,
        adapt_start,
    )

    count = max(out["ss_count"], 1)
    return TrialResult(
        msd=out["msd"],
        weights=out["weights"],
        diverged=out["diverged"],
        diverged_at=out["diverged_at"],
        error_signal=out["e_full"],
        desired_signal=desired if want_aec else None,
        beta_trace=out["beta_trace"],
        ss_gain_mean=out["ss_gain_sum"] / count if collect_steady_state else None,
        ss_werr2_mean=out["ss_werr2_sum"] / count if collect_steady_state else None,
    )


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class MetricSeries:
    """Per-iteration metric in dB with Monte-Carlo bookkeeping."""

    values_db: np.ndarray
    num_trials: int
    aggregation: str = "mean"
    diverged_trials: int = 0
    clipped: bool = False


@dataclass
class MonteCarloResult:
    series: MetricSeries
    steady_state_msd_db: float
    ss_gain_mean: np.ndarray | None = None
    ss_werr2_mean: np.ndarray | None = None


def _trial_seeds(master_seed: int, trials: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(master_seed).generate_state(trials)]


def _run_one(args):
    config, channel, seed, alg, collect = args
    return run_trial(config, channel, seed, alg, collect_steady_state=collect)


def monte_carlo(
    config: ExperimentConfig,
    channel: ChannelModel,
    algorithm: AlgorithmConfig | None = None,
    collect_steady_state: bool = False,
    workers: int = 1,
) -> MonteCarloResult:
    """Average the deviation over independent trials.

    Diverged trials are excluded from the average and reported in the
    series' ``diverged_trials`` count; if every trial diverges the
    series is all-NaN.  The steady-state scalar averages the final
    ``steady_state_window`` ensemble values (in the linear domain).
    """
    alg = algorithm if algorithm is not None else config.algorithms[0]
    seeds = _trial_seeds(config.seed, config.trials)
    tasks = [(config, channel, s, alg, collect_steady_state) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=4))
    else:
        results = [_run_one(t) for t in tasks]

    kept = [r for r in results if not r.diverged]
    diverged = len(results) - len(kept)
    if kept:
        linear = np.mean([r.msd for r in kept], axis=0)
        with np.errstate(divide="ignore"):
            values_db = 10.0 * np.log10(linear)
        window = min(config.steady_state_window, linear.size)
        steady_db = float(10.0 * np.log10(np.mean(linear[-window:])))
        gain_mean = werr2_mean = None
        if collect_steady_state:
            gain_mean = np.mean([r.ss_gain_mean for r in kept], axis=0)
            werr2_mean = np.mean([r.ss_werr2_mean for r in kept], axis=0)
    else:
        values_db = np.full(results[0].msd.shape, np.nan)
        steady_db = float("nan")
        gain_mean = werr2_mean = None
    series = MetricSeries(values_db, len(kept), "mean", diverged)
    return MonteCarloResult(series, steady_db, gain_mean, werr2_mean)


def erle_series(desired: np.ndarray, error: np.ndarray, smoothing: float = 0.996) -> MetricSeries:
    """Echo return loss enhancement from smoothed power estimates.

    Both powers use the one-pole smoother p(n) = chi*p(n-1) +
    (1-chi)*x(n)^2, initialized at the first squared sample.  A zero
    smoothed error power clips the value at +100 dB and flags the
    series.
    """
    d = np.asarray(desired, dtype=float)
    e = np.asarray(error, dtype=float)
    if d.shape != e.shape:
        raise ValueError("desired and error must have equal length")
    if not 0.0 < smoothing < 1.0:
        raise ValueError("smoothing must lie in (0, 1)")
    if d.size == 0:
        raise ValueError("empty signals")
    chi = smoothing
    # one-pole smoother with state seeded by the first squared sample
    pd = lfilter([1.0 - chi], [1.0, -chi], d**2, zi=np.array([chi * d[0] ** 2]))[0]
    pe = lfilter([1.0 - chi], [1.0, -chi], e**2, zi=np.array([chi * e[0] ** 2]))[0]
    clipped = bool(np.any(pe == 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = 10.0 * np.log10(pd / pe)
    ratio = np.where(pe == 0.0, np.where(pd == 0.0, 0.0, ERLE_CLIP_DB), ratio)
    ratio = np.minimum(ratio, ERLE_CLIP_DB)
    return MetricSeries(ratio, 1, "single_run", clipped=clipped)
