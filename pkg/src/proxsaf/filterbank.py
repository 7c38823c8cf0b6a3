"""Cosine-modulated analysis filter bank and subband signal plumbing.

The bank splits fullband input/desired streams into N subband signals,
produces critically decimated regressor frames for the adaptive update,
and estimates the subband second-order statistics that the performance
model consumes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.signal import freqz, lfilter

__all__ = [
    "PrototypeFilter",
    "AnalysisBank",
    "SubbandFrame",
    "SubbandPipeline",
    "SubbandStatistics",
    "NeedMoreInput",
    "design_prototype",
    "modulate_cosine",
    "load_prototype",
    "save_prototype",
    "subband_signals",
    "subband_noise_variances",
    "estimate_subband_statistics",
]

# (num_subbands, length) pairs with a shipped coefficient file.
BUILTIN_DESIGNS = {(2, 17), (4, 33), (8, 65)}

#: Stopband starts at pi/N: energy beyond the adjacent band is aliasing.
STOPBAND_EDGE_FRACTION = 1.0


class NeedMoreInput(Exception):
    """Raised when a frame is requested before N new samples arrived."""


@dataclass(frozen=True)
class PrototypeFilter:
    """Lowpass prototype from which all analysis filters are modulated.

    Attributes
    ----------
    coefficients : ndarray
        Real FIR taps, length L.
    num_subbands : int
        Number of bands N the prototype was designed for.
    stopband_attenuation_db : float
        Measured attenuation (peak gain over peak stopband gain, in dB),
        with the stopband starting at pi/N.
    """

    coefficients: np.ndarray
    num_subbands: int
    stopband_attenuation_db: float

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("prototype coefficients must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(c)):
            raise ValueError("prototype coefficients must be finite")
        object.__setattr__(self, "coefficients", c)

    @property
    def length(self) -> int:
        return self.coefficients.size


@dataclass(frozen=True)
class AnalysisBank:
    """The N cosine-modulated analysis filters derived from one prototype."""

    filters: np.ndarray  # (N, L)
    prototype: PrototypeFilter

    def __post_init__(self):
        h = np.asarray(self.filters, dtype=float)
        if h.ndim != 2:
            raise ValueError("filters must be a 2-D (N, L) array")
        if not np.all(np.isfinite(h)):
            raise ValueError("analysis filters must be finite")
        norms = (h**2).sum(axis=1)
        if np.any(norms <= 0.0):
            raise ValueError("every analysis filter needs positive energy")
        object.__setattr__(self, "filters", h)

    @property
    def num_subbands(self) -> int:
        return self.filters.shape[0]

    @property
    def filter_length(self) -> int:
        return self.filters.shape[1]

    def norms_squared(self) -> np.ndarray:
        """Per-filter squared l2 norms ||h_i||^2."""
        return (self.filters**2).sum(axis=1)


@dataclass(frozen=True)
class SubbandFrame:
    """One decimated iteration's worth of subband data.

    ``regressors[i]`` holds the most recent M subband-filtered input
    samples of band i, newest first.  ``desired[i]`` is the
    subband-filtered desired signal at the same (decimated) instant.
    """

    iteration: int
    regressors: np.ndarray  # (N, M)
    desired: np.ndarray  # (N,)


def measure_stopband_attenuation(
    coefficients: np.ndarray, num_subbands: int, worn: int = 8192
) -> float:
    """Peak-to-peak-stopband gain ratio in dB, stopband edge at pi/N."""
    if num_subbands <= 1:
        return float("inf")
    w, response = freqz(coefficients, worN=worn)
    mag = np.abs(response)
    stop = w >= STOPBAND_EDGE_FRACTION * np.pi / num_subbands
    peak_stop = mag[stop].max()
    if peak_stop == 0.0:
        return float("inf")
    return float(20.0 * np.log10(mag.max() / peak_stop))


def _builtin_path(num_subbands: int, length: int):
    return resources.files("proxsaf").joinpath(
        f"data/prototype_n{num_subbands}_l{length}.txt"
    )


def design_prototype(num_subbands: int, length: int | None = None) -> PrototypeFilter:
    """Return the built-in lowpass prototype for an (N, L) pairing.

    The shipped designs are least-squares optimized windowed-sinc
    refinements: stopband energy beyond pi/N is pushed below -60 dB
    while keeping the modulated bank's band tiling flat, and the
    coefficients are pre-scaled so the modulated bank satisfies
    sum_i ||h_i||^2 = 1.  N=1 degenerates to a single all-pass tap.

    Parameters
    ----------
    num_subbands : int
        N, one of {1, 2, 4, 8} for built-in designs.
    length : int, optional
        Prototype length L; defaults to the built-in pairing
        (N=2-&gt;17, N=4-&gt;33, N=8-&gt;65).

    Raises
    ------
    ValueError
        For an (N, L) pair with no built-in design; supply coefficients
        through ``load_prototype`` instead.
    """
    if num_subbands == 1:
        if length not in (None, 1):
            raise ValueError("the degenerate N=1 bank only supports L=1")
        return PrototypeFilter(np.ones(1), 1, float("inf"))
    defaults = {2: 17, 4: 33, 8: 65}
    if length is None:
        length = defaults.get(num_subbands, 0)
    if (num_subbands, length) not in BUILTIN_DESIGNS:
        raise ValueError(
            f"no built-in prototype for N={num_subbands}, L={length}; "
            "load user-supplied coefficients with load_prototype()"
        )
    with _builtin_path(num_subbands, length).open("r") as fh:
        proto = _read_prototype_stream(fh)
    if proto.num_subbands != num_subbands or proto.length != length:
        raise ValueError("built-in prototype file is inconsistent with its name")
    return proto


def modulate_cosine(prototype: PrototypeFilter) -> AnalysisBank:
    """Cosine-modulate the prototype into N analysis filters.

    Uses the standard pseudo-QMF modulation
    ``h_i[n] = 2 p[n] cos((2i+1) pi/(2N) (n-(L-1)/2) + (-1)^i pi/4)``,
    which centers band i at (2i+1)pi/(2N) so the passbands tile
    [0, pi].  N=1 passes the prototype through untouched.
    """
    n_bands = prototype.num_subbands
    p = prototype.coefficients
    if n_bands == 1:
        return AnalysisBank(p[np.newaxis, :].copy(), prototype)
    length = p.size
    n = np.arange(length) - (length - 1) / 2.0
    filters = np.empty((n_bands, length))
    for i in range(n_bands):
        phase = (-1.0) ** i * np.pi / 4.0
        filters[i] = 2.0 * p * np.cos((2 * i + 1) * np.pi / (2 * n_bands) * n + phase)
    return AnalysisBank(filters, prototype)


def _read_prototype_stream(fh) -> PrototypeFilter:
    header = fh.readline().strip()
    try:
        fields = dict(part.split("=") for part in header.split())
        n_bands = int(fields["N"])
        length = int(fields["L"])
    except (ValueError, KeyError) as exc:
        raise ValueError(f"bad prototype header {header!r}, expected 'N=<n> L=<l>'") from exc
    coeffs = np.array([float(line) for line in fh if line.strip()])
    if coeffs.size != length:
        raise ValueError(f"header says L={length} but file has {coeffs.size} coefficients")
    att = measure_stopband_attenuation(coeffs, n_bands)
    return PrototypeFilter(coeffs, n_bands, att)


def load_prototype(path) -> PrototypeFilter:
    """Read a prototype coefficient file (header ``N=<n> L=<l>``, one tap per line)."""
    with open(path) as fh:
        return _read_prototype_stream(fh)


def save_prototype(path, prototype: PrototypeFilter) -> None:
    with open(path, "w") as fh:
        fh.write(f"N={prototype.num_subbands} L={prototype.length}\n")
        for c in prototype.coefficients:
            fh.write(f"{float(c)!r}\n")


def subband_signals(bank: AnalysisBank, samples: np.ndarray) -> np.ndarray:
    """Filter one fullband stream through every analysis filter.

    Returns an (N, len(samples)) array; delay lines start at zero, so
    ``out[i, n] = sum_l h_i[l] x[n-l]`` with x(n<0)=0.
    """
    samples = np.asarray(samples, dtype=float)
    out = np.empty((bank.num_subbands, samples.size))
    for i, h in enumerate(bank.filters):
        out[i] = lfilter(h, [1.0], samples)
    return out


class SubbandPipeline:
    """Streaming analysis front end feeding the adaptive update.

    Holds the fullband delay lines for both the input and desired
    streams; each ``advance_frame`` consumes exactly N buffered samples
    and emits the decimated regressors/desired values for that instant.
    A pipeline is single-threaded per trial; the bank itself is
    immutable and shareable.
    """

    def __init__(self, bank: AnalysisBank, filter_length: int):
        if filter_length < 1:
            raise ValueError("filter_length must be >= 1")
        self.bank = bank
        self.filter_length = int(filter_length)
        n, length = bank.num_subbands, bank.filter_length
        # u/v delay lines: raw fullband history for the analysis filters,
        # plus per-band histories of filtered input for the regressors.
        self._u_hist = np.zeros(length - 1)
        self._d_hist = np.zeros(length - 1)
        self._sub_u = np.zeros((n, self.filter_length - 1))
        self._pending_u = np.empty(0)
        self._pending_d = np.empty(0)
        self._iteration = 0

    @property
    def iteration(self) -> int:
        return self._iteration

    def feed(self, input_samples, desired_samples) -> None:
        """Buffer new fullband samples (both streams, equal length)."""
        u = np.atleast_1d(np.asarray(input_samples, dtype=float))
        d = np.atleast_1d(np.asarray(desired_samples, dtype=float))
        if u.shape != d.shape:
            raise ValueError("input and desired chunks must have equal length")
        self._pending_u = np.concatenate([self._pending_u, u])
        self._pending_d = np.concatenate([self._pending_d, d])

    def advance_frame(self) -> SubbandFrame:
        """Consume N buffered samples and emit the next decimated frame.

        Raises
        ------
        NeedMoreInput
            If fewer than N samples are buffered; no state is touched.
        """
        n = self.bank.num_subbands
        if self._pending_u.size < n:
            raise NeedMoreInput(
                f"need {n} fullband samples per frame, have {self._pending_u.size}"
            )
        u_new, self._pending_u = self._pending_u[:n], self._pending_u[n:]
        d_new, self._pending_d = self._pending_d[:n], self._pending_d[n:]

        length = self.bank.filter_length
        u_ext = np.concatenate([self._u_hist, u_new])
        d_ext = np.concatenate([self._d_hist, d_new])
        m = self.filter_length
        regressors = np.empty((n, m))
        desired = np.empty(n)
        for i, h in enumerate(self.bank.filters):
            # filtered samples for the N new time steps of band i
            new_sub = np.correlate(u_ext, h[::-1], mode="valid")
            hist = np.concatenate([self._sub_u[i], new_sub])
            regressors[i] = hist[::-1][:m]
            self._sub_u[i] = hist[-(m - 1):] if m > 1 else hist[:0]
            desired[i] = float(np.dot(h, d_ext[::-1][:length]))
        if length > 1:
            self._u_hist = u_ext[-(length - 1):]
            self._d_hist = d_ext[-(length - 1):]
        frame = SubbandFrame(self._iteration, regressors, desired)
        self._iteration += 1
        return frame


def subband_noise_variances(bank: AnalysisBank, fullband_noise_variance: float) -> np.ndarray:
    """Per-subband noise variances ||h_i||^2 * sigma_v^2."""
    if fullband_noise_variance < 0:
        raise ValueError("noise variance must be non-negative")
    return bank.norms_squared() * float(fullband_noise_variance)


@dataclass(frozen=True)
class SubbandStatistics:
    """Second-order subband statistics feeding the performance model."""

    autocorrelation: np.ndarray  # (N, M, M), R_i = E{u_i u_i^T}
    input_variances: np.ndarray  # (N,), sigma_{u,i}^2 = R_i[0, 0]
    noise_variances: np.ndarray  # (N,), ||h_i||^2 * sigma_v^2

    @property
    def num_subbands(self) -> int:
        return self.input_variances.size


def estimate_subband_statistics(
    bank: AnalysisBank,
    input_source,
    filter_length: int,
    num_frames: int,
    noise_variance: float = 0.0,
) -> SubbandStatistics:
    """Estimate R_i and sigma_{u,i}^2 by sample averaging.

    Parameters
    ----------
    input_source : callable or ndarray
        Either ``f(num_samples) -> ndarray`` or a precomputed fullband
        sample array long enough for the requested frame count.
    filter_length : int
        Regressor length M.
    num_frames : int
        Frames averaged; fewer than 10*M triggers a warning.
    noise_variance : float
        Fullband sigma_v^2 used for the per-subband noise variances.
    """
    m = int(filter_length)
    n = bank.num_subbands
    if num_frames < 10 * m:
        warnings.warn(
            f"num_frames={num_frames} below the recommended 10*M={10 * m}; "
            "statistics may be noisy",
            stacklevel=2,
        )
    warmup = m + bank.filter_length  # discard frames with partial history
    total = (num_frames + warmup) * n
    if callable(input_source):
        samples = np.asarray(input_source(total), dtype=float)
    else:
        samples = np.asarray(input_source, dtype=float)
    if samples.size < total:
        raise ValueError(f"need {total} samples, got {samples.size}")
    samples = samples[:total]
    if not np.any(samples):
        raise ValueError("degenerate input: all samples are zero")

    subbands = subband_signals(bank, samples)
    frame_ends = (np.arange(warmup, warmup + num_frames) + 1) * n - 1
    corr = np.empty((n, m, m))
    variances = np.empty(n)
    for i in range(n):
        windows = np.lib.stride_tricks.sliding_window_view(subbands[i], m)
        # window j covers y[j .. j+m-1]; the regressor at frame end t is
        # y[t-m+1 .. t] newest-first, i.e. the window at t-m+1 reversed.
        sel = windows[frame_ends - m + 1]
        r = sel.T @ sel / num_frames
        r = r[::-1, ::-1]
        corr[i] = 0.5 * (r + r.T)
        variances[i] = corr[i, 0, 0]
    if np.any(variances <= 0):
        raise ValueError("degenerate input: a subband has zero variance")
    return SubbandStatistics(
        autocorrelation=corr,
        input_variances=variances,
        noise_variances=subband_noise_variances(bank, noise_variance),
    )
