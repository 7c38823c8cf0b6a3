"""Shared fixtures: banks, channels, cached statistics, synthetic speech."""

import numpy as np
import pytest
from scipy.signal import lfilter

from proxsaf import experiments as ex
from proxsaf import filterbank as fb


@pytest.fixture(scope="session")
def bank4():
    return fb.modulate_cosine(fb.design_prototype(4))


@pytest.fixture(scope="session")
def bank1():
    return fb.modulate_cosine(fb.design_prototype(1))


@pytest.fixture(scope="session")
def channel_q8():
    return ex.gen_type1_channel(128, 8, seed=42)


@pytest.fixture(scope="session")
def ar1_stats_m128(bank4, channel_q8):
    """Subband statistics for the standard AR(1)/N=4/M=128 setup at 30 dB SNR."""
    stats = fb.estimate_subband_statistics(
        bank4, lambda n: ex.gen_ar1(0.8, n, seed=99), 128, 150_000
    )
    pilot = ex.gen_ar1(0.8, 400_000, seed=77)
    clean = lfilter(channel_q8.impulse_response, [1.0], pilot)
    sigma_v2 = ex.noise_variance_for_snr(clean, 30.0)
    return fb.SubbandStatistics(
        stats.autocorrelation,
        stats.input_variances,
        fb.subband_noise_variances(bank4, sigma_v2),
    )


def synth_speech(num_samples: int, seed: int, rate: int = 8000) -> np.ndarray:
    """Speech-like excitation: pitched AR bursts under a syllabic envelope,
    separated by silent gaps."""
    rng = np.random.default_rng(seed)
    carrier = lfilter([1.0], [1.0, -0.92], rng.standard_normal(num_samples))
    envelope = np.zeros(num_samples)
    pos = 0
    while pos < num_samples:
        burst = int(rng.integers(rate // 5, rate))  # 0.2 s .. 1 s voiced stretch
        gap = int(rng.integers(rate // 20, rate // 3))
        end = min(pos + burst, num_samples)
        t = np.arange(end - pos)
        envelope[pos:end] = 0.5 - 0.5 * np.cos(2 * np.pi * np.minimum(t / max(end - pos - 1, 1), 1.0))
        pos = end + gap
    out = carrier * envelope
    peak = np.abs(out).max()
    return 0.5 * out / peak if peak > 0 else out


@pytest.fixture(scope="session")
def speech_wav(tmp_path_factory):
    """A 12 s synthetic 16-bit mono WAV at 8 kHz."""
    rate = 8000
    samples = synth_speech(12 * rate, seed=31, rate=rate)
    path = tmp_path_factory.mktemp("audio") / "speech.wav"
    ex.save_wav(path, samples, rate)
    return path


@pytest.fixture(scope="session")
def g168_channel_path():
    from importlib import resources

    return resources.files("proxsaf").joinpath("data/g168_like_m512_q64.txt")


@pytest.fixture(scope="session")
def acoustic_ir_path():
    from importlib import resources

    return resources.files("proxsaf").joinpath("data/acoustic_ir_m256.txt")
