"""Generate the built-in prototype coefficient files.

For each (N, L) pairing this refines a Kaiser windowed-sinc lowpass by
least squares: an 8th-power mean of the stopband magnitude (edge at
pi/N) keeps the measured attenuation well past 60 dB, and a band-tiling
flatness term keeps sum_i |H_i(w)|^2 close to constant.  The result is
scaled so the modulated bank satisfies sum_i ||h_i||^2 = 1 exactly.

Run from the repository root:

    python tools/design_prototypes.py
"""

from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.signal import firwin

import sys

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from proxsaf.filterbank import (  # noqa: E402
    AnalysisBank,
    PrototypeFilter,
    measure_stopband_attenuation,
    modulate_cosine,
    save_prototype,
)

GRID = 2048
STOP_WEIGHT = 3e5
FLAT_WEIGHT = 1.0


def _full(q, length):
    half = (length + 1) // 2
    p = np.empty(length)
    p[:half] = q
    p[half:] = q[: half - 1][::-1]
    return p


def design(n_bands: int, length: int) -> np.ndarray:
    omega = np.linspace(0.0, np.pi, GRID)
    stop = omega >= np.pi / n_bands
    exponents = np.exp(-1j * np.outer(omega, np.arange(length)))
    exp_stop = exponents[stop]

    def bank_tiling(p):
        bank = modulate_cosine(PrototypeFilter(p, n_bands, 0.0)).filters
        return (np.abs(exponents @ bank.T) ** 2).sum(axis=1)

    def cost(q):
        p = _full(q, length)
        stop_power = np.abs(exp_stop @ p) ** 2
        peaky_stop = np.mean(stop_power**4) ** 0.25
        flatness = np.mean((bank_tiling(p) - 1.0) ** 2)
        return STOP_WEIGHT * peaky_stop + FLAT_WEIGHT * flatness

    p0 = firwin(length, 1.0 / (2 * n_bands), window=("kaiser", 6.0))
    p0 /= np.sqrt(bank_tiling(p0).mean())
    res = minimize(
        cost,
        p0[: (length + 1) // 2],
        method="L-BFGS-B",
        options=dict(maxiter=4000, ftol=1e-18, gtol=1e-14),
    )
    p = _full(res.x, length)
    bank = modulate_cosine(PrototypeFilter(p, n_bands, 0.0))
    return p / np.sqrt(bank.norms_squared().sum())


def main():
    out_dir = Path(__file__).resolve().parents[1] / "src" / "proxsaf" / "data"
    out_dir.mkdir(parents=True, exist_ok=True)
    for n_bands, length in [(2, 17), (4, 33), (8, 65)]:
        p = design(n_bands, length)
        att = measure_stopband_attenuation(p, n_bands)
        bank = modulate_cosine(PrototypeFilter(p, n_bands, att))
        total = bank.norms_squared().sum()
        path = out_dir / f"prototype_n{n_bands}_l{length}.txt"
        save_prototype(path, PrototypeFilter(p, n_bands, att))
        print(f"N={n_bands} L={length}: attenuation={att:.2f} dB, sum ||h_i||^2={total:.12f} -> {path}")


if __name__ == "__main__":
    main()
