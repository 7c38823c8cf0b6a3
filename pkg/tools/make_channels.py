"""Generate the bundled test channels.

* ``g168_like_m512_q64.txt``: a network-echo-path stand-in with the
  usual structure (bulk delay, then a 64-tap dispersive active region
  with an oscillating decaying envelope), length 512, unit energy.
* ``acoustic_ir_m256.txt``: a short synthetic room response (sparse
  early reflections plus an exponentially decaying diffuse tail).

Run from the repository root:

    python tools/make_channels.py
"""

from pathlib import Path

import numpy as np

import sys

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from proxsaf.experiments import save_channel  # noqa: E402


def g168_like(length=512, active=64, bulk_delay=96, seed=20240) -> np.ndarray:
    rng = np.random.default_rng(seed)
    t = np.arange(active)
    envelope = np.exp(-t / 14.0) * (1.0 - np.exp(-(t + 1.0) / 2.5))
    carrier = np.cos(0.55 * t + 0.8) + 0.35 * rng.standard_normal(active)
    w = np.zeros(length)
    w[bulk_delay : bulk_delay + active] = envelope * carrier
    # keep the peak tap a modest share of the l1 mass (dispersive path)
    w /= np.sqrt((w**2).sum())
    return w


def acoustic_ir(length=256, seed=777) -> np.ndarray:
    rng = np.random.default_rng(seed)
    w = np.zeros(length)
    w[8] = 1.0
    for pos, amp in [(23, -0.55), (41, 0.38), (57, -0.27), (74, 0.19)]:
        w[pos] = amp
    tail = np.arange(length)
    diffuse = rng.standard_normal(length) * np.exp(-tail / 55.0) * 0.25
    diffuse[:12] = 0.0
    w = w + diffuse
    return w / np.sqrt((w**2).sum())


def main():
    out = Path(__file__).resolve().parents[1] / "src" / "proxsaf" / "data"
    out.mkdir(parents=True, exist_ok=True)
    w = g168_like()
    save_channel(out / "g168_like_m512_q64.txt", w)
    q = int(np.count_nonzero(np.abs(w) > 1e-12))
    peak_share = np.abs(w).max() / np.abs(w).sum()
    print(f"g168_like: M={w.size} Q={q} peak/l1={peak_share:.3f}")
    ir = acoustic_ir()
    save_channel(out / "acoustic_ir_m256.txt", ir)
    print(f"acoustic_ir: M={ir.size} energy={np.sum(ir**2):.6f}")


if __name__ == "__main__":
    main()
