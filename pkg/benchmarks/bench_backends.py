"""Benchmark the compiled adaptation kernel against the Python fallback.

Times full trials (input generation and filtering excluded) for a few
representative configurations and prints a small table:

    python benchmarks/bench_backends.py [--repeats 5]
"""

import argparse
import time

import numpy as np
from scipy.signal import lfilter

from proxsaf import _backend, _core_py
from proxsaf import experiments as ex
from proxsaf import filterbank as fb


def prepare(num_subbands, filter_length, total, nonzeros, algorithm):
    bank = fb.modulate_cosine(fb.design_prototype(num_subbands))
    channel = ex.gen_type1_channel(filter_length, nonzeros, seed=42)
    u = ex.gen_ar1(0.8, total, seed=7)
    clean = lfilter(channel.impulse_response, [1.0], u)
    sigma_v2 = ex.noise_variance_for_snr(clean, 30.0)
    d = clean + np.random.default_rng(8).normal(0, np.sqrt(sigma_v2), total)
    sub_u = fb.subband_signals(bank, u)
    n, m = num_subbands, filter_length
    args = dict(
        sub_u_padded=np.ascontiguousarray(
            np.concatenate([np.zeros((n, m - 1)), sub_u], axis=1)),
        sub_d=np.ascontiguousarray(fb.subband_signals(bank, d)[:, n - 1 :: n].T),
        wo_pre=channel.impulse_response,
        wo_post=channel.impulse_response,
        change_frame=total // n,
        mu=algorithm.step_size,
        beta=algorithm.beta,
        delta=1e-3,
        rule_kind={"identity": 0, "simplified": 1, "pnlms": 2}[algorithm.prop_rule],
        zeta=algorithm.zeta,
        epsilon=algorithm.epsilon,
        rho=algorithm.rho,
        gamma=algorithm.gamma,
        auto_beta=algorithm.beta_mode == "auto",
        tau=algorithm.tau,
        tracker_period=max(1, round(m / n)),
    )
    return args


def run_case(label, args, repeats):
    backends = [("python", _core_py)]
    try:
        backends.insert(0, ("compiled", _backend.get_backend("compiled")))
    except ImportError:
        pass
    times = {}
    for name, impl in backends:
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = impl.run_adaptation(**args)
            best = min(best, time.perf_counter() - t0)
        assert not out["diverged"]
        times[name] = best
    frames = args["sub_d"].shape[0]
    line = f"{label:38s} frames={frames:6d}"
    for name in ("compiled", "python"):
        if name in times:
            line += f"  {name}={times[name] * 1e3:8.1f} ms"
    if "compiled" in times and "python" in times:
        line += f"  speedup={times['python'] / times['compiled']:5.1f}x"
    print(line)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    opts = parser.parse_args()
    cases = [
        ("pnsaf N=4 M=128 T=50k",
         prepare(4, 128, 50_000, 8, ex.algorithm_config("pnsaf", step_size=0.5))),
        ("pfbs_pnsaf N=4 M=128 T=50k",
         prepare(4, 128, 50_000, 8,
                 ex.algorithm_config("pfbs_pnsaf", step_size=0.5, beta=9e-5))),
        ("auto_pfbs_pnsaf N=4 M=128 T=50k",
         prepare(4, 128, 50_000, 8,
                 ex.algorithm_config("auto_pfbs_pnsaf", step_size=0.5))),
        ("pnsaf(pnlms) N=8 M=512 T=50k",
         prepare(8, 512, 50_000, 64,
                 ex.algorithm_config("pnsaf", step_size=0.5, prop_rule="pnlms"))),
        ("nsaf N=2 M=64 T=50k",
         prepare(2, 64, 50_000, 8, ex.algorithm_config("nsaf", step_size=0.5))),
    ]
    print(f"active backend: {_backend.backend_name()}  (best of {opts.repeats})")
    for label, args in cases:
        run_case(label, args, opts.repeats)


if __name__ == "__main__":
    main()
