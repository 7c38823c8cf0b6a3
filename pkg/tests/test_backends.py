"""Compiled kernel vs pure-Python driver: behavioral equality."""

import numpy as np
import pytest

from proxsaf import _backend, _core_py
from proxsaf import experiments as ex

compiled = pytest.importorskip("proxsaf._core")


def _config(**kw):
    defaults = dict(
        algorithms=(ex.algorithm_config("pnsaf", step_size=0.5, regularization=1e-3),),
        num_subbands=4,
        trials=1,
        total_samples=8_000,
        seed=7,
    )
    defaults.update(kw)
    return ex.ExperimentConfig(**defaults)


ALGORITHMS = [
    ex.algorithm_config("nsaf", step_size=0.5, regularization=1e-3),
    ex.algorithm_config("pnsaf", step_size=0.25, regularization=1e-3, zeta=-0.5),
    ex.algorithm_config("pnsaf", step_size=0.5, regularization=1e-3, prop_rule="pnlms"),
    ex.algorithm_config("pfbs_pnsaf", step_size=0.5, beta=9e-5, regularization=1e-3),
    ex.algorithm_config("auto_pfbs_pnsaf", step_size=0.5, tau=1e-4, regularization=1e-3),
]


@pytest.mark.parametrize("alg", ALGORITHMS, ids=lambda a: f"{a.name}-{a.prop_rule}")
def test_trajectories_agree(channel_q8, alg):
    cfg = _config()
    a = ex.run_trial(cfg, channel_q8, 123, alg, backend=compiled)
    b = ex.run_trial(cfg, channel_q8, 123, alg, backend=_core_py)
    assert not a.diverged and not b.diverged
    np.testing.assert_allclose(a.msd, b.msd, rtol=1e-10, atol=1e-300)
    np.testing.assert_allclose(a.weights, b.weights, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a.beta_trace, b.beta_trace, rtol=1e-9, atol=1e-18)


def test_aec_and_steady_state_paths_agree(channel_q8):
    cfg = _config(mode="aec", total_samples=4_000)
    alg = ex.algorithm_config("pfbs_pnsaf", step_size=0.5, beta=9e-5, regularization=1e-3)
    a = ex.run_trial(cfg, channel_q8, 99, alg, backend=compiled, collect_steady_state=True)
    b = ex.run_trial(cfg, channel_q8, 99, alg, backend=_core_py, collect_steady_state=True)
    np.testing.assert_allclose(a.error_signal, b.error_signal, rtol=1e-9, atol=1e-14)
    np.testing.assert_allclose(a.ss_gain_mean, b.ss_gain_mean, rtol=1e-10, atol=0)
    np.testing.assert_allclose(a.ss_werr2_mean, b.ss_werr2_mean, rtol=1e-8, atol=1e-300)


def test_divergence_flagged_identically(g168_channel_path):
    channel = ex.load_channel(g168_channel_path)
    cfg = _config(
        algorithms=(ex.algorithm_config("pnsaf", step_size=2.6, regularization=1e-3),),
        channel=ex.ChannelSpec(kind="file", file=str(g168_channel_path)),
        total_samples=60_000,
    )
    a = ex.run_trial(cfg, channel, 1, backend=compiled)
    b = ex.run_trial(cfg, channel, 1, backend=_core_py)
    assert a.diverged and b.diverged
    assert a.diverged_at == b.diverged_at
    # the triggering frame keeps its measured value; everything after is NaN
    assert np.isnan(a.msd[a.diverged_at + 1:]).all()
    assert np.isnan(b.msd[b.diverged_at + 1:]).all()


def test_sudden_change_path_agrees(channel_q8):
    from dataclasses import replace

    channel = replace(channel_q8, change_schedule=ex.ChangeSchedule(4_000, 12))
    cfg = _config(total_samples=8_000)
    a = ex.run_trial(cfg, channel, 5, backend=compiled)
    b = ex.run_trial(cfg, channel, 5, backend=_core_py)
    np.testing.assert_allclose(a.msd, b.msd, rtol=1e-10)


def test_backend_selection_reporting():
    assert _backend.backend_name() in ("compiled", "python")
    assert _backend.get_backend("python") is _core_py
    assert _backend.get_backend("compiled").BACKEND_NAME == "compiled"
    with pytest.raises(ValueError):
        _backend.get_backend("julia")


def test_same_seed_bitwise_identical(channel_q8):
    cfg = _config()
    a = ex.run_trial(cfg, channel_q8, 123)
    b = ex.run_trial(cfg, channel_q8, 123)
    assert np.array_equal(a.msd, b.msd)
    assert np.array_equal(a.weights, b.weights)
