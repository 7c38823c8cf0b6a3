"""Adaptive update operations: gains, forward/proximal steps, reductions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxsaf import adaptive as ad
from proxsaf import experiments as ex
from proxsaf import filterbank as fb
from proxsaf.filterbank import SubbandFrame


def make_state(m=4, n=2, mu=0.5, beta=0.0, delta=1e-3, rule=None, **kw):
    return ad.FilterState.create(m, n, mu, beta, delta, rule or ad.IdentityRule(), **kw)


def make_frame(regressors, desired, k=0):
    return SubbandFrame(k, np.atleast_2d(np.asarray(regressors, float)),
                        np.atleast_1d(np.asarray(desired, float)))


class TestSubbandErrors:
    def test_zero_weights_pass_desired(self):
        state = make_state(m=3)
        frame = make_frame(np.ones((2, 3)), [0.7, -0.2])
        assert np.allclose(ad.subband_errors(state, frame), [0.7, -0.2])

    def test_perfect_model_zero_error(self):
        rng = np.random.default_rng(0)
        w_true = rng.standard_normal(5)
        state = make_state(m=5)
        state.weights = w_true.copy()
        u = rng.standard_normal((3, 5))
        frame = make_frame(u, u @ w_true)
        assert np.allclose(ad.subband_errors(state, frame), 0.0, atol=1e-14)

    def test_hand_worked_case(self):
        state = make_state(m=2)
        state.weights = np.array([1.0, -1.0])
        frame = make_frame([[2.0, 3.0]], [1.0])
        assert ad.subband_errors(state, frame)[0] == pytest.approx(2.0)

    def test_dimension_mismatch(self):
        state = make_state(m=4)
        with pytest.raises(ValueError, match="length"):
            ad.subband_errors(state, make_frame(np.ones((2, 3)), [0.0, 0.0]))


class TestGainsSimplified:
    def test_zero_weights_uniform(self):
        g = ad.gains_simplified(np.zeros(128), zeta=0.0, epsilon=1e-4)
        assert np.allclose(g, 1.0 / 256.0)

    def test_single_active_tap(self):
        g = ad.gains_simplified(np.array([1.0, 0, 0, 0]), zeta=0.0, epsilon=1e-12)
        assert np.allclose(g, [0.625, 0.125, 0.125, 0.125])
        assert g.sum() == pytest.approx(1.0)

    def test_sum_identity(self):
        # sum g = (1-z)/2 + (1+z)*S/(2S+eps), approaching 1 as S >> eps
        rng = np.random.default_rng(1)
        w = rng.standard_normal(64)
        zeta, eps = -0.5, 1e-4
        g = ad.gains_simplified(w, zeta, eps)
        s = np.abs(w).sum()
        expected = (1 - zeta) / 2 + (1 + zeta) * s / (2 * s + eps)
        assert g.sum() == pytest.approx(expected, rel=1e-12)
        assert 0.74 < g.sum() <= 1.0

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=50),
           st.floats(-1.0, 0.9), st.floats(1e-8, 1e-2))
    @settings(max_examples=60, deadline=None)
    def test_positive_and_trace_bounded(self, w, zeta, eps):
        g = ad.gains_simplified(np.array(w), zeta, eps)
        assert np.all(g > 0)
        assert g.sum() <= 1.0 + 1e-9

    def test_near_unit_sum_when_weights_large(self):
        w = np.full(32, 3.0)
        g = ad.gains_simplified(w, 0.0, 1e-4)
        assert abs(g.sum() - 1.0) <= 1e-6


class TestGainsPnlms:
    def test_zero_weights_uniform(self):
        g = ad.gains_pnlms(np.zeros(16), rho=0.04, gamma=0.01)
        assert np.allclose(g, 1.0 / 16.0)

    def test_hand_worked_case(self):
        g = ad.gains_pnlms(np.array([1.0, 0.001, 0.0]), rho=0.04, gamma=0.01)
        assert np.allclose(g, [25 / 27, 1 / 27, 1 / 27])

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_exact_unit_sum(self, w):
        g = ad.gains_pnlms(np.array(w), 0.04, 0.01)
        assert g.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(g > 0)


class TestForwardStep:
    def test_zero_error_keeps_weights(self):
        state = make_state(m=3)
        rng = np.random.default_rng(2)
        state.weights = rng.standard_normal(3)
        frame = make_frame(rng.standard_normal((2, 3)), np.zeros(2))
        psi = ad.forward_step(state, frame, np.zeros(2))
        assert np.allclose(psi, state.weights)

    def test_hand_worked_projection(self):
        # single band, G=I/M, delta=0: the gain scaling cancels
        state = ad.FilterState.create(2, 1, step_size=1.0, regularization=1e-300)
        frame = make_frame([[1.0, 0.0]], [1.0])
        errors = ad.subband_errors(state, frame)
        assert errors[0] == pytest.approx(1.0)
        psi = ad.forward_step(state, frame, errors)
        assert np.allclose(psi, [1.0, 0.0])

    def test_divergence_detected(self):
        state = make_state(m=2)
        frame = make_frame([[1.0, 1.0]], [np.inf])
        with pytest.raises(ad.DivergenceError, match="iteration"):
            ad.forward_step(state, frame, np.array([np.inf]))


class TestProximalStep:
    def test_identity_at_zero_threshold(self):
        psi = np.array([0.4, -0.2, 0.0])
        out = ad.proximal_step(psi, 0.0)
        assert np.array_equal(out, psi)
        assert out is not psi

    def test_hand_worked_case(self):
        out = ad.proximal_step(np.array([0.5, -0.1, 0.05]), 0.2)
        assert np.allclose(out, [0.3, 0.0, 0.0])

    def test_scalar_objective_oracle(self):
        # brute-force the scalar objective beta*|w| + (1/(2 mu))(psi - w)^2
        rng = np.random.default_rng(3)
        for _ in range(200):
            psi = rng.uniform(-1, 1)
            mu = rng.uniform(0.05, 2.0)
            beta = rng.uniform(0.0, 0.5)
            grid = np.arange(-abs(psi) - 1e-4, abs(psi) + 1e-4, 1e-5)
            objective = beta * np.abs(grid) + (grid - psi) ** 2 / (2 * mu)
            best = grid[np.argmin(objective)]
            got = ad.proximal_step(np.array([psi]), mu * beta)[0]
            assert got == pytest.approx(best, abs=1e-4)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=20),
           st.lists(st.floats(-100, 100), min_size=1, max_size=20),
           st.floats(0, 10))
    @settings(max_examples=100, deadline=None)
    def test_firm_nonexpansiveness(self, a, b, thr):
        n = min(len(a), len(b))
        va, vb = np.array(a[:n]), np.array(b[:n])
        da = ad.proximal_step(va, thr) - ad.proximal_step(vb, thr)
        assert np.linalg.norm(da) <= np.linalg.norm(va - vb) + 1e-9

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(0.01, 2))
    @settings(max_examples=100, deadline=None)
    def test_small_components_zeroed(self, psi, thr):
        v = np.array(psi)
        out = ad.proximal_step(v, thr)
        assert np.all(out[np.abs(v) <= thr] == 0.0)


class TestBetaUpdate:
    def test_hand_worked_gap(self):
        state = make_state(m=2, n=1, beta_mode="auto", tau=0.0)
        assert state.tracker_period == 2
        state.iteration = 1  # not a tracker-reset step
        state.w_hat = np.array([0.4, -0.4])
        psi = np.array([0.5, -0.5])
        # tracker averages first (w_hat -> [0.45, -0.45]), then
        # beta = (||psi||_1 - ||w_hat||_1) / nnz = (1.0 - 0.9) / 2
        beta = ad.beta_update(state, psi)
        assert beta == pytest.approx(0.05)
        assert np.allclose(state.w_hat, [0.45, -0.45])

    def test_tau_floor(self):
        state = make_state(m=4, beta_mode="auto", tau=0.001)
        state.iteration = 0  # reset step: w_hat := psi, gap = 0 -> tau floor
        psi = np.array([0.3, -0.2, 0.1, 0.05])
        beta = ad.beta_update(state, psi)
        assert beta == pytest.approx(0.001 / 4)

    def test_zero_psi_gives_zero(self):
        state = make_state(m=3, beta_mode="auto", tau=0.0)
        assert ad.beta_update(state, np.zeros(3)) == 0.0

    def test_non_negative_always(self):
        rng = np.random.default_rng(4)
        state = make_state(m=8, beta_mode="auto", tau=0.0)
        for k in range(50):
            state.iteration = k
            beta = ad.beta_update(state, rng.standard_normal(8))
            assert beta >= 0.0

    def test_tracker_reset_period(self):
        # M=8, N=2 -> reset every 4 iterations
        state = make_state(m=8, n=2, beta_mode="auto")
        assert state.tracker_period == 4
        psi = np.ones(8)
        state.iteration = 4
        ad.beta_update(state, psi)
        assert np.array_equal(state.w_hat, psi)


def reference_nsaf(sub_u_frames, sub_d, m, mu, delta_raw):
    """Textbook normalized update, coded independently of the package:
    w += mu * sum_i u_i e_i / (||u_i||^2 + delta_raw)."""
    w = np.zeros(m)
    out = [w.copy()]
    for regressors, desired in zip(sub_u_frames, sub_d):
        acc = np.zeros(m)
        for u_i, d_i in zip(regressors, desired):
            e_i = d_i - np.dot(u_i, w)
            acc += u_i * e_i / (np.dot(u_i, u_i) + delta_raw)
        w = w + mu * acc
        out.append(w.copy())
    return out


def reference_pnsaf(sub_u_frames, sub_d, m, mu, delta, zeta, eps):
    """Proportionate update with the simplified gain rule, coded independently."""
    w = np.zeros(m)
    out = [w.copy()]
    for regressors, desired in zip(sub_u_frames, sub_d):
        absw = np.abs(w)
        g = (1 - zeta) / (2 * m) + (1 + zeta) * absw / (2 * absw.sum() + eps)
        acc = np.zeros(m)
        for u_i, d_i in zip(regressors, desired):
            e_i = d_i - np.dot(u_i, w)
            acc += g * u_i * e_i / (np.dot(u_i * g, u_i) + delta)
        w = w + mu * acc
        out.append(w.copy())
    return out


def _frames_from_signals(bank, u, d, m):
    n = bank.num_subbands
    sub_u = fb.subband_signals(bank, u)
    sub_d = fb.subband_signals(bank, d)
    padded = np.concatenate([np.zeros((n, m - 1)), sub_u], axis=1)
    frames_u, frames_d = [], []
    for k in range(u.size // n):
        end = (k + 1) * n - 1
        frames_u.append(padded[:, end : end + m][:, ::-1].copy())
        frames_d.append(sub_d[:, end].copy())
    return frames_u, frames_d


class TestReductionChain:
    """Trajectory equalities against independently coded references."""

    def setup_method(self):
        rng = np.random.default_rng(7)
        self.bank = fb.modulate_cosine(fb.design_prototype(4))
        self.m = 16
        total = 1200
        channel = ex.gen_type1_channel(self.m, 3, seed=8)
        u = ex.gen_ar1(0.8, total, seed=9)
        d = np.convolve(u, channel.impulse_response)[:total] + 0.01 * rng.standard_normal(total)
        self.frames_u, self.frames_d = _frames_from_signals(self.bank, u, d, self.m)

    def _run_iterate(self, rule, mu, beta, delta):
        state = ad.FilterState.create(self.m, 4, mu, beta, delta, rule)
        traj = [state.weights.copy()]
        for k, (ru, rd) in enumerate(zip(self.frames_u, self.frames_d)):
            ad.iterate(state, SubbandFrame(k, ru, rd))
            traj.append(state.weights.copy())
        return traj

    def test_identity_rule_matches_nsaf(self):
        mu, delta = 0.5, 1e-3
        got = self._run_iterate(ad.IdentityRule(), mu, 0.0, delta)
        # identity gains are 1/M, so the equivalent raw-norm regularizer is M*delta
        want = reference_nsaf(self.frames_u, self.frames_d, self.m, mu, self.m * delta)
        for a, b in zip(got, want):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_zero_threshold_matches_pnsaf(self):
        mu, delta, zeta, eps = 0.5, 1e-3, 0.0, 1e-4
        got = self._run_iterate(ad.SimplifiedRule(zeta, eps), mu, 0.0, delta)
        want = reference_pnsaf(self.frames_u, self.frames_d, self.m, mu, delta, zeta, eps)
        for a, b in zip(got, want):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_scalar_noiseless_converges_immediately(self):
        # M=1, N=1, mu=1: one update lands on the true weight
        state = ad.FilterState.create(1, 1, step_size=1.0, regularization=1e-12)
        w_true = 0.8
        u = np.array([[1.3]])
        frame = make_frame(u, [1.3 * w_true])
        ad.iterate(state, frame)
        assert state.weights[0] == pytest.approx(w_true, abs=1e-9)


class TestIterate:
    def test_commits_iteration_counter_and_gains(self):
        state = make_state(m=4, rule=ad.SimplifiedRule())
        frame = make_frame(np.random.default_rng(0).standard_normal((2, 4)), [0.5, -0.5])
        ad.iterate(state, frame)
        assert state.iteration == 1
        assert np.all(state.gains > 0)

    def test_state_untouched_on_divergence(self):
        state = make_state(m=2)
        w_before = state.weights.copy()
        frame = make_frame([[1.0, 1.0]], [np.nan])
        with pytest.raises(ad.DivergenceError):
            ad.iterate(state, frame)
        assert np.array_equal(state.weights, w_before)
        assert state.iteration == 0

    def test_auto_beta_thresholds_within_same_iteration(self):
        state = make_state(m=4, n=4, beta_mode="auto", tau=0.4)
        frame = make_frame([[1.0, 0.0, 0.0, 0.0]], [1.0])
        ad.iterate(state, frame)
        # tau/nnz floors beta; the same iteration's threshold shrinks w
        assert state.threshold > 0.0
        assert state.weights[0] < state.intermediate[0]


class TestDelaylessError:
    def test_true_weights_leave_noise(self):
        rng = np.random.default_rng(11)
        w = rng.standard_normal(6)
        u = rng.standard_normal(6)
        noise = 0.3
        d = float(u @ w) + noise
        assert ad.delayless_error(w, u, d) == pytest.approx(noise)

    def test_zero_weights_return_desired(self):
        u = np.ones(4)
        assert ad.delayless_error(np.zeros(4), u, 2.5) == pytest.approx(2.5)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ad.delayless_error(np.zeros(4), np.ones(3), 1.0)


class TestWeightFiles:
    def test_round_trip(self, tmp_path):
        w = np.random.default_rng(12).standard_normal(32)
        path = tmp_path / "weights.txt"
        ad.save_weights(path, w)
        assert np.array_equal(ad.load_weights(path), w)

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("")
        with pytest.raises(ValueError):
            ad.load_weights(path)
