import numpy as np
import pytest

from gravnav.fusion import (
    CHI2_99P9_2DOF,
    AidingFix,
    FusionParams,
    NavBelief,
    aiding_gate,
    apply_batch,
    ukf_predict,
    ukf_update,
    weight_fix_covariance,
)
from gravnav.pmht import BatchEstimate, KinematicState
from oracles import nav_kf_predict, nav_kf_update


def belief(x=None, cov=None, time=0.0):
    if x is None:
        x = np.array([0.0, 0.0, 22.0, 0.0, 1e-6, -1e-6])
    if cov is None:
        cov = np.diag([900.0, 900.0, 0.01, 0.01, 4e-12, 4e-12])
    return NavBelief(state=np.asarray(x, dtype=float), cov=np.asarray(cov, dtype=float),
                     time=time)


def accepted_fix(position, cov, time=0.0, variability=1.0):
    return AidingFix(position=np.asarray(position, dtype=float),
                     cov=np.asarray(cov, dtype=float), time=time,
                     variability=variability, accepted=True)


def estimate_from_states(states, times):
    return BatchEstimate(states=tuple(states), iterations_used=1, converged=True,
                         per_scan_fused=(None,) * len(states), final_residual=0.0,
                         times=np.asarray(times, dtype=float), cost_trace=np.array([]),
                         skipped_scans=())


class TestUkfPredict:
    def test_deterministic_linear_advance(self):
        params = FusionParams(q_accel=0.0, bias_psd=0.0)
        b = belief(x=[1.0, 2.0, 3.0, -4.0, 0.0, 0.0])
        out = ukf_predict(b, np.zeros(2), 1.0, params)
        assert out.position == pytest.approx([4.0, -2.0], abs=1e-9)
        assert out.velocity == pytest.approx([3.0, -4.0], abs=1e-12)
        assert out.time == 1.0
        # bias block untouched by prediction without bias noise
        assert out.cov[4:, 4:] == pytest.approx(b.cov[4:, 4:], abs=1e-20)

    def test_matches_kf_oracle(self):
        rng = np.random.default_rng(1)
        params = FusionParams(q_accel=1e-8, bias_psd=1e-12)
        b = belief()
        kx, kp = b.state.copy(), b.cov.copy()
        for _ in range(30):
            a = rng.normal(0.0, 1e-3, 2)
            b = ukf_predict(b, a, 1.0, params)
            kx, kp = nav_kf_predict(kx, kp, a, 1.0, 1e-8, 1e-12)
            assert np.linalg.norm(b.state - kx) / max(np.linalg.norm(kx), 1.0) <= 1e-10
            assert np.linalg.norm(b.cov - kp) / max(np.linalg.norm(kp), 1.0) <= 1e-10

    def test_cov_trace_grows_under_prediction(self):
        params = FusionParams(q_accel=1e-8, bias_psd=1e-12)
        b = belief()
        traces = [np.trace(b.cov)]
        for _ in range(20):
            b = ukf_predict(b, np.array([0.1, -0.2]), 1.0, params)
            traces.append(np.trace(b.cov))
        assert (np.diff(traces) > 0).all()

    def test_cov_stays_symmetric(self):
        params = FusionParams(q_accel=1e-8, bias_psd=1e-12)
        b = belief()
        for _ in range(10):
            b = ukf_predict(b, np.array([1.0, 2.0]), 1.0, params)
            assert (b.cov == b.cov.T).all()


class TestWeightFixCovariance:
    def test_full_confidence_identity(self):
        cov = np.diag([4.0, 9.0])
        assert (weight_fix_covariance(cov, 1.0) == cov).all()

    def test_half_variability_doubles(self):
        cov = np.diag([4.0, 9.0])
        assert np.allclose(weight_fix_covariance(cov, 0.5), 2.0 * cov)

    def test_floor_caps_inflation(self):
        cov = np.eye(2)
        assert np.allclose(weight_fix_covariance(cov, 0.0), 100.0 * cov)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            weight_fix_covariance(np.eye(2), 1.5)


class TestAidingGate:
    def test_accepts_above_threshold(self):
        assert aiding_gate(0.5, 0.05)

    def test_rejects_below_threshold(self):
        assert not aiding_gate(0.01, 0.05)

    def test_zero_threshold_always_accepts(self):
        assert aiding_gate(0.0, 0.0)


class TestUkfUpdate:
    def test_perfect_measurement_pins_position(self):
        params = FusionParams()
        b = belief()
        fix = accepted_fix(b.position, 1e-6 * np.eye(2), time=0.0)
        out, diag = ukf_update(b, fix, params)
        assert diag.accepted
        assert out.position == pytest.approx(b.position, abs=1e-9)
        eigs = np.linalg.eigvalsh(fix.cov - out.cov[:2, :2])
        assert eigs.min() >= -1e-12

    def test_uninformative_measurement_keeps_prior(self):
        params = FusionParams(nis_gate=None)
        b = belief()
        fix = accepted_fix([123.0, -77.0], 1e12 * np.eye(2), time=0.0)
        out, _ = ukf_update(b, fix, params)
        assert np.linalg.norm(out.state - b.state) / np.linalg.norm(b.state) <= 1e-6
        assert np.linalg.norm(out.cov - b.cov) / np.linalg.norm(b.cov) <= 1e-6

    def test_matches_kf_oracle(self):
        rng = np.random.default_rng(2)
        params = FusionParams(nis_gate=None)
        for _ in range(30):
            b = belief(cov=np.diag(rng.uniform(0.5, 2.0, 6)))
            z = b.position + rng.normal(0.0, 5.0, 2)
            r = np.diag(rng.uniform(1.0, 50.0, 2))
            out, _ = ukf_update(b, accepted_fix(z, r), params)
            kx, kp = nav_kf_update(b.state, b.cov, z, r)
            assert np.linalg.norm(out.state - kx) / max(np.linalg.norm(kx), 1.0) <= 1e-10
            assert np.linalg.norm(out.cov - kp) / max(np.linalg.norm(kp), 1.0) <= 1e-10

    def test_accepted_update_never_inflates_trace(self):
        rng = np.random.default_rng(3)
        params = FusionParams(nis_gate=None)
        for _ in range(50):
            b = belief(cov=np.diag(rng.uniform(0.1, 10.0, 6)))
            z = b.position + rng.normal(0.0, 1.0, 2)
            out, _ = ukf_update(b, accepted_fix(z, np.diag(rng.uniform(0.5, 5.0, 2))), params)
            assert np.trace(out.cov) <= np.trace(b.cov) + 1e-9

    def test_nis_gate_rejects_far_fix_bit_identical(self):
        params = FusionParams(nis_gate=CHI2_99P9_2DOF)
        b = belief()
        far = accepted_fix(b.position + np.array([4000.0, 0.0]), np.eye(2), time=0.0)
        out, diag = ukf_update(b, far, params)
        assert not diag.accepted
        assert diag.nis > CHI2_99P9_2DOF
        assert out is b

    def test_refuses_gated_out_fix(self):
        fix = AidingFix(position=np.zeros(2), cov=np.eye(2), time=0.0,
                        variability=0.0, accepted=False)
        with pytest.raises(ValueError):
            ukf_update(belief(), fix, FusionParams())


class TestApplyBatch:
    def make_estimate(self, positions, times, pos_cov=25.0):
        states = [
            KinematicState(x=np.array([p[0], p[1], 22.0, 0.0]),
                           cov=np.diag([pos_cov, pos_cov, 0.01, 0.01]))
            for p in positions
        ]
        return estimate_from_states(states, times)

    def test_standard_applies_single_update(self):
        est = self.make_estimate([(10.0, 0.0), (230.0, 5.0)], [10.0, 20.0])
        b = belief(time=20.0)
        params = FusionParams(nis_gate=None)
        res = apply_batch(b, est, "standard", [1.0, 1.0], params)
        assert len(res.fixes) == 1
        assert res.n_accepted == 1
        assert res.effective

    def test_retrodiction_applies_all_fixes(self):
        est = self.make_estimate([(10.0, 0.0), (120.0, 1.0), (230.0, 2.0)],
                                 [10.0, 20.0, 30.0])
        b = belief(time=10.0)
        params = FusionParams(nis_gate=None)
        calls = []

        def advance(bel, t_target):
            calls.append(t_target)
            return NavBelief(state=bel.state, cov=bel.cov, time=t_target)

        res = apply_batch(b, est, "retrodiction", [1.0, 1.0, 1.0], params,
                          advance=advance)
        assert res.n_accepted == 3
        assert calls == [20.0, 30.0]
        assert res.belief.time == 30.0

    def test_modes_agree_on_single_effective_fix(self):
        est = self.make_estimate([(10.0, 0.0), (230.0, 5.0)], [10.0, 20.0])
        params = FusionParams(nis_gate=None, variability_threshold=0.05)
        variabilities = [0.0, 1.0]  # first fix gated out
        std = apply_batch(belief(time=20.0), est, "standard", variabilities, params)
        retro = apply_batch(belief(time=20.0), est, "retrodiction", variabilities, params)
        assert (std.belief.state == retro.belief.state).all()
        assert (std.belief.cov == retro.belief.cov).all()

    def test_all_fixes_rejected_leaves_belief_unchanged(self):
        est = self.make_estimate([(10.0, 0.0), (230.0, 5.0)], [10.0, 20.0])
        b = belief(time=20.0)
        params = FusionParams(variability_threshold=0.5)
        res = apply_batch(b, est, "standard", [0.0, 0.01], params)
        assert not res.effective
        assert res.belief is b
        assert not res.fixes[0].accepted

    def test_variability_inflates_fix_cov(self):
        est = self.make_estimate([(10.0, 0.0), (230.0, 5.0)], [10.0, 20.0])
        params = FusionParams(nis_gate=None)
        res = apply_batch(belief(time=20.0), est, "standard", [1.0, 0.5], params)
        assert np.allclose(res.fixes[0].cov, 2.0 * 25.0 * np.eye(2))

    def test_unknown_mode_rejected(self):
        est = self.make_estimate([(10.0, 0.0), (230.0, 5.0)], [10.0, 20.0])
        with pytest.raises(ValueError):
            apply_batch(belief(time=20.0), est, "sideways", [1.0, 1.0], FusionParams())
