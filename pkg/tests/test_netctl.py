import math

import numpy as np
import pytest

from driftlab import drift, netctl
from driftlab.chains import simulate
from driftlab.netctl import (CoderParams, GranularSuccessPolicy, NetState, PlantParams,
                             as_kernel, batch_run, drift_ratio_of_intertime, epsilon_budget,
                             granular_success_times, intertime_table, make_state, quantize,
                             rate_variables, receiver_view, stability_margin, step,
                             validate_params, verify_intertime_tails, zoom_ratio)
from driftlab.streams import stream

PLANT = PlantParams(a=2.0, b=1.0, noise_std=0.1)
CODER = CoderParams(K=3, Delta0=1.0, alpha=0.7, delta_zoom=0.1, L=1.0, p=0.9)


class TestParams:
    def test_plant_gates(self):
        with pytest.raises(ValueError):
            PlantParams(a=0.5, b=1.0, noise_std=0.1)
        with pytest.raises(ValueError):
            PlantParams(a=2.0, b=0.0, noise_std=0.1)

    def test_coder_gates(self):
        with pytest.raises(ValueError):
            CoderParams(K=1, Delta0=1.0, alpha=0.7, delta_zoom=0.1, L=1.0, p=0.9)
        with pytest.raises(ValueError):
            CoderParams(K=3, Delta0=1.0, alpha=1.2, delta_zoom=0.1, L=1.0, p=0.9)

    def test_joint_zoom_constraints(self):
        validate_params(PLANT, CODER)
        # alpha below |a|/K violates the zoom-in region condition
        with pytest.raises(ValueError, match="alpha"):
            validate_params(PLANT, CoderParams(K=3, Delta0=1.0, alpha=0.6,
                                               delta_zoom=0.1, L=1.0, p=0.9))
        # lossy channel: too many zoom-outs per success
        with pytest.raises(ValueError, match="zoom-out"):
            validate_params(PLANT, CoderParams(K=3, Delta0=1.0, alpha=0.95,
                                               delta_zoom=0.1, L=1.0, p=0.35))


class TestQuantizer:
    def test_reference_points(self):
        assert quantize(-0.3, 2, 1.0) == -0.5
        assert quantize(1.0, 2, 1.0) == 0.5   # right edge belongs to the top bin
        assert quantize(3.0, 2, 1.0) == 0.0   # overflow value

    def test_granular_accuracy(self):
        # error at most Delta/2 anywhere inside the granular region,
        # including all bin boundaries
        rng = np.random.default_rng(0)
        for K, Delta in ((2, 1.0), (3, 0.25), (8, 2.0)):
            xs = rng.uniform(-K * Delta / 2, K * Delta / 2, 100_000)
            edges = np.array([(k - K / 2.0) * Delta for k in range(K + 1)])
            for x in np.concatenate([xs, edges]):
                q = quantize(float(x), K, Delta)
                assert abs(q - x) <= Delta / 2 + 1e-12

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            quantize(float("nan"), 2, 1.0)

    def test_rate_variables(self):
        rv = rate_variables(3)
        assert rv["R"] == pytest.approx(2.0)
        assert rv["Rprime"] == pytest.approx(math.log2(3.0))
        rv2 = rate_variables(2)
        assert rv2["R"] == pytest.approx(math.log2(3.0))
        assert rv2["Rprime"] == 1.0
        with pytest.raises(ValueError):
            rate_variables(1)


class TestZoomRatio:
    def test_three_branches(self):
        assert zoom_ratio(10.0, 2.0, 1, PLANT, CODER) == abs(PLANT.a) + CODER.delta_zoom
        assert zoom_ratio(10.0, 0.5, 0, PLANT, CODER) == abs(PLANT.a) + CODER.delta_zoom
        assert zoom_ratio(10.0, 0.5, 1, PLANT, CODER) == CODER.alpha
        assert zoom_ratio(0.5, 0.5, 1, PLANT, CODER) == 1.0


class TestStep:
    def test_erasure_goes_open_loop_and_zooms_out(self):
        s = make_state(3.0, 10.0, PLANT, CODER)
        nxt, rec = step(s, PLANT, CODER, None, upsilon=0, w=0.25)
        assert rec["u"] == 0.0
        assert nxt.x == PLANT.a * 3.0 + 0.25
        assert nxt.Delta == pytest.approx((abs(PLANT.a) + CODER.delta_zoom) * 10.0)
        assert rec["q_prime"] is None

    def test_noiseless_success_contracts(self):
        # granular success with w = 0: |x+| = |a| |x - Q(x)| <= |a| Delta / 2
        rng = np.random.default_rng(3)
        for _ in range(200):
            x = rng.uniform(-15.0, 15.0)
            s = make_state(x, 10.0, PLANT, CODER)
            nxt, rec = step(s, PLANT, CODER, None, upsilon=1, w=0.0)
            if not rec["overflow"]:
                assert abs(nxt.x) <= abs(PLANT.a) * 10.0 / 2 + 1e-9

    def test_overflow_with_success_transmits_overflow_symbol(self):
        s = make_state(100.0, 1.0, PLANT, CODER)
        nxt, rec = step(s, PLANT, CODER, None, upsilon=1, w=0.0)
        assert rec["overflow"]
        assert rec["q_prime"] == netctl.OVERFLOW_SYMBOL
        assert rec["u"] == 0.0  # decoded to 0, open loop
        assert not rec["granular_success"]
        assert nxt.Delta == pytest.approx(2.1 * 1.0)

    def test_ratio_closure_exact_on_long_run(self):
        # counter bookkeeping: every consecutive Delta pair differs by exactly
        # one application of one of the three factors; counter folds preserve
        # the value to one rounding
        kern = as_kernel(PLANT, CODER)
        s = make_state(0.0, 64.0, PLANT, CODER)
        traj = simulate(kern, s, 3000, 12)
        z = abs(PLANT.a) + CODER.delta_zoom
        folds = 0
        for a, b in zip(traj.states[:-1], traj.states[1:]):
            di, do = b.zoom_in - a.zoom_in, b.zoom_out - a.zoom_out
            if di < 0 or do < 0:  # fold epoch boundary
                folds += 1
                assert b.zoom_in + b.zoom_out == 0
                assert b.Delta == pytest.approx(a.Delta * min(z, max(CODER.alpha, b.Delta / a.Delta)), rel=1e-12)
                continue
            assert (di, do) in ((1, 0), (0, 1), (0, 0))
            if a.Delta0 == b.Delta0:
                factor = {(1, 0): CODER.alpha, (0, 1): z, (0, 0): 1.0}[(di, do)]
                assert b.Delta == pytest.approx(a.Delta * factor, rel=1e-12)
        assert folds >= 1  # 3000 steps force at least one fold


class TestStoppingTimes:
    def test_all_success_all_granular(self):
        events = [{"granular_success": True} for _ in range(6)]
        assert granular_success_times(events) == [0, 1, 2, 3, 4, 5]

    def test_no_success_only_origin(self):
        events = [{"granular_success": False} for _ in range(6)]
        assert granular_success_times(events) == [0]

    def test_synthetic_marks(self):
        events = [{"granular_success": t in (3, 7)} for t in range(9)]
        assert granular_success_times(events) == [0, 3, 7]

    def test_time_zero_success_not_a_stopping_time(self):
        events = [{"granular_success": t == 0} for t in range(4)]
        assert granular_success_times(events) == [0]


class TestReceiverView:
    def test_deducibility_over_run(self):
        kern = as_kernel(PLANT, CODER)
        s = make_state(0.0, 4.0, PLANT, CODER)
        traj = simulate(kern, s, 20_000, 77)
        mismatches = 0
        for rec in traj.records:
            view = receiver_view(rec)
            if rec["q_prime"] is not None:
                if view["upsilon"] != rec["Upsilon"] or view["overflow"] != rec["overflow"]:
                    mismatches += 1
            else:
                assert not view["upsilon_known"]
        assert mismatches == 0


class TestAnalyticMargins:
    def test_margin_reference_point(self):
        assert stability_margin(2, 0.9, 2) == 0.8

    def test_margin_limits(self):
        assert stability_margin(2.0, 0.999, 12) < 0.01
        assert stability_margin(2.0, 0.0, 2) == pytest.approx(4.0)

    def test_epsilon_budget_value(self):
        # 1 - 0.9 * 0.49 / (1 - 0.1 * 4.41)
        assert epsilon_budget(CODER, 2.0) == pytest.approx(0.21109123434704857, abs=1e-12)

    def test_epsilon_budget_perfect_channel_limit(self):
        near_one = CoderParams(K=3, Delta0=1.0, alpha=0.7, delta_zoom=0.1, L=1.0, p=0.999)
        assert epsilon_budget(near_one, 2.0) == pytest.approx(1 - 0.7 ** 2, abs=5e-3)

    def test_epsilon_budget_gate(self):
        bad = CoderParams(K=3, Delta0=1.0, alpha=0.7, delta_zoom=0.1, L=1.0, p=0.5)
        with pytest.raises(ValueError, match="zoom-out"):
            epsilon_budget(bad, 2.0)


class TestKernelAdapter:
    def test_kernel_matches_native_loop(self):
        kern = as_kernel(PLANT, CODER)
        s0 = make_state(0.3, 7.0, PLANT, CODER)
        traj = simulate(kern, s0, 200, 31)
        rng = stream(31)
        s = s0
        for t in range(200):
            s, _ = step(s, PLANT, CODER, rng)
            assert s.x == traj.states[t + 1].x
            assert s.Delta == traj.states[t + 1].Delta

    def test_forced_first_success(self):
        kern = as_kernel(PLANT, CODER, first_step_success=True)
        for seed in range(20):
            traj = simulate(kern, make_state(0.0, 100.0, PLANT, CODER), 3, seed)
            assert traj.records[0]["Upsilon"] == 1

    def test_batch_matches_scalar_on_single_trajectory(self):
        # the vectorized runner consumes the stream exactly like the scalar
        # loop when n_traj = 1.  The two Delta representations (sequential
        # multiplies vs counter powers) differ by ulps which the unstable
        # plant doubles every step, so pathwise agreement is only meaningful
        # over a short horizon; statistics are cross-validated elsewhere.
        horizon = 15
        run = batch_run(PLANT, CODER, 1, horizon, 123, Delta_init=16.0,
                        x0_sampler=lambda rng, n: rng.normal(0.0, 1.0, n))
        rng = stream(123, 0xB0)
        x0 = rng.normal(0.0, 1.0, 1)[0]
        s = make_state(x0, 16.0, PLANT, CODER)
        for t in range(horizon):
            ups = int(rng.random(1)[0] < CODER.p)
            w = rng.normal(0.0, PLANT.noise_std, 1)[0]
            s, rec = step(s, PLANT, CODER, None, upsilon=ups, w=w)
            assert abs(run["x"][t + 1, 0] - s.x) <= 1e-10 * max(s.Delta, 1.0)
            assert run["Delta"][t + 1, 0] == pytest.approx(s.Delta, rel=1e-12)
            assert bool(run["granular_success"][t, 0]) == rec["granular_success"]


class TestBlockStructure:
    def test_block_ratio_identity_off_small_set(self):
        # V(end)/V(start) = (alpha z^(dT-1))^2 exactly for every block that
        # starts above the floor region
        kern = as_kernel(PLANT, CODER)
        polg = GranularSuccessPolicy()
        ratio = drift_ratio_of_intertime(PLANT, CODER)
        traj = simulate(kern, make_state(0.0, 1e6, PLANT, CODER), 60, 5)
        times, _ = polg.times(traj)
        for t0, t1 in zip(times, times[1:]):
            d0, d1 = traj.states[t0].Delta, traj.states[t1].Delta
            if d0 <= 10.0 * CODER.L:
                continue
            assert d1 ** 2 / d0 ** 2 == pytest.approx(ratio(t1 - t0), rel=1e-9)

    def test_intertime_lower_tail_bound(self):
        # P(dT >= k) >= (1-p)^(k-1): failures include all erasures
        run = batch_run(PLANT, CODER, 400, 400, 3, Delta_init=1e5)
        table = intertime_table(run)
        rep = verify_intertime_tails(table, CODER.p, [0.0, 10.0, 1000.0], k_max=8)
        assert rep["lower_ok"]

    def test_forced_drift_ratio_near_analytic(self):
        # sampled contraction at large Delta approaches
        # p alpha^2 / (1 - (1-p) z^2) = 0.7889; the plain mean estimator is
        # heavy-tailed, so the band is wide (documented limitation)
        kern = as_kernel(PLANT, CODER, first_step_success=True)
        polg = GranularSuccessPolicy()
        spec = drift.DriftSpec(V=lambda s: s.Delta ** 2, C=lambda s: s.Delta <= 10.0,
                               lam=0.8, b=1e4)
        g = make_state(0.0, 1e5, PLANT, CODER)
        est = drift.estimate_sampled_drift(kern, polg, spec, [g], 8000,
                                           horizon=400, seed=6)
        mean_ratio = est["rows"][0]["mean"] / (1e5 ** 2)
        assert abs(mean_ratio - 0.7889) <= 0.1
