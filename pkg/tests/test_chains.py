import numpy as np
import pytest

from driftlab.chains import (FiniteKernel, FunctionKernel, StoppingPolicy, Trajectory,
                             annotate_stopping_times, hitting_time, sampled_hitting_index,
                             sampled_path, simulate, trajectory_csv)

TWO_STATE = [[0.9, 0.1], [0.2, 0.8]]


class TestKernels:
    def test_row_sum_enforced_at_construction(self):
        with pytest.raises(ValueError):
            FiniteKernel([[0.5, 0.4], [0.5, 0.5]])
        with pytest.raises(ValueError):
            FiniteKernel([[1.1, -0.1], [0.5, 0.5]])

    def test_identity_kernel_constant_path(self):
        kern = FiniteKernel(np.eye(3))
        traj = simulate(kern, 2, 10, 0)
        assert traj.states == tuple([2] * 11)

    def test_same_seed_identical_trajectory(self):
        kern = FiniteKernel(TWO_STATE)
        t1 = simulate(kern, 0, 50, 1234)
        t2 = simulate(kern, 0, 50, 1234)
        assert t1.states == t2.states

    def test_different_seed_differs(self):
        kern = FiniteKernel(TWO_STATE)
        assert simulate(kern, 0, 200, 1).states != simulate(kern, 0, 200, 2).states

    def test_rank_one_rows_match_multinomial(self):
        # all rows equal nu: the law of x_1 is exactly nu; compare the
        # empirical histogram against a 3-sigma multinomial band
        nu = np.array([0.5, 0.3, 0.2])
        kern = FiniteKernel(np.tile(nu, (3, 1)))
        n = 100_000
        counts = np.zeros(3)
        draws = kern.sample_batch(np.zeros(n, dtype=int), np.random.default_rng(5))
        for s in range(3):
            counts[s] = np.sum(draws == s)
        for s in range(3):
            sigma = np.sqrt(n * nu[s] * (1 - nu[s]))
            assert abs(counts[s] - n * nu[s]) <= 3 * sigma

    def test_invalid_initial_state(self):
        with pytest.raises(ValueError):
            simulate(FiniteKernel(TWO_STATE), 7, 5, 0)


class TestStoppingPolicies:
    def test_unit_deterministic_gives_every_step(self):
        traj = simulate(FiniteKernel(TWO_STATE), 0, 10, 3)
        ann = annotate_stopping_times(traj, StoppingPolicy.deterministic(lambda x: 1), 0)
        assert ann.stopping_times == tuple(range(11))

    def test_constant_three_progression(self):
        traj = simulate(FiniteKernel(TWO_STATE), 0, 10, 3)
        ann = annotate_stopping_times(traj, StoppingPolicy.deterministic(lambda x: 3), 0)
        assert ann.stopping_times == (0, 3, 6, 9)
        assert ann.truncated  # 12 would be next

    def test_independent_geometric_mean(self):
        # renewal inter-times ~ geometric(1/2): mean 2, var 2
        kern = FiniteKernel(TWO_STATE)
        policy = StoppingPolicy.independent(lambda rng: int(rng.geometric(0.5)))
        gaps = []
        for seed in range(200):
            traj = simulate(kern, 0, 400, seed)
            ann = annotate_stopping_times(traj, policy, seed)
            gaps.extend(np.diff(ann.stopping_times))
        gaps = np.asarray(gaps, dtype=float)
        sigma = np.sqrt(2.0 / gaps.size)
        assert abs(gaps.mean() - 2.0) <= 3 * sigma

    def test_event_triggered_exact_definition(self):
        flip = FiniteKernel([[0.0, 1.0], [1.0, 0.0]])
        traj = simulate(flip, 0, 9, 0)
        ann = annotate_stopping_times(traj, StoppingPolicy.event_triggered(lambda x: x == 0), 0)
        # path is 0,1,0,1,...; returns to 0 at even times
        assert ann.stopping_times == (0, 2, 4, 6, 8)
        for a, b in zip(ann.stopping_times, ann.stopping_times[1:]):
            hits = [t for t in range(a + 1, len(traj.states)) if traj.states[t] == 0]
            assert b == hits[0]

    def test_event_never_hit_truncates(self):
        kern = FiniteKernel(np.eye(2))
        traj = simulate(kern, 0, 10, 0)
        ann = annotate_stopping_times(traj, StoppingPolicy.event_triggered(lambda x: x == 1), 0)
        assert ann.stopping_times == (0,)
        assert ann.truncated

    def test_zero_step_policy_rejected(self):
        traj = simulate(FiniteKernel(TWO_STATE), 0, 5, 0)
        with pytest.raises(ValueError):
            annotate_stopping_times(traj, StoppingPolicy.deterministic(lambda x: 0), 0)

    def test_strictly_increasing_invariant(self):
        traj = simulate(FiniteKernel(TWO_STATE), 0, 30, 11)
        for policy_seed in range(5):
            policy = StoppingPolicy.independent(lambda rng: int(rng.integers(1, 4)))
            ann = annotate_stopping_times(traj, policy, policy_seed)
            ts = ann.stopping_times
            assert ts[0] == 0
            assert all(b > a for a, b in zip(ts, ts[1:]))


class TestHittingAndSampling:
    def test_constant_path_in_A(self):
        traj = simulate(FiniteKernel(np.eye(2)), 0, 10, 0)
        assert hitting_time(traj, lambda x: x == 0) == 1

    def test_simple_path(self):
        traj = Trajectory(states=(0, 1, 2), seed=0, kernel_id="synthetic")
        assert hitting_time(traj, lambda x: x == 2) == 2

    def test_flip_flop_return(self):
        flip = FiniteKernel([[0.0, 1.0], [1.0, 0.0]])
        traj = simulate(flip, 0, 10, 0)
        assert hitting_time(traj, lambda x: x == 0) == 2

    def test_never_hit_returns_none(self):
        traj = simulate(FiniteKernel(np.eye(2)), 0, 10, 0)
        assert hitting_time(traj, lambda x: x == 1) is None

    def test_unit_sampling_is_identity(self):
        traj = simulate(FiniteKernel(TWO_STATE), 0, 10, 9)
        ann = annotate_stopping_times(traj, StoppingPolicy.deterministic(lambda x: 1), 0)
        assert tuple(sampled_path(ann)) == ann.states

    def test_period_two_subsampling(self):
        flip = FiniteKernel([[0.0, 1.0], [1.0, 0.0]])
        traj = simulate(flip, 0, 10, 0)
        ann = annotate_stopping_times(traj, StoppingPolicy.deterministic(lambda x: 2), 0)
        assert all(s == 0 for s in sampled_path(ann))

    def test_sampled_hitting_at_least_one(self):
        traj = simulate(FiniteKernel(TWO_STATE), 0, 50, 3)
        ann = annotate_stopping_times(traj, StoppingPolicy.deterministic(lambda x: 1), 0)
        idx = sampled_hitting_index(ann, lambda x: x == 1)
        assert idx is None or idx >= 1

    def test_event_policy_sampled_hit_equals_raw_hit(self):
        # with a constant event set E, hitting the sampled chain at B inside E
        # happens exactly at the raw hitting time
        kern = FiniteKernel(TWO_STATE)
        policy = StoppingPolicy.event_triggered(lambda x: x == 1)
        for seed in range(30):
            traj = simulate(kern, 0, 200, seed)
            ann = annotate_stopping_times(traj, policy, 0)
            raw = hitting_time(ann, lambda x: x == 1)
            idx = sampled_hitting_index(ann, lambda x: x == 1)
            if raw is None or idx is None:
                continue
            assert ann.stopping_times[idx] == raw


class TestTrajectoryPlumbing:
    def test_csv_format(self):
        traj = simulate(FiniteKernel(TWO_STATE), 0, 3, 0)
        ann = annotate_stopping_times(traj, StoppingPolicy.deterministic(lambda x: 2), 0)
        text = trajectory_csv(ann, FiniteKernel(TWO_STATE))
        lines = text.strip().split("\n")
        assert lines[0] == "t,state,is_stopping_time"
        assert len(lines) == 5
        assert lines[1].endswith(",1")  # t = 0 is a stopping time

    def test_stopping_times_must_start_at_zero(self):
        traj = simulate(FiniteKernel(TWO_STATE), 0, 5, 0)
        with pytest.raises(ValueError):
            traj.with_stopping_times([1, 3], False)
        with pytest.raises(ValueError):
            traj.with_stopping_times([0, 3, 3], False)
        with pytest.raises(ValueError):
            traj.with_stopping_times([0, 9], False)

    def test_function_kernel_wraps_sampler(self):
        base = FiniteKernel(TWO_STATE)
        hidden = FunctionKernel(lambda s, rng: base.sample(s, rng), kernel_id="hidden")
        t1 = simulate(hidden, 0, 20, 5)
        t2 = simulate(base, 0, 20, 5)
        assert t1.states == t2.states
