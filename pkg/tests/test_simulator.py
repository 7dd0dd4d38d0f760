import math

import numpy as np
import pytest

from mot_envelope import (
    AtomGrid,
    ControlPlan,
    EnvelopePolicy,
    Face,
    ModifiedCost,
    PathState,
    RandomPolicy,
    ValidationError,
    mc_value,
    piecewise_linear,
    run_path,
    simulate_paths,
    step,
    time_change_map,
    verify_martingale,
)
from mot_envelope.simulator import (
    EPS_ABS,
    SegmentPolicy,
    ZeroPolicy,
    path_rng,
    trace_time_change,
    traces_to_csv,
)

F3 = Face((0, 1, 2))


class TestStep:
    def test_zero_control(self):
        s = PathState.start([0.5, 0.2, 0.3])
        out = step(s, np.zeros(3), 1e-4, 1.3)
        assert np.array_equal(out.weights, s.weights)
        assert out.r == pytest.approx(1e-4)

    def test_dirac(self):
        s = PathState.start([0.0, 1.0, 0.0])
        assert s.absorbed.all()
        out = step(s, np.zeros(3), 1e-4, -0.7)
        assert np.array_equal(out.weights, s.weights)
        with pytest.raises(ValidationError):
            step(s, np.array([0.5, -0.5, 0.0]), 1e-4, 0.1)

    def test_exact_sum(self, rng):
        s = PathState.start([0.3, 0.3, 0.4])
        base = np.array([0.6, -0.2, -0.4])
        for g in rng.standard_normal(2000):
            w = np.where(s.absorbed, 0.0, base)
            if not s.absorbed.all():
                w[~s.absorbed] -= w[~s.absorbed].mean()
            n = np.linalg.norm(w)
            w = 0.9 * w / n if n > 0 else w
            s = step(s, w, 1e-3, g)
            assert math.fsum(s.weights) == 1.0 and np.all(s.weights >= 0)

    @pytest.mark.parametrize(
        "w", [np.array([0.5, 0.5, 0.0]), np.array([2.0, -1.0, -1.0]), np.array([0.0, 0.5, -0.5])]
    )
    def test_invalid_control(self, w):
        s = PathState.start([0.5, 0.0, 0.5])
        with pytest.raises(ValidationError):
            step(s, w, 1e-4, 1.0)

    def test_clamp_shortens_step(self):
        s = PathState.start([0.5, 0.49, 0.01])
        w = np.array([0.0, 0.9, -0.9]) / math.sqrt(2)
        out = step(s, w, 1e-2, 1.0)
        assert out.weights[2] == 0.0 and out.absorbed[2]
        inc = w[2] * math.sqrt(1e-2)
        assert out.r == pytest.approx(1e-2 * 0.01 / -inc)

    def test_absorption_permanent(self, rng):
        s = PathState.start([0.5, 0.5 - 1e-10, 1e-10])
        s = step(s, np.array([0.0, 0.9, -0.9]) / math.sqrt(2), 1e-4, 1.0)
        assert s.absorbed[2]
        for g in rng.standard_normal(50):
            s = step(s, np.array([0.9, -0.9, 0.0]) / math.sqrt(2), 1e-4, g)
            assert s.weights[2] == 0.0

    def test_hits_one(self):
        s = PathState.start([1 - 5e-10, 5e-10, 0.0])
        out = step(s, np.array([0.9, -0.9, 0.0]) / math.sqrt(2), 1e-4, 1.0)
        assert np.array_equal(out.weights, [1.0, 0.0, 0.0])
        assert out.absorbed.all()
        assert EPS_ABS == 1e-9


@pytest.fixture(scope="module")
def spread_policy(spread_solution):
    _, fld, fbar = spread_solution
    return EnvelopePolicy(fld, fbar)


class TestRunPath:
    def test_contact_stops_immediately(self, spread_policy):
        res = run_path(spread_policy, [0.15, 0.1, 0.75], (0, 0))
        assert res.stages == 0 and res.r == 0.0
        assert res.value == pytest.approx(0.6)

    @pytest.mark.parametrize("i,value", [(0, 0.0), (1, 0.1), (2, 0.6)])
    def test_dirac(self, spread_policy, i, value):
        res = run_path(spread_policy, np.eye(3)[i], (0, 0))
        assert res.value == pytest.approx(value) and res.stages == 0

    def test_case_ii_stopping_points(self, spread_policy):
        batch = simulate_paths(spread_policy, [0.5, 0.2, 0.3], 2000, 11)
        pts = batch.points
        at_minus_one = np.all(np.abs(pts - [1.0, 0.0, 0.0]) <= 1e-9, axis=1)
        means = pts @ np.array([-1.0, 0.0, 1.0])
        # every other stop sits on the contact line s = K2 (up to grid error)
        assert np.all(np.abs(means[~at_minus_one] - 0.5) <= 0.03)
        p = at_minus_one.mean()
        se = math.sqrt(p * (1 - p) / len(pts))
        assert abs(p - 7 / 15) <= 3 * se + 5e-3

    def test_matches_stepwise_reference(self, spread_policy):
        for i in range(15):
            a = run_path(spread_policy, [0.5, 0.2, 0.3], (5, i))
            b = run_path(spread_policy, [0.5, 0.2, 0.3], (5, i), stepwise=True)
            assert np.allclose(a.point, b.point, atol=1e-12)
            assert a.r == pytest.approx(b.r, abs=1e-9)

    def test_max_length(self, spread_policy):
        res = run_path(spread_policy, [0.5, 0.2, 0.3], (0, 1), max_steps=10)
        assert res.status == "max_length"

    def test_trace(self, spread_policy):
        res = run_path(spread_policy, [0.5, 0.2, 0.3], (0, 2), record=True)
        assert len(res.trace) == res.stages
        r_end = [row[2] for row in res.trace]
        assert r_end[-1] == pytest.approx(res.r)


class TestMcValue:
    def test_constant_payoff(self):
        g = AtomGrid((-1.0, 0.0, 1.0))
        fbar = ModifiedCost(g, F3, piecewise_linear([(0, 0.7)]))
        est = mc_value(RandomPolicy(fbar, seed=1), [0.3, 0.3, 0.4], 200, 0, dt=1e-3)
        assert est.mean == pytest.approx(0.7, abs=1e-15)
        assert est.std_error <= 1e-15

    def test_symmetric_two_point_exit(self):
        g = AtomGrid((0.0, 1.0))
        face = Face((0, 1))
        fbar = ModifiedCost(g, face, piecewise_linear([(0, 0), (1, 1)]))
        d = np.array([1.0, -1.0]) / math.sqrt(2)
        plan = ControlPlan(z=np.array([0.5, 0.5]), direction=d, v1=-0.5, v2=0.5)
        batch = simulate_paths(SegmentPolicy(plan, fbar), plan.z, 4000, 3, dt=1e-3)
        hit1 = np.mean(np.all(np.abs(batch.points - plan.z1) < 1e-9, axis=1))
        assert abs(hit1 - 0.5) <= 3 * math.sqrt(0.25 / 4000)

    def test_needs_100_paths(self, spread_policy):
        with pytest.raises(ValidationError):
            mc_value(spread_policy, [0.5, 0.2, 0.3], 99, 0)

    def test_deterministic(self, spread_policy):
        a = mc_value(spread_policy, [0.5, 0.2, 0.3], 200, 9)
        b = mc_value(spread_policy, [0.5, 0.2, 0.3], 200, 9)
        assert a == b

    def test_order_independent(self, spread_policy):
        batch = simulate_paths(spread_policy, [0.5, 0.2, 0.3], 30, 4)
        single = run_path(spread_policy, [0.5, 0.2, 0.3], (4, 17))
        assert batch.values[17] == single.value

    def test_parallel_matches_serial(self, spread_policy):
        a = simulate_paths(spread_policy, [0.5, 0.2, 0.3], 40, 8)
        b = simulate_paths(spread_policy, [0.5, 0.2, 0.3], 40, 8, n_jobs=2)
        assert np.array_equal(a.values, b.values)

    def test_unreliable_flag(self, spread_policy):
        est = mc_value(spread_policy, [0.5, 0.2, 0.3], 100, 0, max_steps=5)
        assert not est.reliable and est.n_rejected > 0

    def test_path_rng_streams_differ(self):
        assert path_rng(1, 0).random() != path_rng(1, 1).random()
        assert path_rng(1, 0).random() == path_rng(1, 0).random()


class TestTimeChange:
    def test_constant(self):
        w = np.array([0.5, -0.5, 0.5, -0.5]) * math.sqrt(0.5)
        tc = time_change_map([0.0, 1.0, 2.0], [w, w], horizon=10.0)
        assert np.allclose(tc.lam, 0.5)
        assert np.allclose(tc.T_r, [0.0, 0.5, 1.0])
        assert not tc.reached_horizon

    def test_zero_control(self):
        tc = time_change_map([0.0, 0.3], [np.zeros(3)], horizon=1.0)
        assert tc.lam[0] == 1.0 and tc.T_r[-1] == pytest.approx(0.3)

    def test_halts_at_dirac(self):
        w = np.array([0.6, -0.6, 0.0])
        # lambda = 0.28 on [0, 2] so the clock reaches 0.56 at the Dirac state
        tc = time_change_map([0.0, 2.0, 3.0, 4.0], [w, np.zeros(3), np.zeros(3)], 0.56, dirac=[False, True, True])
        assert tc.halted and tc.reached_horizon
        assert tc.lam[1] == 0.0 and tc.T_r[-1] == pytest.approx(0.56)
        # below the horizon a Dirac interval still runs at rate one
        tc = time_change_map([0.0, 2.0, 3.0], [w, np.zeros(3)], 5.0, dirac=[False, True])
        assert not tc.halted and tc.T_r[-1] == pytest.approx(1.56)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            time_change_map([0.0, 1.0], [np.array([1.0, -1.0])], 1.0)
        with pytest.raises(ValidationError):
            time_change_map([0.0, 1.0, 2.0], [np.zeros(2)], 1.0)

    def test_recorded_path(self, spread_policy):
        res = run_path(spread_policy, [0.5, 0.2, 0.3], (1, 3), record=True)
        tc = trace_time_change(res.trace)
        assert np.all(tc.lam == pytest.approx(1 - 0.81))
        assert np.all(np.diff(tc.T_r) > 0)
        assert tc.calendar(res.r) == pytest.approx(0.19 * res.r)


class TestMartingale:
    def test_zero_policy(self, spread_solution):
        _, _, fbar = spread_solution
        batch = simulate_paths(ZeroPolicy(fbar), [0.5, 0.2, 0.3], 1000, 0)
        rep = verify_martingale(batch.points, [0.5, 0.2, 0.3])
        assert rep.passed and np.all(rep.deviation <= 1e-14)

    def test_needs_1000(self):
        with pytest.raises(ValidationError):
            verify_martingale(np.zeros((10, 3)), [0.5, 0.2, 0.3])


def test_traces_csv(spread_policy):
    batch = simulate_paths(spread_policy, [0.5, 0.2, 0.3], 3, 0, record=True)
    lines = traces_to_csv(batch).strip().splitlines()
    assert lines[0] == "path_id,stage,r,w0,w1,w2,stopped"
    stopped = [ln for ln in lines[1:] if ln.endswith(",1")]
    assert len(stopped) == 3
    with pytest.raises(ValidationError):
        traces_to_csv(simulate_paths(spread_policy, [0.5, 0.2, 0.3], 3, 0))


def test_random_policy_admissible(spread_solution):
    _, _, fbar = spread_solution
    for seed in range(5):
        pol = RandomPolicy(fbar, seed=seed)
        batch = simulate_paths(pol, [0.0, 0.4, 0.6], 50, seed, dt=1e-3, record=True)
        for trace in batch.traces:
            for _, _, _, z, w in trace:
                assert np.all(w[z == 0] == 0)
                assert abs(w.sum()) < 1e-12 and np.linalg.norm(w) == pytest.approx(0.9)
