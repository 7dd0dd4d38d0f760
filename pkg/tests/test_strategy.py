import dataclasses
import math

import numpy as np
import pytest

from mot_envelope import (
    STOP,
    AtomGrid,
    ControlPlan,
    EnvelopePolicy,
    Face,
    ModifiedCost,
    NonPlanarError,
    ProbabilityVector,
    ValidationError,
    exit_value,
    optimal_direction,
    piecewise_linear,
    query_many,
    solve_recursive,
    stopping_rule,
)
from mot_envelope.strategy import CONTROL_NORM, exit_probabilities, snap

F3 = Face((0, 1, 2))


class TestExitValue:
    def _plan(self, v1, v2):
        return ControlPlan(z=np.array([0.5, 0.5]), direction=np.array([1.0, -1.0]) / math.sqrt(2), v1=v1, v2=v2)

    @staticmethod
    def _endpoint(plan):
        # 0 at z1, 1 at z2
        return lambda w: 0.0 if np.allclose(w, plan.z1) else 1.0

    def test_symmetric(self):
        p = self._plan(-0.1, 0.1)
        assert exit_value(p.z, p, self._endpoint(p)) == pytest.approx(0.5)

    def test_asymmetric(self):
        p = self._plan(-0.1, 0.3)
        assert exit_value(p.z, p, self._endpoint(p)) == pytest.approx(0.25)

    def test_at_z1(self):
        p = self._plan(-0.1, 0.3)
        assert exit_value(p.z1, p, self._endpoint(p)) == 0.0

    def test_off_segment(self):
        p = self._plan(-0.1, 0.3)
        with pytest.raises(ValidationError):
            exit_value(np.array([0.2, 0.8]), p, self._endpoint(p))
        with pytest.raises(ValidationError):
            exit_value(np.array([0.4, 0.6, 0.0]), p, self._endpoint(p))

    @pytest.mark.parametrize("v1,v2", [(-1, 1), (-1, 3), (0, 2), (-2, 0), (-1e-9, 7.0)])
    def test_probabilities(self, v1, v2):
        p1, p2 = exit_probabilities(v1, v2)
        assert 0 <= p1 <= 1 and 0 <= p2 <= 1
        assert p1 + p2 == 1.0

    def test_probabilities_order(self):
        with pytest.raises(ValidationError):
            exit_probabilities(1.0, 2.0)


class TestStoppingRule:
    def test_vertex(self, spread_solution):
        _, fld, fbar = spread_solution
        assert stopping_rule(fld, fbar, np.array([0.0, 1.0, 0.0]))

    def test_case_i(self, spread_solution):
        _, fld, fbar = spread_solution
        assert stopping_rule(fld, fbar, np.array([0.15, 0.1, 0.75]))

    def test_case_ii_continues(self, spread_solution):
        _, fld, fbar = spread_solution
        assert not stopping_rule(fld, fbar, np.array([0.5, 0.2, 0.3]))


class TestOptimalDirection:
    def test_contact_stops(self, spread_solution):
        _, fld, fbar = spread_solution
        assert optimal_direction(fld, fbar, np.array([0.15, 0.1, 0.75])) is STOP
        assert not STOP

    def test_case_ii_plan(self, spread_solution):
        _, fld, fbar = spread_solution
        z = np.array([0.5, 0.2, 0.3])
        plan = optimal_direction(fld, fbar, z)
        assert abs(plan.direction.sum()) < 1e-12
        assert np.linalg.norm(plan.control) == pytest.approx(CONTROL_NORM)
        assert plan.v1 < 0 < plan.v2
        # the envelope is affine along the chosen segment
        ts = np.linspace(plan.v1, plan.v2, 41)
        vals = query_many(fld, np.clip(z + ts[:, None] * plan.direction, 0, None))
        chord = np.interp(ts, [plan.v1, plan.v2], [vals[0], vals[-1]])
        assert np.max(np.abs(vals - chord)) <= 5e-3
        assert exit_value(z, plan, fld) == pytest.approx(0.32, abs=5e-3)

    def test_paper_direction_is_flat_too(self, spread_solution):
        # the closed-form direction (-1 - b/g, b/g, 1) also lies in the planar region
        _, fld, _ = spread_solution
        z = np.array([0.5, 0.2, 0.3])
        d = np.array([-1 - 2 / 3, 2 / 3, 1.0])
        d /= np.linalg.norm(d)
        ts = np.linspace(-0.05, 0.05, 11)
        vals = query_many(fld, z + ts[:, None] * d)
        assert np.ptp(np.diff(vals)) <= 1e-3

    def test_one_dimensional_chord(self):
        g = AtomGrid((0.0, 1.0))
        f = piecewise_linear([(0, 0.5), (0.5, 0.0), (1, 0.5)])  # |z - 0.5| on the edge
        fld = solve_recursive(g, f, 40)[Face((0, 1))]
        fbar = ModifiedCost(g, Face((0, 1)), f)
        plan = optimal_direction(fld, fbar, np.array([0.5, 0.5]))
        ends = sorted([plan.z1.tolist(), plan.z2.tolist()])
        assert np.allclose(ends, [[0.0, 1.0], [1.0, 0.0]], atol=1e-9)

    def test_wrong_face(self, spread_solution):
        _, fld, fbar = spread_solution
        with pytest.raises(ValidationError):
            optimal_direction(fld, fbar, np.array([0.5, 0.5]))

    def test_non_planar_flagged(self):
        # a strictly concave field well above the payoff has no flat direction
        g = AtomGrid((-1.0, 0.0, 1.0))
        f = piecewise_linear([(-0.1, 0.0), (0.5, 0.6)])
        fld = solve_recursive(g, f, 10)[F3]
        curved = 5.0 - 20.0 * np.sum((fld.grid.nodes - 1 / 3) ** 2, axis=1)
        fld = dataclasses.replace(fld, values=curved)
        with pytest.raises(NonPlanarError):
            optimal_direction(fld, ModifiedCost(g, F3, f), np.array([0.4, 0.3, 0.3]))

    def test_negative_tol_planar(self, spread_solution):
        _, fld, fbar = spread_solution
        with pytest.raises(ValidationError):
            optimal_direction(fld, fbar, np.array([0.5, 0.2, 0.3]), tol_planar=-1.0)

    def test_json(self, spread_solution):
        _, fld, fbar = spread_solution
        data = optimal_direction(fld, fbar, ProbabilityVector(F3, (0.5, 0.2, 0.3))).to_json()
        assert set(data) == {"z", "direction", "z1", "z2", "p_hit_z1", "value"}
        assert data["value"] == pytest.approx(0.32, abs=5e-3)


class TestPolicy:
    def test_exact_value_matches_envelope(self, spread_solution, rng):
        _, fld, fbar = spread_solution
        pol = EnvelopePolicy(fld, fbar)
        for _ in range(10):
            z = rng.dirichlet(np.ones(3))
            assert pol.value(z) == pytest.approx(query_many(fld, z[None])[0], abs=5e-3)

    def test_stage_tree_terminates_and_is_martingale(self, spread_solution):
        _, fld, fbar = spread_solution
        pol = EnvelopePolicy(fld, fbar)
        z = np.array([0.5, 0.2, 0.3])
        leaves = pol.stage_tree(z)
        probs = np.array([p for p, _, _ in leaves])
        pts = np.array([pt for _, pt, _ in leaves])
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(probs @ pts, z, atol=1e-9)

    def test_at_most_n_stages(self, spread_solution, rng):
        # every stage either stops or drops to a lower face; N = 2 here
        _, fld, fbar = spread_solution
        pol = EnvelopePolicy(fld, fbar)
        for z in rng.dirichlet(np.ones(3), 20):
            assert max(d for _, _, d in pol.stage_tree(z)) <= 2

    def test_plan_is_memoised(self, spread_solution):
        _, fld, fbar = spread_solution
        pol = EnvelopePolicy(fld, fbar)
        z = np.array([0.5, 0.2, 0.3])
        assert pol.plan(z) is pol.plan(z.copy())


def test_snap():
    w = snap(np.array([0.5, 1e-14, 0.5]))
    assert w[1] == 0.0 and w.sum() == 1.0
