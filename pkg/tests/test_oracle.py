import numpy as np
import pytest

from mot_envelope import (
    SpreadParams,
    ValidationError,
    call_spread,
    call_spread_strategy,
    call_spread_value,
    solve_recursive,
    spread_value,
)
from mot_envelope.oracle import spread_case, surface

from conftest import ATOMS3, SPREADS


@pytest.mark.parametrize(
    "k1,k2,beta,gamma,value,case",
    [
        (-0.1, 0.5, 0.1, 0.75, 0.6, "i"),
        (-0.1, 0.5, 0.2, 0.3, 0.32, "ii"),
        (0.0, 0.5, 0.4, 0.2, 0.2, "iii"),
        (-0.1, 0.5, 0.5, 0.2, 0.27, "iv"),
    ],
)
def test_case_values(k1, k2, beta, gamma, value, case):
    p = SpreadParams(k1, k2, beta, gamma)
    assert p.case == case
    assert call_spread_value(p) == pytest.approx(value, abs=1e-12)


@pytest.mark.parametrize(
    "args", [(-0.1, 0.5, 0.0, 0.3), (-0.1, 0.5, 0.5, 0.5), (0.6, 0.5, 0.2, 0.3), (-1.0, 0.5, 0.2, 0.3), (0.0, 1.0, 0.2, 0.3)]
)
def test_invalid_params(args):
    with pytest.raises(ValidationError):
        SpreadParams(*args)


def test_derived_constants():
    p = SpreadParams(-0.1, 0.5, 0.2, 0.3)
    assert p.s_m101 == pytest.approx(-0.2)
    assert p.s_01 == pytest.approx(0.6)
    assert p.eta0 == pytest.approx(0.5)


class TestStrategy:
    def test_case_ii(self):
        s = call_spread_strategy(SpreadParams(-0.1, 0.5, 0.2, 0.3))
        assert s.eta == pytest.approx(1 / 30, abs=1e-15)
        assert s.splits[0].probability == pytest.approx(8 / 15, abs=1e-15)
        assert sum(sm.probability for sm in s.splits) == pytest.approx(1.0, abs=1e-15)
        assert s.exit_intervals == ((-1.0, 0.5),)
        assert s.control == pytest.approx((-1 - 2 / 3, 2 / 3, 1.0))
        # the three-atom measure has mean K2, the other is the Dirac at -1
        assert s.splits[0].mean == pytest.approx(0.5)
        assert s.splits[1].weights == (1.0, 0.0, 0.0)
        assert s.split_value(-0.1, 0.5) == pytest.approx(0.32, abs=1e-12)

    def test_case_ii_equals_exit_value(self):
        p = SpreadParams(-0.1, 0.5, 0.2, 0.3)
        s = call_spread_strategy(p)
        # driving M from s_m101 until it exits (-1, K2)
        m0, (lo, hi) = p.s_m101, s.exit_intervals[0]
        p_hi = (m0 - lo) / (hi - lo)
        assert p_hi * (0.5 + 0.1) == pytest.approx(call_spread_value(p), abs=1e-12)

    @pytest.mark.parametrize("k1,k2,beta,gamma", [(0.0, 0.5, 0.4, 0.2), (0.1, 0.8, 0.3, 0.3)])
    def test_case_iii(self, k1, k2, beta, gamma):
        s = call_spread_strategy(SpreadParams(k1, k2, beta, gamma))
        assert s.case == "iii"
        assert s.eta == pytest.approx(gamma * (1 - k2) / k2)
        assert sum(sm.probability for sm in s.splits) == pytest.approx(1.0)
        assert s.splits[0].mean == pytest.approx(k2)
        assert s.split_value(k1, k2) == pytest.approx(s.value, abs=1e-12)

    def test_case_iv_decomposition(self):
        k1, k2, b, g = -0.1, 0.5, 0.5, 0.2
        s = call_spread_strategy(SpreadParams(k1, k2, b, g))
        assert s.case == "iv"
        eta = g * (1 - k2) / k2
        assert g * (k2 - k1) / k2 + (b - eta) * (-k1) == pytest.approx(g * (1 - k1) - b * k1, abs=1e-14)
        assert len(s.splits) == 3
        assert s.split_value(k1, k2) == pytest.approx(s.value, abs=1e-12)
        assert s.exit_intervals[1] == (-1.0, 0.0)

    def test_case_i_stops(self):
        s = call_spread_strategy(SpreadParams(-0.1, 0.5, 0.1, 0.75))
        assert s.control is None and len(s.splits) == 1


def test_vectorised_and_closed_simplex():
    beta = np.array([0.0, 1.0, 0.0, 0.2])
    gamma = np.array([0.0, 0.0, 1.0, 0.3])
    v = spread_value(-0.1, 0.5, beta, gamma)
    assert v.shape == (4,)
    # vertices: f(-1) = 0, f(0) = 0.1, f(1) = 0.6
    assert np.allclose(v[:3], [0.0, 0.1, 0.6])
    with pytest.raises(ValidationError):
        spread_value(-0.1, 0.5, 0.7, 0.7)


def test_surface():
    beta, gamma, fbar, value, case = surface(-0.1, 0.5, 10)
    assert len(beta) == 66
    assert np.all(value >= fbar - 1e-15)
    assert set(np.unique(case)) <= {"i", "ii", "iii", "iv"}


def test_case_labels_vectorised():
    assert list(spread_case(0.0, 0.5, [0.1, 0.4], [0.75, 0.2])) == ["i", "iii"]


@pytest.mark.parametrize("method", ["hull", "obstacle"])
@pytest.mark.parametrize("k1,k2", SPREADS)
def test_solvers_match_oracle_on_sweep(k1, k2, method):
    sol = solve_recursive(ATOMS3, call_spread(k1, k2), 50, method)
    fld = sol[ATOMS3.full_face()]
    nodes = fld.grid.nodes
    err = np.abs(fld.values - spread_value(k1, k2, nodes[:, 1], nodes[:, 2]))
    assert err.max() <= 2e-2
