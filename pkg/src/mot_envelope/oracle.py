"""Closed-form value and strategy for the bull call spread on atoms {-1, 0, 1}.

The terminal law is ``(1 - gamma - beta) d_{-1} + beta d_0 + gamma d_1`` and
the payoff is ``(s - K1)^+ - (s - K2)^+``.  With
``s_m101 = 2 gamma + beta - 1`` (the barycentre) and
``s_01 = gamma / (gamma + beta)`` the value is piecewise affine in
``(beta, gamma)``:

====  =================================  ====================================
case  region                             value
====  =================================  ====================================
i     ``s_m101 >= K2``                   ``K2 - K1``
ii    ``s_01 >= K2 > s_m101``            ``(2 gamma + beta)(K2 - K1)/(K2 + 1)``
iii   ``K2 > s_01``, ``K1 >= 0``         ``gamma (K2 - K1) / K2``
iv    ``K2 > s_01``, ``K1 < 0``          ``gamma (1 - K1) - beta K1``
====  =================================  ====================================
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ValidationError

ATOMS = (-1.0, 0.0, 1.0)


@dataclass(frozen=True)
class SpreadParams:
    """Strikes and initial weights; the weights must be strictly interior."""

    k1: float
    k2: float
    beta: float
    gamma: float

    def __post_init__(self):
        _check_strikes(self.k1, self.k2)
        b, g = self.beta, self.gamma
        if not (0 < b < 1 and 0 < g < 1 and b + g < 1):
            raise ValidationError("need 0 < beta, gamma and beta + gamma < 1")

    @property
    def eta0(self) -> float:
        """Weight on the atom -1."""
        return 1.0 - self.beta - self.gamma

    @property
    def s_m101(self) -> float:
        return 2 * self.gamma + self.beta - 1

    @property
    def s_01(self) -> float:
        return self.gamma / (self.gamma + self.beta)

    @property
    def case(self) -> str:
        return str(spread_case(self.k1, self.k2, self.beta, self.gamma))


def _check_strikes(k1, k2):
    if not (-1 < k1 < 1 and 0 < k2 < 1 and k1 < k2):
        raise ValidationError("need K1 in (-1, 1), K2 in (0, 1) and K1 < K2")


def spread_case(k1, k2, beta, gamma):
    """Case label(s) ``'i'``..``'iv'`` for (arrays of) weights."""
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    s = 2 * gamma + beta - 1
    with np.errstate(invalid="ignore", divide="ignore"):
        s01 = np.where(gamma + beta > 0, gamma / np.where(gamma + beta > 0, gamma + beta, 1.0), 1.0)
    low = "iii" if k1 >= 0 else "iv"
    out = np.where(s >= k2, "i", np.where(s01 >= k2, "ii", low))
    return out[()] if out.ndim == 0 else out


def spread_value(k1, k2, beta, gamma):
    """Vectorised value on the closed simplex ``beta, gamma >= 0, beta + gamma <= 1``.

    The four affine pieces extend continuously to the boundary, where they
    agree with the one-dimensional envelopes on the edges.
    """
    _check_strikes(k1, k2)
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(beta < -1e-12) or np.any(gamma < -1e-12) or np.any(beta + gamma > 1 + 1e-12):
        raise ValidationError("(beta, gamma) outside the simplex")
    case = spread_case(k1, k2, beta, gamma)
    v_i = np.full(np.shape(beta), k2 - k1)
    v_ii = (2 * gamma + beta) * (k2 - k1) / (k2 + 1)
    v_iii = gamma * (k2 - k1) / k2
    v_iv = gamma * (1 - k1) - beta * k1
    out = np.select([case == "i", case == "ii", case == "iii"], [v_i, v_ii, v_iii], v_iv)
    return float(out) if out.ndim == 0 else out


def call_spread_value(p: SpreadParams) -> float:
    return spread_value(p.k1, p.k2, p.beta, p.gamma)


@dataclass(frozen=True)
class SplitMeasure:
    """One terminal measure of the optimal split and its probability."""

    probability: float
    weights: tuple[float, float, float]  # on atoms (-1, 0, 1)

    @property
    def mean(self) -> float:
        return float(np.dot(ATOMS, self.weights))


@dataclass(frozen=True)
class SpreadStrategy:
    case: str
    eta: float | None
    control: tuple[float, float, float] | None
    exit_intervals: tuple[tuple[float, float], ...]
    splits: tuple[SplitMeasure, ...]
    value: float
    notes: dict = field(default_factory=dict)

    def split_value(self, k1: float, k2: float) -> float:
        """Expected payoff of the split, ``sum p_i f(mean_i)``."""
        f = lambda s: max(s - k1, 0.0) - max(s - k2, 0.0)  # noqa: E731
        return sum(sm.probability * f(sm.mean) for sm in self.splits)


def _normalise(w):
    w = np.asarray(w, dtype=float)
    return tuple(float(x) for x in w / w.sum())


def call_spread_strategy(p: SpreadParams) -> SpreadStrategy:
    """Optimal control direction, exit intervals of ``M`` and terminal split."""
    k2, b, g = p.k2, p.beta, p.gamma
    e0 = p.eta0
    case = p.case
    value = call_spread_value(p)
    if case == "i":
        return SpreadStrategy(
            case, None, None, (), (SplitMeasure(1.0, (e0, b, g)),), value, {"stop": "immediately"}
        )
    if case == "ii":
        # (g - eta) / (g + b + eta) = K2
        eta = (g - k2 * (g + b)) / (1 + k2)
        q = g + b + eta
        control = (-1 - b / g, b / g, 1.0)
        splits = (
            SplitMeasure(q, _normalise([eta, b, g])),
            SplitMeasure(1.0 - q, (1.0, 0.0, 0.0)),
        )
        return SpreadStrategy(
            case, eta, control, ((-1.0, k2),), splits, value, {"split_probability": (2 * g + b) / (k2 + 1)}
        )
    # cases iii and iv: g / (g + eta) = K2
    eta = g * (1 - k2) / k2
    r = (eta - b * (g + eta)) / (g - g * (g + eta))
    control = (-1 - r, r, 1.0)
    lower = -(1 - g - b) / (1 - g - eta)
    first = (
        SplitMeasure(g + eta, _normalise([0.0, eta, g])),
        SplitMeasure(1 - g - eta, _normalise([1 - b - g, b - eta, 0.0])),
    )
    if case == "iii":
        return SpreadStrategy(case, eta, control, ((lower, k2),), first, value)
    splits = (
        first[0],
        SplitMeasure(b - eta, (0.0, 1.0, 0.0)),
        SplitMeasure(1 - b - g, (1.0, 0.0, 0.0)),
    )
    return SpreadStrategy(
        case, eta, control, ((lower, k2), (-1.0, 0.0)), splits, value, {"second_stage_on": "gamma hits 0"}
    )


def surface(k1: float, k2: float, m: int):
    """Closed-form surface on the lattice ``beta = i/m, gamma = j/m``.

    Returns rows ``(beta, gamma, fbar, value, case)``.
    """
    _check_strikes(k1, k2)
    i, j = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    keep = i + j <= m
    beta, gamma = i[keep] / m, j[keep] / m
    mean = 2 * gamma + beta - 1
    fbar = np.clip(mean - k1, 0.0, k2 - k1)
    return beta, gamma, fbar, spread_value(k1, k2, beta, gamma), spread_case(k1, k2, beta, gamma)
