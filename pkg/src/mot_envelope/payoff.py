"""Payoffs on the real line and their pull-back to the probability simplex."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import AtomGrid, Face, ProbabilityVector, mean
from .exceptions import ValidationError


@dataclass(frozen=True)
class CostFunction:
    """Piecewise-linear payoff with constant extrapolation.

    ``points`` holds the breakpoints ``(s_i, f(s_i))`` with strictly
    increasing ``s_i``.  Outside ``[s_0, s_last]`` the payoff is constant,
    which keeps it bounded.  ``kind`` and ``params`` only record how the
    payoff was built so that it can be serialised again.
    """

    points: tuple[tuple[float, float], ...]
    kind: str = "pwl"
    params: tuple = ()

    def __post_init__(self):
        pts = tuple((float(s), float(v)) for s, v in self.points)
        if not pts:
            raise ValidationError("a payoff needs at least one breakpoint")
        s = np.array([p[0] for p in pts])
        v = np.array([p[1] for p in pts])
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(v))):
            raise ValidationError("breakpoints must be finite")
        if np.any(np.diff(s) <= 0):
            raise ValidationError("breakpoints must be strictly increasing in s")
        object.__setattr__(self, "points", pts)

    @property
    def s(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def v(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def __call__(self, s):
        return eval_cost(self, s)

    @property
    def value_range(self) -> float:
        v = self.v
        return float(v.max() - v.min())

    def to_json(self) -> dict:
        if self.kind == "call_spread":
            k1, k2 = self.params
            return {"type": "call_spread", "k1": k1, "k2": k2}
        if self.kind == "put_plus":
            return {"type": "put_plus", "g_points": [list(p) for p in self.params]}
        return {"type": "pwl", "points": [list(p) for p in self.points]}

    @classmethod
    def from_json(cls, data: dict) -> CostFunction:
        kind = data.get("type")
        if kind == "call_spread":
            return call_spread(data["k1"], data["k2"])
        if kind == "pwl":
            return piecewise_linear(data["points"])
        if kind == "put_plus":
            return put_plus(data["g_points"])
        raise ValidationError(f"unknown payoff type {kind!r}")


def piecewise_linear(points) -> CostFunction:
    return CostFunction(tuple(tuple(p) for p in points))


def call_spread(k1: float, k2: float) -> CostFunction:
    """``f(s) = (s - k1)^+ - (s - k2)^+``."""
    k1, k2 = float(k1), float(k2)
    if not k1 < k2:
        raise ValidationError("call spread needs k1 < k2")
    return CostFunction(((k1, 0.0), (k2, k2 - k1)), kind="call_spread", params=(k1, k2))


def put_plus(g_points) -> CostFunction:
    """Positive part ``(g)^+`` of a concave piecewise-linear ``g``.

    ``g`` uses the same constant extrapolation as every other payoff.  Zero
    crossings of ``g`` are inserted as breakpoints so that ``(g)^+`` is again
    piecewise linear on its own breakpoints.
    """
    g = piecewise_linear(g_points)
    s, v = g.s, g.v
    if len(s) > 2 and np.any(np.diff(np.diff(v) / np.diff(s)) > 1e-12):
        raise ValidationError("put_plus needs a concave g (non-increasing slopes)")
    out_s, out_v = [s[0]], [max(v[0], 0.0)]
    for i in range(len(s) - 1):
        a, b = v[i], v[i + 1]
        if a * b < 0:
            z = s[i] + (s[i + 1] - s[i]) * a / (a - b)
            out_s.append(z)
            out_v.append(0.0)
        out_s.append(s[i + 1])
        out_v.append(max(b, 0.0))
    params = tuple((float(a), float(b)) for a, b in zip(s, v))
    return CostFunction(tuple(zip(out_s, out_v)), kind="put_plus", params=params)


def eval_cost(f: CostFunction, s):
    """Evaluate the payoff at ``s`` (scalar or array)."""
    out = np.interp(s, f.s, f.v)
    return float(out) if np.ndim(out) == 0 else out


def lipschitz_constant(f: CostFunction) -> float:
    """Largest absolute segment slope."""
    if len(f.points) < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(f.v) / np.diff(f.s))))


@dataclass(frozen=True)
class ModifiedCost:
    """The payoff evaluated at the barycentre of a measure on ``face``."""

    grid: AtomGrid
    face: Face
    cost: CostFunction

    def __post_init__(self):
        self.face.check_grid(self.grid)

    @property
    def face_atoms(self) -> np.ndarray:
        return self.grid.as_array()[list(self.face.indices)]

    def __call__(self, xi: ProbabilityVector) -> float:
        return modified_cost(self, xi)

    def evaluate(self, weights) -> np.ndarray:
        """Vectorised evaluation on rows of barycentric coordinates."""
        w = np.atleast_2d(np.asarray(weights, dtype=float))
        if w.shape[1] != self.face.order:
            raise ValidationError("weights do not match the face dimension")
        return eval_cost(self.cost, w @ self.face_atoms)

    def lipschitz(self) -> float:
        """Bound on the 1-norm Lipschitz constant on the simplex."""
        return lipschitz_constant(self.cost) * float(np.max(np.abs(self.face_atoms)))

    def restricted(self, face: Face) -> ModifiedCost:
        return ModifiedCost(self.grid, face, self.cost)


def modified_cost(mc: ModifiedCost, xi: ProbabilityVector) -> float:
    """``f(x^alpha . xi^alpha)``."""
    if xi.face != mc.face:
        raise ValidationError(f"measure lives on {xi.face.indices}, cost on {mc.face.indices}")
    return eval_cost(mc.cost, mean(mc.grid, xi))
