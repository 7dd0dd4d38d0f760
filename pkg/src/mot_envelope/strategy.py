"""Optimal controls and stopping read off a solved envelope.

Away from the contact set the envelope is affine along some segment through
the current point whose ends lie in the contact set or on the face boundary.
Driving the weights along that segment with a constant control and stopping
at the first exit reproduces the envelope value, by the two-point Brownian
exit formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .envelope import (
    DirectionSet,
    EnvelopeField,
    default_directions,
    query_many,
    tol_concave,
)
from .exceptions import NonPlanarError, ValidationError
from .measures import ProbabilityVector
from .payoff import ModifiedCost

CONTROL_NORM = 0.9
_SAMPLES_PER_CELL = 4
_REFINE_ROUNDS = 3
_REFINE_POINTS = 32


class Stop:
    """Sentinel plan: stop immediately."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "STOP"

    def __bool__(self):
        return False


STOP = Stop()


@dataclass(frozen=True, eq=False)
class ControlPlan:
    """Constant control along ``direction`` until ``z1`` or ``z2`` is hit.

    Points on the segment are ``z + t * direction`` with ``t`` in
    ``[v1, v2]``, ``v1 <= 0 <= v2``; ``z1`` sits at ``v1`` and ``z2`` at
    ``v2``.  The control is ``CONTROL_NORM * direction``.
    """

    z: np.ndarray
    direction: np.ndarray
    v1: float
    v2: float
    value1: float = math.nan
    value2: float = math.nan
    contact1: bool = False
    contact2: bool = False
    deviation: float = 0.0
    candidate: int = -1

    @property
    def z1(self) -> np.ndarray:
        return self.z + self.v1 * self.direction

    @property
    def z2(self) -> np.ndarray:
        return self.z + self.v2 * self.direction

    @property
    def control(self) -> np.ndarray:
        return CONTROL_NORM * self.direction

    @property
    def c1(self) -> float:
        """Scale with ``c1 * (z - z1) = control``; infinite when ``z = z1``."""
        return CONTROL_NORM / -self.v1 if self.v1 < 0 else math.inf

    @property
    def p_hit_z1(self) -> float:
        return exit_probabilities(self.v1, self.v2)[0]

    def to_json(self) -> dict:
        p1, _ = exit_probabilities(self.v1, self.v2)
        return {
            "z": self.z.tolist(),
            "direction": self.direction.tolist(),
            "z1": self.z1.tolist(),
            "z2": self.z2.tolist(),
            "p_hit_z1": p1,
            "value": p1 * self.value1 + (1.0 - p1) * self.value2,
        }


def exit_probabilities(v1: float, v2: float) -> tuple[float, float]:
    """Probabilities that Brownian motion from 0 leaves ``(v1, v2)`` at each end."""
    if not v1 <= 0.0 <= v2:
        raise ValidationError("need v1 <= 0 <= v2")
    if v2 == v1:
        return 1.0, 0.0
    p1 = v2 / (v2 - v1)
    return p1, 1.0 - p1


SNAP_TOL = 1e-12


def _as_weights(z) -> np.ndarray:
    if isinstance(z, ProbabilityVector):
        return np.asarray(z.weights, dtype=float)
    return np.asarray(z, dtype=float).reshape(-1)


def snap(z) -> np.ndarray:
    """Zero out weights below ``SNAP_TOL`` and renormalise."""
    w = np.array(_as_weights(z), dtype=float)
    w[w < SNAP_TOL] = 0.0
    return w / w.sum()


def _value_fn(fn) -> Callable[[np.ndarray], float]:
    if isinstance(fn, ModifiedCost):
        return lambda w: float(fn.evaluate(w[None, :])[0])
    if isinstance(fn, EnvelopeField):
        return lambda w: float(query_many(fn, w[None, :])[0])
    return fn


def exit_value(z, plan: ControlPlan, fbar) -> float:
    """Two-point exit value ``v2/(v2-v1) F(z1) + (-v1)/(v2-v1) F(z2)``.

    ``fbar`` supplies the endpoint values ``F``: a :class:`ModifiedCost`,
    an :class:`EnvelopeField` (continuation values) or any callable on
    weight vectors.
    """
    zw = _as_weights(z)
    if zw.shape != plan.z.shape:
        raise ValidationError("z and the plan live on different faces")
    t = np.dot(zw - plan.z, plan.direction)
    if np.linalg.norm(zw - (plan.z + t * plan.direction)) > 1e-9:
        raise ValidationError("z is not on the plan's line")
    v1, v2 = plan.v1 - t, plan.v2 - t
    if v1 > 1e-12 or v2 < -1e-12:
        raise ValidationError("z lies outside the plan segment")
    # within rounding of an end counts as sitting on it
    v1 = 0.0 if v1 > -1e-12 else v1
    v2 = 0.0 if v2 < 1e-12 else v2
    p1, p2 = exit_probabilities(v1, v2)
    F = _value_fn(fbar)
    out = 0.0
    if p1 > 0:
        out += p1 * F(plan.z1)
    if p2 > 0:
        out += p2 * F(plan.z2)
    return out


def default_tol_planar(field: EnvelopeField) -> float:
    tol_fp = float(field.info.get("tol_fp", 0.0) or 0.0)
    return 10.0 * tol_concave(field.fbar, tol_fp)


def interpolation_allowance(field: EnvelopeField, fbar: ModifiedCost) -> float:
    """Slack for piecewise-linear interpolation across one grid cell."""
    return 0.5 * fbar.lipschitz() / field.grid.m


def stopping_rule(field: EnvelopeField, fbar: ModifiedCost, z, tol_contact: float | None = None) -> bool:
    """True when the envelope touches the cost at ``z``."""
    zw = _as_weights(z)
    tol = field.tol_contact if tol_contact is None else tol_contact
    if np.isclose(zw.max(), 1.0, rtol=0, atol=1e-12):
        return True
    gap = query_many(field, zw[None, :])[0] - fbar.evaluate(zw[None, :])[0]
    return bool(gap <= tol)


def _gap(field, fbar, pts):
    return query_many(field, pts) - fbar.evaluate(pts)


def _candidates(field: EnvelopeField, zw: np.ndarray, dirs: DirectionSet) -> list[np.ndarray]:
    """Exchange, vertex and extra directions projected onto the support."""
    support = zw > 0
    order = len(zw)
    raw = list(dirs.vectors[: dirs.n_exchange])
    for i in range(order):
        if support[i] and zw[i] < 1.0:
            raw.append(zw - np.eye(order)[i])
    raw.extend(dirs.vectors[dirs.n_exchange :])
    out: list[np.ndarray] = []
    for d in raw:
        d = np.where(support, d, 0.0)
        if support.sum() < 2:
            break
        d[support] -= d[support].mean()
        nrm = np.linalg.norm(d)
        if nrm <= dirs.c:
            continue
        d = d / nrm
        if any(abs(abs(np.dot(d, e)) - 1.0) < 1e-9 for e in out):
            continue
        out.append(d)
    return out


_BOUNDARY_SNAP = 1e-6
_CONTACT_SNAP = 1e-4


def _max_step(zw: np.ndarray, d: np.ndarray) -> float:
    neg = d < -1e-15
    if not np.any(neg):
        return math.inf
    return float(np.min(zw[neg] / -d[neg]))


def _unit_points(zw, ray, ts):
    pts = np.clip(zw + ts[:, None] * ray, 0.0, None)
    return pts / pts.sum(axis=1, keepdims=True)


def _march(field, fbar, zw, rays, t_max, tol_contact):
    """Distance along each ray to the first contact point, else ``t_max``.

    Every ray is sampled at ``1/(4m)`` spacing; the first sample in contact
    is then located more finely by bisection-like refinement rounds.  All
    rays share one interpolation call per round.
    """
    h = 1.0 / (_SAMPLES_PER_CELL * field.grid.m)
    n_ray = len(rays)
    ts_all, owner = [], []
    for r in range(n_ray):
        ts = np.append(np.arange(1, int(t_max[r] / h) + 1) * h, t_max[r])
        ts = ts[ts <= t_max[r]]
        ts_all.append(ts)
        owner.append(np.full(len(ts), r))
    ts = np.concatenate(ts_all)
    owner = np.concatenate(owner)
    pts = np.clip(zw + ts[:, None] * rays[owner], 0.0, None)
    pts /= pts.sum(axis=1, keepdims=True)
    hit = _gap(field, fbar, pts) <= tol_contact
    t_out = np.asarray(t_max, dtype=float).copy()
    contact = np.zeros(n_ray, dtype=bool)
    lo = np.zeros(n_ray)
    hi = np.zeros(n_ray)
    start = 0
    for r, seg in enumerate(ts_all):
        idx = np.flatnonzero(hit[start : start + len(seg)])
        if idx.size:
            i = idx[0]
            contact[r] = True
            lo[r], hi[r] = (seg[i - 1] if i > 0 else 0.0), seg[i]
        start += len(seg)
    live = np.flatnonzero(contact)
    if live.size:
        frac = np.arange(1, _REFINE_POINTS + 1) / _REFINE_POINTS
        for _ in range(_REFINE_ROUNDS):
            sub = lo[live, None] + (hi[live] - lo[live])[:, None] * frac
            p = np.clip(zw + sub[..., None] * rays[live, None, :], 0.0, None)
            p /= p.sum(axis=2, keepdims=True)
            ok = (_gap(field, fbar, p.reshape(-1, len(zw))) <= tol_contact).reshape(sub.shape)
            ok[:, -1] = True
            j = np.argmax(ok, axis=1)
            rows = np.arange(live.size)
            new_lo = np.where(j > 0, sub[rows, np.maximum(j - 1, 0)], lo[live])
            hi[live] = sub[rows, j]
            lo[live] = new_lo
        t_out[live] = np.where(t_max[live] - hi[live] <= _BOUNDARY_SNAP, t_max[live], hi[live])
        # contact bands of width ~tol_contact/slope end just short of vertices;
        # a boundary point close ahead and itself in contact is taken instead
        close = live[(t_out[live] < t_max[live]) & (t_max[live] - t_out[live] <= _CONTACT_SNAP)]
        if close.size:
            p = np.clip(zw + t_max[close, None] * rays[close], 0.0, None)
            p /= p.sum(axis=1, keepdims=True)
            ok = _gap(field, fbar, p) <= tol_contact
            t_out[close[ok]] = t_max[close[ok]]
    return t_out, contact


def _segment_deviation(field, zw, rays, v1, v2):
    """Largest distance between the envelope and its chord on each segment."""
    h = 1.0 / (_SAMPLES_PER_CELL * field.grid.m)
    grids = [np.linspace(a, b, max(int((b - a) / h), 2) + 1) for a, b in zip(v1, v2)]
    owner = np.concatenate([np.full(len(g), r) for r, g in enumerate(grids)])
    ts = np.concatenate(grids)
    pts = np.clip(zw + ts[:, None] * rays[owner], 0.0, None)
    pts /= pts.sum(axis=1, keepdims=True)
    vals = np.split(query_many(field, pts), np.cumsum([len(g) for g in grids])[:-1])
    out = []
    for g, v in zip(grids, vals):
        chord = v[0] + (v[-1] - v[0]) * (g - g[0]) / (g[-1] - g[0])
        out.append((float(np.max(np.abs(v - chord))), g, v))
    return out


def optimal_direction(
    field: EnvelopeField,
    fbar: ModifiedCost,
    z,
    dirs: DirectionSet | None = None,
    tol_planar: float | None = None,
    tol_contact: float | None = None,
):
    """Control plan at ``z``, or :data:`STOP` inside the contact set.

    Candidate directions are scored by the larger of the local second
    difference and the deviation of the envelope from its chord over the
    whole segment (marched until contact or the face boundary).  The best
    score wins; scores within ``tol_planar`` of the best count as ties and
    go to the earliest candidate.  When every full segment crosses a fold,
    the best direction is kept and the segment is cut where affinity breaks.
    """
    zw = snap(z)
    if zw.shape != (field.grid.order,):
        raise ValidationError("point does not live on the field's face")
    tol_contact = field.tol_contact if tol_contact is None else tol_contact
    if stopping_rule(field, fbar, zw, tol_contact):
        return STOP
    dirs = default_directions(field.grid.order) if dirs is None else dirs
    tol_planar = default_tol_planar(field) if tol_planar is None else tol_planar
    if tol_planar < 0:
        raise ValidationError("tol_planar must be non-negative")
    allowance = interpolation_allowance(field, fbar)
    v0 = float(query_many(field, zw[None, :])[0])
    h = 1.0 / field.grid.m
    cands = _candidates(field, zw, dirs)
    tp = np.array([_max_step(zw, d) for d in cands])
    tm = np.array([_max_step(zw, -d) for d in cands])
    keep = np.flatnonzero((tp > 0) & (tm > 0) & np.isfinite(tp) & np.isfinite(tm))
    scored = []
    if keep.size:
        D = np.array([cands[i] for i in keep])
        tp, tm = tp[keep], tm[keep]
        hh = np.minimum(np.minimum(h, tp), tm)
        probe = np.clip(np.vstack([zw + hh[:, None] * D, zw - hh[:, None] * D]), 0.0, None)
        vp, vm = np.split(query_many(field, probe), 2)
        sd = np.abs(vp + vm - 2 * v0) * (h / hh)
        t, c = _march(field, fbar, zw, np.vstack([D, -D]), np.concatenate([tp, tm]), tol_contact)
        n = len(keep)
        t2, c2, t1, c1 = t[:n], c[:n], t[n:], c[n:]
        devs = _segment_deviation(field, zw, D, -t1, t2)
        for r in range(n):
            dev, ts, vals = devs[r]
            scored.append(
                (max(sd[r], dev), int(keep[r]), D[r], -t1[r], t2[r], c1[r], c2[r], sd[r], ts, vals)
            )
    if not scored:
        raise NonPlanarError("no admissible direction at this point")
    best = min(s[0] for s in scored)
    choice = next(s for s in scored if s[0] <= best + tol_planar)
    score, ci, d, v1, v2, c1, c2, sd, ts, vals = choice
    if score > tol_planar + allowance:
        local = min(scored, key=lambda s: (s[7], s[1]))
        score, ci, d, v1, v2, c1, c2, sd, ts, vals = local
        if sd > tol_planar + allowance:
            raise NonPlanarError(
                f"smallest second difference {sd:.3e} exceeds tolerance {tol_planar + allowance:.3e}"
            )
        v1, v2, c1, c2 = _truncate(ts, vals, v0, v1, v2, c1, c2, tol_planar + allowance)
        score = tol_planar + allowance
    F = _value_fn(field)
    z1, z2 = zw + v1 * d, zw + v2 * d
    return ControlPlan(
        z=zw.copy(),
        direction=d,
        v1=float(v1),
        v2=float(v2),
        value1=F(np.clip(z1, 0.0, None)),
        value2=F(np.clip(z2, 0.0, None)),
        contact1=bool(c1),
        contact2=bool(c2),
        deviation=float(score),
        candidate=ci,
    )


def _truncate(ts, vals, v0, v1, v2, c1, c2, tol):
    """Shrink ``[v1, v2]`` to the part where the envelope stays affine."""
    i0 = int(np.argmin(np.abs(ts)))
    slope_r = (vals[min(i0 + 1, len(ts) - 1)] - v0) / max(ts[min(i0 + 1, len(ts) - 1)], 1e-300)
    slope_l = (v0 - vals[max(i0 - 1, 0)]) / max(-ts[max(i0 - 1, 0)], 1e-300)
    slope = 0.5 * (slope_r + slope_l)
    bad = np.abs(vals - (v0 + slope * ts)) > tol
    right = np.flatnonzero(bad & (ts > 0))
    left = np.flatnonzero(bad & (ts < 0))
    if right.size:
        v2, c2 = ts[max(right[0] - 1, i0 + 1)], False
    if left.size:
        v1, c1 = ts[min(left[-1] + 1, i0 - 1)], False
    return v1, v2, c1, c2


@dataclass
class EnvelopePolicy:
    """Plan provider backed by a solved field, memoised per point."""

    field: EnvelopeField
    fbar: ModifiedCost
    dirs: DirectionSet | None = None
    tol_planar: float | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def plan(self, z, rng=None):
        zw = snap(z)
        key = tuple(np.round(zw, 12))
        if key not in self._cache:
            p = optimal_direction(self.field, self.fbar, zw, self.dirs, self.tol_planar)
            self._cache[key] = None if p is STOP else p
        return self._cache[key]

    def stage_tree(self, z, max_stages: int = 64):
        """Exact distribution of the stopping point under this policy.

        Returns a list of ``(probability, point, stages)`` leaves.
        """
        leaves = []
        stack = [(1.0, snap(z), 0)]
        while stack:
            p, pt, depth = stack.pop()
            plan = self.plan(pt) if depth < max_stages else None
            if plan is None:
                leaves.append((p, pt, depth))
                continue
            p1, p2 = exit_probabilities(plan.v1, plan.v2)
            for q, nxt in ((p1, plan.z1), (p2, plan.z2)):
                if q > 0:
                    stack.append((p * q, snap(np.clip(nxt, 0.0, None)), depth + 1))
        return leaves

    def value(self, z) -> float:
        """Policy value by exact enumeration of the stage tree."""
        return float(sum(p * self.fbar.evaluate(pt[None, :])[0] for p, pt, _ in self.stage_tree(z)))
