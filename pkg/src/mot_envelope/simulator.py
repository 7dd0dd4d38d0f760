"""Monte Carlo simulation of the controlled atom weights ``d xi = w dW``.

Simulation runs in the internal (time-changed) clock ``r``.  Every policy
acts in stages: at the start of a stage it returns a :class:`ControlPlan`
(constant control along a segment) or ``None`` to stop.  Along a stage the
weights move as ``z + t * d`` where ``t`` is a Brownian motion with
volatility ``CONTROL_NORM``, discretised by Euler-Maruyama; the exit step is
shortened to the exact hitting fraction by linear interpolation.

Per-path generators are Philox streams keyed by ``(master_seed, path_index)``
so paths are reproducible and independent of execution order.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ValidationError
from .measures import exact_renormalize
from .payoff import ModifiedCost
from .strategy import CONTROL_NORM, ControlPlan, snap

EPS_ABS = 1e-9
EPS_HIT = 1e-6
DEFAULT_DT = 1e-4
DEFAULT_MAX_STEPS = 2_000_000
DEFAULT_MAX_STAGES = 64
UNRELIABLE_FRACTION = 1e-3
_MIN_BLOCK, _MAX_BLOCK = 256, 1 << 16


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    """Counter-based generator for one path."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class PathState:
    weights: np.ndarray
    absorbed: np.ndarray
    stage: int = 0
    r: float = 0.0
    stopped: bool = False

    @classmethod
    def start(cls, z) -> PathState:
        w = snap(z)
        return cls(weights=w, absorbed=(w == 0.0) | (w == 1.0))


def step(state: PathState, w, dt: float, gaussian: float, eps_abs: float = EPS_ABS) -> PathState:
    """One Euler-Maruyama step ``xi <- xi + w sqrt(dt) g`` with absorption.

    Coordinates that would cross 0 or 1 shorten the step to the exact
    hitting fraction; coordinates within ``eps_abs`` of 0 or 1 are clamped
    and become permanently absorbed.
    """
    w = np.asarray(w, dtype=float)
    if abs(math.fsum(w)) > 1e-12:
        raise ValidationError("control must sum to zero")
    if np.linalg.norm(w) > 1.0 + 1e-12:
        raise ValidationError("control norm exceeds one")
    if np.any(np.abs(w[state.absorbed]) > 0.0):
        raise ValidationError("control acts on an absorbed coordinate")
    xi = state.weights
    inc = w * (math.sqrt(dt) * gaussian)
    theta = 1.0
    moving = inc != 0.0
    down = moving & (inc < 0) & (xi + inc < eps_abs)
    up = moving & (inc > 0) & (xi + inc > 1.0 - eps_abs)
    if np.any(down):
        theta = min(theta, float(np.min(xi[down] / -inc[down])))
    if np.any(up):
        theta = min(theta, float(np.min((1.0 - xi[up]) / inc[up])))
    theta = min(max(theta, 0.0), 1.0)
    new = xi + theta * inc
    absorbed = state.absorbed.copy()
    low = ~absorbed & (new < eps_abs)
    new[low] = 0.0
    absorbed |= low
    high = ~absorbed & (new > 1.0 - eps_abs)
    if np.any(high):
        new = np.where(high, 1.0, 0.0)
        absorbed[:] = True
    else:
        new = exact_renormalize(new)
    return PathState(new, absorbed, state.stage, state.r + theta * dt, state.stopped)


def _block_size(plan: ControlPlan, dt: float) -> int:
    expected = max(-plan.v1 * plan.v2, 0.0) / (CONTROL_NORM**2 * dt)
    return int(min(max(2 * expected, _MIN_BLOCK), _MAX_BLOCK))


def _stage(plan: ControlPlan, rng, dt: float, budget: int):
    """Run one stage; returns ``(end_t, steps, fraction, hit)``.

    ``hit`` is ``-1``/``+1`` for the end reached or ``0`` when the step
    budget ran out.
    """
    lo, hi = plan.v1 + EPS_HIT, plan.v2 - EPS_HIT
    if lo >= 0.0 or hi <= 0.0:
        return (plan.v1, 0, 0.0, -1) if -plan.v1 <= plan.v2 else (plan.v2, 0, 0.0, 1)
    sig = CONTROL_NORM * math.sqrt(dt)
    block = _block_size(plan, dt)
    t, used = 0.0, 0
    while used < budget:
        n = min(block, budget - used)
        path = t + np.cumsum(sig * rng.standard_normal(n))
        out = np.flatnonzero((path <= lo) | (path >= hi))
        if out.size:
            i = int(out[0])
            prev = path[i - 1] if i > 0 else t
            side = 1 if path[i] >= hi else -1
            end = plan.v2 if side > 0 else plan.v1
            frac = min(max((end - prev) / (path[i] - prev), 0.0), 1.0)
            return end, used + i, frac, side
        t = float(path[-1])
        used += n
    return t, used, 0.0, 0


def _stage_stepwise(plan: ControlPlan, rng, dt: float, budget: int, state: PathState):
    """Reference version of :func:`_stage` built on :func:`step`."""
    lo, hi = plan.v1 + EPS_HIT, plan.v2 - EPS_HIT
    if lo >= 0.0 or hi <= 0.0:
        return (plan.v1, 0, 0.0, -1) if -plan.v1 <= plan.v2 else (plan.v2, 0, 0.0, 1)
    w = CONTROL_NORM * plan.direction
    w = np.where(state.absorbed, 0.0, w)
    block = _block_size(plan, dt)
    used = 0
    t_prev = 0.0
    while used < budget:
        n = min(block, budget - used)
        for i, g in enumerate(rng.standard_normal(n)):
            before = int(state.absorbed.sum())
            state = step(state, w, dt, g)
            t = float(np.dot(state.weights - plan.z, plan.direction))
            if t <= lo or t >= hi or state.absorbed.sum() > before:
                side = 1 if t >= 0.5 * (plan.v1 + plan.v2) else -1
                end = plan.v2 if side > 0 else plan.v1
                frac = min(max((end - t_prev) / (CONTROL_NORM * math.sqrt(dt) * g), 0.0), 1.0)
                return end, used + i, frac, side
            t_prev = t
        used += n
    return t_prev, used, 0.0, 0


@dataclass
class PathResult:
    point: np.ndarray
    value: float
    r: float
    stages: int
    status: str  # "stopped" | "max_length"
    trace: list = field(default_factory=list)


def run_path(
    policy,
    z0,
    seed,
    dt: float = DEFAULT_DT,
    fbar: ModifiedCost | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
    max_stages: int = DEFAULT_MAX_STAGES,
    record: bool = False,
    stepwise: bool = False,
) -> PathResult:
    """Simulate one path of ``policy`` from ``z0``.

    ``seed`` is either a generator or a ``(master_seed, path_index)`` pair.
    The trace (when recorded) has one row per stage:
    ``(stage, r_start, r_end, weights_at_start, control)``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else path_rng(*seed)
    fbar = policy.fbar if fbar is None else fbar
    z = snap(z0)
    state = PathState.start(z)
    r, steps, stages = 0.0, 0, 0
    trace = []
    status = "stopped"
    while stages < max_stages:
        plan = policy.plan(z, rng)
        if plan is None:
            break
        if np.any(np.abs(plan.direction[z == 0.0]) > 1e-12):
            raise ValidationError("policy moves an absorbed coordinate")
        if stepwise:
            end, used, frac, side = _stage_stepwise(plan, rng, dt, max_steps - steps, state)
        else:
            end, used, frac, side = _stage(plan, rng, dt, max_steps - steps)
        dr = (used + frac) * dt if side else used * dt
        stages += 1
        new = plan.z + end * plan.direction
        if record and dr > 0:
            # stages shorter than one step (start within EPS_HIT of an end) are not recorded
            trace.append((stages, r, r + dr, z.copy(), plan.control.copy()))
        r += dr
        steps += used + (1 if side else 0)
        z = snap(np.clip(new, 0.0, None))
        state = PathState(z, (z == 0.0) | (z == 1.0), stages, r)
        if side == 0:
            status = "max_length"
            break
    value = float(fbar.evaluate(z[None, :])[0])
    return PathResult(z, value, r, stages, status, trace)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    master_seed: int
    n_rejected: int = 0
    reliable: bool = True

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "master_seed": self.master_seed,
            "n_rejected": self.n_rejected,
            "reliable": self.reliable,
        }


@dataclass
class PathBatch:
    values: np.ndarray
    points: np.ndarray
    r: np.ndarray
    stages: np.ndarray
    rejected: np.ndarray
    master_seed: int
    traces: list | None = None

    def estimate(self) -> McEstimate:
        n = len(self.values)
        se = float(np.std(self.values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        n_rej = int(self.rejected.sum())
        return McEstimate(
            mean=float(np.mean(self.values)),
            std_error=se,
            n_paths=n,
            master_seed=int(self.master_seed),
            n_rejected=n_rej,
            reliable=n_rej <= UNRELIABLE_FRACTION * n,
        )


def _run_range(policy, z0, master_seed, indices, dt, fbar, max_steps, max_stages, record, stepwise):
    return [
        run_path(policy, z0, (master_seed, i), dt, fbar, max_steps, max_stages, record, stepwise)
        for i in indices
    ]


def simulate_paths(
    policy,
    z0,
    n_paths: int,
    master_seed: int,
    dt: float = DEFAULT_DT,
    fbar: ModifiedCost | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
    max_stages: int = DEFAULT_MAX_STAGES,
    record: bool = False,
    stepwise: bool = False,
    n_jobs: int = 1,
) -> PathBatch:
    """Simulate ``n_paths`` independent paths; results are in path order."""
    args = (dt, fbar, max_steps, max_stages, record, stepwise)
    if n_jobs == 1:
        results = _run_range(policy, z0, master_seed, range(n_paths), *args)
    else:
        from joblib import Parallel, delayed

        chunks = np.array_split(np.arange(n_paths), max(1, 4 * abs(n_jobs)))
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_run_range)(policy, z0, master_seed, c.tolist(), *args) for c in chunks if len(c)
        )
        results = [r for part in parts for r in part]
    return PathBatch(
        values=np.array([p.value for p in results]),
        points=np.array([p.point for p in results]),
        r=np.array([p.r for p in results]),
        stages=np.array([p.stages for p in results]),
        rejected=np.array([p.status != "stopped" for p in results]),
        master_seed=master_seed,
        traces=[p.trace for p in results] if record else None,
    )


def mc_value(
    policy,
    z0,
    n_paths: int,
    master_seed: int,
    dt: float = DEFAULT_DT,
    **kwargs,
) -> McEstimate:
    """Mean and standard error of the payoff at the stopping point."""
    if n_paths < 100:
        raise ValidationError("mc_value needs at least 100 paths")
    return simulate_paths(policy, z0, n_paths, master_seed, dt, **kwargs).estimate()


@dataclass(frozen=True)
class MartingaleReport:
    initial: np.ndarray
    mean: np.ndarray
    std_error: np.ndarray
    deviation: np.ndarray
    passed_each: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.passed_each))


def verify_martingale(points, z0, n_se: float = 3.0) -> MartingaleReport:
    """Check that each stopped weight averages to its initial value."""
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 1000:
        raise ValidationError("verify_martingale needs at least 1000 paths")
    z0 = snap(z0)
    mean = pts.mean(axis=0)
    se = pts.std(axis=0, ddof=1) / math.sqrt(pts.shape[0])
    dev = np.abs(mean - z0)
    ok = dev <= n_se * se + 1e-12
    return MartingaleReport(z0, mean, se, dev, ok)


@dataclass(frozen=True)
class TimeChange:
    """Calendar clock ``T_r = int_0^r lambda_s ds`` along one path."""

    horizon: float
    r: np.ndarray
    lam: np.ndarray
    T_r: np.ndarray
    reached_horizon: bool
    halted: bool

    def calendar(self, r):
        return np.interp(r, self.r, self.T_r)


def time_change_map(times, controls, horizon: float, dirac=None) -> TimeChange:
    """Time change with ``|w_r|^2 + lambda_r = 1`` before full absorption.

    ``controls[i]`` acts on ``[times[i], times[i+1])``.  ``dirac[i]`` marks
    intervals spent at a Dirac mass; there ``lambda`` drops to zero once the
    calendar clock has reached ``horizon`` and integration halts.
    """
    times = np.asarray(times, dtype=float)
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    n = len(times) - 1
    if controls.shape[0] != n:
        raise ValidationError("need one control per time interval")
    if np.any(np.diff(times) < 0):
        raise ValidationError("times must be non-decreasing")
    dirac = np.zeros(n, bool) if dirac is None else np.asarray(dirac, bool)
    lam = np.empty(n)
    T = np.zeros(n + 1)
    halted = False
    for i in range(n):
        lam[i] = 1.0 - float(np.dot(controls[i], controls[i]))
        if dirac[i] and T[i] >= horizon:
            lam[i] = 0.0
            halted = True
            T[i + 1 :] = T[i]
            lam[i + 1 :] = 0.0
            break
        if lam[i] <= 0.0:
            raise ValidationError(f"non-positive time-change rate on interval {i}")
        # piecewise-constant integrand: the trapezoid rule is exact
        T[i + 1] = T[i] + 0.5 * (lam[i] + lam[i]) * (times[i + 1] - times[i])
    return TimeChange(float(horizon), times, lam, T, bool(T[-1] >= horizon), halted)


def trace_time_change(trace, horizon: float = math.inf) -> TimeChange:
    """Time change for a trace recorded by :func:`run_path`."""
    if not trace:
        return time_change_map([0.0], np.zeros((0, 1)), horizon)
    times = [trace[0][1]] + [row[2] for row in trace]
    controls = [row[4] for row in trace]
    return time_change_map(times, controls, horizon)


@dataclass
class RandomPolicy:
    """Admissible randomised policy used to probe the upper bound.

    At each stage it stops with probability ``p_stop``; otherwise it picks a
    Gaussian direction on the current support and a segment that runs either
    to the face boundary or to a random fraction of the way there.  With a
    ``base`` policy it defers to that policy's plan with probability
    ``p_follow``, which keeps it close to optimal.  Its own ``seed`` fixes
    these tuning constants; the path generator drives every decision.
    """

    fbar: ModifiedCost
    seed: int = 0
    base: object = None
    p_follow: float = field(init=False)
    p_stop: float = field(init=False)
    p_boundary: float = field(init=False)
    exchange_only: bool = field(init=False)

    def __post_init__(self):
        g = np.random.default_rng(self.seed)
        self.p_stop = float(g.uniform(0.02, 0.4))
        self.p_boundary = float(g.uniform(0.0, 1.0))
        self.exchange_only = bool(g.random() < 0.3)
        self.p_follow = float(g.uniform(0.3, 0.9)) if self.base is not None else 0.0

    def plan(self, z, rng):
        z = snap(z)
        support = np.flatnonzero(z > 0)
        if support.size < 2:
            return None
        if rng.random() < self.p_follow:
            return self.base.plan(z, rng)
        if rng.random() < self.p_stop:
            return None
        d = np.zeros_like(z)
        if self.exchange_only:
            i, j = rng.choice(support, size=2, replace=False)
            d[i], d[j] = 1.0, -1.0
        else:
            d[support] = rng.standard_normal(support.size)
            d[support] -= d[support].mean()
        d /= np.linalg.norm(d)
        tp = float(np.min(z[d < 0] / -d[d < 0]))
        tm = float(np.min(z[d > 0] / d[d > 0]))
        if rng.random() >= self.p_boundary:
            tp *= rng.uniform(0.05, 1.0)
            tm *= rng.uniform(0.05, 1.0)
        return ControlPlan(z=z, direction=d, v1=-tm, v2=tp)


@dataclass
class ZeroPolicy:
    """Stops immediately."""

    fbar: ModifiedCost

    def plan(self, z, rng=None):
        return None


def traces_to_csv(batch: PathBatch) -> str:
    """CSV rows ``path_id, stage, r, weights..., stopped`` for a recorded batch.

    One row per stage start plus a final row at the stopping point.
    """
    if batch.traces is None:
        raise ValidationError("batch was simulated without record=True")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    width = batch.points.shape[1] if len(batch.points) else 0
    writer.writerow(["path_id", "stage", "r"] + [f"w{i}" for i in range(width)] + ["stopped"])
    for pid, trace in enumerate(batch.traces):
        for stage, r0, _r1, w, _c in trace:
            writer.writerow([pid, stage - 1, repr(r0), *map(repr, w.tolist()), 0])
        end = batch.points[pid].tolist()
        writer.writerow([pid, int(batch.stages[pid]), repr(float(batch.r[pid])), *map(repr, end), 1])
    return buf.getvalue()


@dataclass
class SegmentPolicy:
    """Runs a single fixed plan from its start point, then stops."""

    plan_: ControlPlan
    fbar: ModifiedCost

    def plan(self, z, rng=None):
        if np.allclose(snap(z), self.plan_.z, rtol=0, atol=1e-12):
            return self.plan_
        return None
