"""Concave-envelope solver for martingale optimal transport on finite atoms."""

from .envelope import (
    DirectionSet,
    EnvelopeField,
    contact_set,
    default_directions,
    envelope_hull,
    envelope_obstacle,
    query,
    query_many,
    solve_face,
    solve_recursive,
)
from .estimator import MOTEnvelope
from .exceptions import (
    ConvergenceError,
    GridOverflowError,
    InternalError,
    MOTError,
    NonPlanarError,
    ValidationError,
)
from .measures import (
    AtomGrid,
    BarycentricGrid,
    Face,
    ProbabilityVector,
    lift,
    make_grid,
    mean,
    project,
    restrict,
    support_face,
)
from .oracle import SpreadParams, call_spread_strategy, call_spread_value, spread_value
from .payoff import (
    CostFunction,
    ModifiedCost,
    call_spread,
    eval_cost,
    lipschitz_constant,
    modified_cost,
    piecewise_linear,
    put_plus,
)
from .simulator import (
    McEstimate,
    PathState,
    RandomPolicy,
    TimeChange,
    mc_value,
    run_path,
    simulate_paths,
    step,
    time_change_map,
    verify_martingale,
)
from .strategy import (
    STOP,
    ControlPlan,
    EnvelopePolicy,
    Stop,
    exit_value,
    optimal_direction,
    stopping_rule,
)

__version__ = "0.1.0"

__all__ = [
    "AtomGrid",
    "BarycentricGrid",
    "ControlPlan",
    "ConvergenceError",
    "CostFunction",
    "DirectionSet",
    "EnvelopeField",
    "EnvelopePolicy",
    "Face",
    "GridOverflowError",
    "InternalError",
    "MOTEnvelope",
    "MOTError",
    "McEstimate",
    "ModifiedCost",
    "NonPlanarError",
    "PathState",
    "ProbabilityVector",
    "RandomPolicy",
    "STOP",
    "SpreadParams",
    "Stop",
    "TimeChange",
    "ValidationError",
    "call_spread",
    "call_spread_strategy",
    "call_spread_value",
    "contact_set",
    "default_directions",
    "envelope_hull",
    "envelope_obstacle",
    "eval_cost",
    "exit_value",
    "lift",
    "lipschitz_constant",
    "make_grid",
    "mc_value",
    "mean",
    "modified_cost",
    "optimal_direction",
    "piecewise_linear",
    "project",
    "put_plus",
    "query",
    "query_many",
    "restrict",
    "run_path",
    "simulate_paths",
    "solve_face",
    "solve_recursive",
    "spread_value",
    "step",
    "stopping_rule",
    "support_face",
    "time_change_map",
    "verify_martingale",
]
