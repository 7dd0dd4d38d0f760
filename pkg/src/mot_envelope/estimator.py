"""Estimator-style wrapper around the functional solver.

``fit`` solves every face for one payoff; ``predict`` and ``transform``
then read values off the full-face envelope at rows of barycentric weights.
The functional API in :mod:`mot_envelope.envelope` remains the primary
interface; this class only bundles configuration and state.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_method, check_positive_int, check_weights
from .envelope import query_many, solve_recursive
from .measures import AtomGrid
from .payoff import CostFunction, ModifiedCost
from .simulator import DEFAULT_DT, McEstimate, mc_value
from .strategy import EnvelopePolicy


class MOTEnvelope(BaseEstimator):
    """Value function of the atomic martingale transport problem.

    Parameters
    ----------
    atoms : sequence of float
        Support points ``x_0 < ... < x_N``.
    payoff : CostFunction or dict
        Payoff, or its JSON description.
    m : int
        Lattice resolution per face.
    method : {"hull", "obstacle"}
        Envelope solver.
    tol_contact, tol_fp, max_sweeps : optional
        Solver tolerances; ``None`` picks the defaults.

    Attributes
    ----------
    solution_ : dict
        Face to :class:`EnvelopeField`.
    field_ : EnvelopeField
        Envelope on the full face.
    fbar_ : ModifiedCost
        Payoff on the full face.
    """

    def __init__(
        self,
        atoms=(-1.0, 0.0, 1.0),
        payoff=None,
        m: int = 100,
        method: str = "hull",
        tol_contact=None,
        tol_fp=None,
        max_sweeps=None,
    ):
        self.atoms = atoms
        self.payoff = payoff
        self.m = m
        self.method = method
        self.tol_contact = tol_contact
        self.tol_fp = tol_fp
        self.max_sweeps = max_sweeps

    def _cost(self) -> CostFunction:
        if isinstance(self.payoff, CostFunction):
            return self.payoff
        if isinstance(self.payoff, dict):
            return CostFunction.from_json(self.payoff)
        raise TypeError("payoff must be a CostFunction or a payoff dict")

    def fit(self, X=None, y=None):
        """Solve all faces.  ``X`` and ``y`` are ignored."""
        m = check_positive_int(self.m, "m", minimum=2)
        method = check_method(self.method)
        grid = AtomGrid(tuple(self.atoms))
        cost = self._cost()
        options = {
            k: v
            for k, v in (
                ("tol_contact", self.tol_contact),
                ("tol_fp", self.tol_fp),
                ("max_sweeps", self.max_sweeps),
            )
            if v is not None
        }
        self.solution_ = solve_recursive(grid, cost, m, method, **options)
        full = grid.full_face()
        self.grid_ = grid
        self.field_ = self.solution_[full]
        self.fbar_ = ModifiedCost(grid, full, cost)
        self.n_features_in_ = grid.n + 1
        return self

    def predict(self, X) -> np.ndarray:
        """Envelope value at each row of weights."""
        check_is_fitted(self, "field_")
        X = check_weights(X, self.n_features_in_)
        return query_many(self.field_, X)

    def transform(self, X) -> np.ndarray:
        """Columns ``(value, fbar, value - fbar)`` for each row of weights."""
        check_is_fitted(self, "field_")
        X = check_weights(X, self.n_features_in_)
        v = query_many(self.field_, X)
        f = self.fbar_.evaluate(X)
        return np.column_stack([v, f, v - f])

    def policy(self) -> EnvelopePolicy:
        check_is_fitted(self, "field_")
        if not hasattr(self, "policy_"):
            self.policy_ = EnvelopePolicy(self.field_, self.fbar_)
        return self.policy_

    def simulate(self, z0, n_paths: int = 10_000, master_seed: int = 0, dt: float = DEFAULT_DT) -> McEstimate:
        """Monte Carlo value of the extracted policy from ``z0``."""
        policy = self.policy()
        z0 = check_weights(z0, self.n_features_in_)[0]
        return mc_value(policy, z0, n_paths, master_seed, dt)
