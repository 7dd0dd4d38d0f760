"""Input checks shared by the estimator API and the command line."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_array

from .exceptions import ValidationError
from .measures import WEIGHT_TOL


def check_weights(X, order: int, tol: float = WEIGHT_TOL) -> np.ndarray:
    """Rows of barycentric weights with ``order`` columns.

    Accepts a single vector or a 2-D array; rows must be non-negative and
    sum to one within ``tol``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    try:
        X = check_array(X, dtype=float, ensure_2d=True)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    if X.shape[1] != order:
        raise ValidationError(f"expected {order} weights per row, got {X.shape[1]}")
    if np.any(X < -tol):
        raise ValidationError("weights must be non-negative")
    if np.any(np.abs(X.sum(axis=1) - 1.0) > tol * max(order, 1)):
        raise ValidationError("weights must sum to one")
    return np.clip(X, 0.0, None)


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_positive_float(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not value > 0:
        raise ValidationError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_method(method: str) -> str:
    if method not in ("hull", "obstacle"):
        raise ValidationError(f"method must be 'hull' or 'obstacle', got {method!r}")
    return method


def check_seed(seed) -> int:
    return check_positive_int(seed, "seed", minimum=0)
