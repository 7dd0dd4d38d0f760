"""Atomic measures on a fixed set of atoms.

A terminal law supported on the atoms ``x_0 < ... < x_N`` is represented by
its vector of atom probabilities.  Restricting to a subset ``alpha`` of the
atoms gives a face of the probability simplex; every face is discretised by
a barycentric lattice with ``m`` subdivisions per edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .exceptions import GridOverflowError, InternalError, ValidationError

WEIGHT_TOL = 1e-12
MAX_GRID_NODES = 5_000_000


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def exact_renormalize(w: np.ndarray) -> np.ndarray:
    """Rescale ``w`` so that its compensated sum is exactly one.

    The largest entry absorbs the rounding residual, which keeps every
    entry non-negative.
    """
    w = np.asarray(w, dtype=float) / math.fsum(w)
    if w.size > 1:
        j = int(np.argmax(w))
        w[j] = 1.0 - math.fsum(np.delete(w, j))
        # 1 - rest may round; nudge the largest entry until the exact sum is one
        for _ in range(4):
            r = 1.0 - math.fsum(w)
            if r == 0.0:
                break
            w[j] += r
    else:
        w[0] = 1.0
    return w


@dataclass(frozen=True)
class AtomGrid:
    """Strictly increasing atom locations ``x_0 < ... < x_N``."""

    atoms: tuple[float, ...]

    def __post_init__(self):
        atoms = tuple(float(a) for a in self.atoms)
        if len(atoms) < 1:
            raise ValidationError("an atom grid needs at least one atom")
        if not all(math.isfinite(a) for a in atoms):
            raise ValidationError("atoms must be finite")
        if any(b <= a for a, b in zip(atoms, atoms[1:])):
            raise ValidationError(f"atoms must be strictly increasing, got {atoms}")
        object.__setattr__(self, "atoms", atoms)

    @property
    def n(self) -> int:
        """Index of the last atom (``N``)."""
        return len(self.atoms) - 1

    def __len__(self):
        return len(self.atoms)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.atoms, dtype=float)

    def full_face(self) -> Face:
        return Face(tuple(range(len(self.atoms))))

    def to_json(self) -> dict:
        return {"atoms": list(self.atoms)}


@dataclass(frozen=True)
class Face:
    """A sorted, non-empty subset ``alpha`` of atom indices."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ValidationError("a face must be non-empty")
        if any(i < 0 for i in idx):
            raise ValidationError("face indices must be non-negative")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError(f"face indices must be sorted without duplicates, got {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def order(self) -> int:
        """Number of atoms on the face (``k + 1``)."""
        return len(self.indices)

    @property
    def k(self) -> int:
        return len(self.indices) - 1

    def check_grid(self, grid: AtomGrid) -> None:
        if self.indices[-1] > grid.n:
            raise ValidationError(f"face {self.indices} has an index beyond N={grid.n}")

    def sub_face(self, positions: Sequence[int]) -> Face:
        """Face formed by the atoms at the given positions of this face."""
        return Face(tuple(self.indices[p] for p in positions))

    def positions_of(self, other: Face) -> tuple[int, ...]:
        """Positions of ``other``'s atoms inside this face."""
        lookup = {a: p for p, a in enumerate(self.indices)}
        try:
            return tuple(lookup[a] for a in other.indices)
        except KeyError:
            raise ValidationError(f"{other.indices} is not a sub-face of {self.indices}") from None

    def __iter__(self):
        return iter(self.indices)

    def __len__(self):
        return len(self.indices)


class ProbabilityVector:
    """Atom probabilities of a measure supported on ``face``.

    Weights must be non-negative and sum to one within ``1e-12``; they are
    then renormalised so that downstream code can rely on an exact unit sum.
    """

    __slots__ = ("face", "weights")

    def __init__(self, face: Face | Sequence[int], weights, tol: float = WEIGHT_TOL):
        if not isinstance(face, Face):
            face = Face(tuple(face))
        w = np.array(weights, dtype=float).reshape(-1)
        if w.shape[0] != face.order:
            raise ValidationError(
                f"face has {face.order} atoms but {w.shape[0]} weights were given"
            )
        if not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite")
        if np.any(w < -tol):
            raise ValidationError(f"negative weight in {w.tolist()}")
        total = math.fsum(w)
        if abs(total - 1.0) > tol:
            raise ValidationError(f"weights sum to {total!r}, not 1")
        w = exact_renormalize(np.clip(w, 0.0, None))
        object.__setattr__(self, "face", face)
        object.__setattr__(self, "weights", _readonly(w))

    def __setattr__(self, name, value):
        raise AttributeError("ProbabilityVector is immutable")

    def __repr__(self):
        return f"ProbabilityVector(face={self.face.indices}, weights={self.weights.tolist()})"

    def __eq__(self, other):
        if not isinstance(other, ProbabilityVector):
            return NotImplemented
        return self.face == other.face and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash((self.face, self.weights.tobytes()))

    @classmethod
    def dirac(cls, face: Face, position: int) -> ProbabilityVector:
        w = np.zeros(face.order)
        w[position] = 1.0
        return cls(face, w)

    @classmethod
    def from_json(cls, data: dict, grid: AtomGrid | None = None) -> ProbabilityVector:
        weights = data["weights"]
        if "face" in data and data["face"] is not None:
            face = Face(tuple(data["face"]))
        else:
            face = Face(tuple(range(len(weights))))
        if grid is not None:
            face.check_grid(grid)
        return cls(face, weights)

    def to_json(self) -> dict:
        return {"face": list(self.face.indices), "weights": self.weights.tolist()}

    def embed(self, face: Face) -> ProbabilityVector:
        """The same measure expressed on a larger face (zero padding)."""
        pos = face.positions_of(self.face)
        w = np.zeros(face.order)
        w[list(pos)] = self.weights
        return ProbabilityVector(face, w)


def mean(grid: AtomGrid, xi: ProbabilityVector) -> float:
    """Barycentre ``sum_j x_{alpha_j} xi_j`` of the measure."""
    xi.face.check_grid(grid)
    x = grid.as_array()[list(xi.face.indices)]
    if x.shape != xi.weights.shape:
        raise ValidationError("dimension mismatch between face and weights")
    return float(np.dot(x, xi.weights))


def support_face(xi: ProbabilityVector, tol: float = 0.0) -> Face:
    """Sub-face of atoms carrying probability strictly above ``tol``."""
    if not 0.0 <= tol < 0.5:
        raise ValidationError("tol must lie in [0, 0.5)")
    keep = np.flatnonzero(xi.weights > tol)
    if keep.size == 0:
        raise InternalError("no weight exceeds the support tolerance")
    return xi.face.sub_face(keep.tolist())


def restrict(xi: ProbabilityVector, tol: float = 0.0) -> ProbabilityVector:
    """Restriction of ``xi`` to its support face, renormalised."""
    face = support_face(xi, tol)
    pos = list(xi.face.positions_of(face))
    w = xi.weights[pos]
    return ProbabilityVector(face, w / math.fsum(w), tol=max(WEIGHT_TOL, 2 * tol * xi.face.order))


def project(xi: ProbabilityVector) -> np.ndarray:
    """Drop the last coordinate of the weight vector."""
    return xi.weights[:-1].copy()


def lift(face: Face, reduced) -> ProbabilityVector:
    """Inverse of :func:`project`: append ``1 - sum(reduced)``."""
    reduced = np.asarray(reduced, dtype=float).reshape(-1)
    if reduced.shape[0] != face.order - 1:
        raise ValidationError("reduced vector has the wrong length for this face")
    last = 1.0 - math.fsum(reduced)
    return ProbabilityVector(face, np.append(reduced, last))


@lru_cache(maxsize=64)
def _compositions(total: int, parts: int) -> np.ndarray:
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    blocks = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        blocks.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
    return np.vstack(blocks)


@dataclass(frozen=True, eq=False)
class BarycentricGrid:
    """All lattice points ``(j_0/m, ..., j_k/m)`` with ``sum j_i = m``.

    Nodes are stored in lexicographic order of the integer coordinates.
    Point location uses the Freudenthal (Kuhn) triangulation expressed in
    cumulative coordinates ``t_i = j_0 + ... + j_i``, in which the simplex is
    a union of Kuhn cells.
    """

    order: int
    m: int
    lattice: np.ndarray = field(repr=False)
    _lookup: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.order - 1

    @property
    def n_nodes(self) -> int:
        return self.lattice.shape[0]

    @property
    def nodes(self) -> np.ndarray:
        return self.lattice / self.m

    @property
    def interior_mask(self) -> np.ndarray:
        return np.all(self.lattice > 0, axis=1)

    @property
    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask

    def vertex_indices(self) -> np.ndarray:
        """Node indices of the simplex vertices ``e_0, ..., e_k``."""
        return self.index_of(self.m * np.eye(self.order, dtype=np.int64))

    def index_of(self, lattice_pts) -> np.ndarray:
        """Node indices for integer lattice coordinates (shape ``(n, k+1)``)."""
        pts = np.asarray(lattice_pts, dtype=np.int64).reshape(-1, self.order)
        if np.any(pts < 0) or np.any(pts.sum(axis=1) != self.m):
            raise ValidationError("lattice point is not on the grid")
        if self.k == 0:
            return np.zeros(len(pts), dtype=np.int64)
        idx = self._lookup[tuple(pts[:, : self.k].T)]
        if np.any(idx < 0):
            raise InternalError("lattice lookup failed")
        return idx

    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Freudenthal cell vertices and barycentric weights.

        ``points`` are barycentric coordinates on the face, shape
        ``(n, k+1)``.  Returns ``(indices, weights)`` each of shape
        ``(n, k+1)``; interpolating node values with these weights is exact at
        nodes and affine on every cell.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.order:
            raise ValidationError(f"points must have {self.order} coordinates")
        n, k, m = pts.shape[0], self.k, self.m
        if k == 0:
            return np.zeros((n, 1), dtype=np.int64), np.ones((n, 1))
        if np.any(pts < -1e-9) or np.any(np.abs(pts.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("point lies off the face simplex")
        y = np.clip(pts, 0.0, None) * m
        t = np.minimum(np.cumsum(y[:, :k], axis=1), float(m))
        base = np.minimum(np.floor(t), m - 1)
        frac = t - base
        # ties: higher coordinate index first keeps every vertex inside
        o = np.argsort(-frac[:, ::-1], axis=1, kind="stable")
        perm = k - 1 - o
        fs = np.take_along_axis(frac, perm, axis=1)
        weights = np.empty((n, k + 1))
        weights[:, 0] = 1.0 - fs[:, 0]
        weights[:, 1:k] = fs[:, :-1] - fs[:, 1:]
        weights[:, k] = fs[:, -1]
        base = base.astype(np.int64)
        verts_t = np.repeat(base[:, None, :], k + 1, axis=1)
        rows = np.arange(n)
        for j in range(1, k + 1):
            verts_t[:, j, :] = verts_t[:, j - 1, :]
            verts_t[rows, j, perm[:, j - 1]] += 1
        yv = np.empty((n, k + 1, k), dtype=np.int64)
        yv[:, :, 0] = verts_t[:, :, 0]
        yv[:, :, 1:] = np.diff(verts_t, axis=2)
        if np.any(yv < 0) or np.any(verts_t[:, :, -1] > m):
            raise InternalError("Freudenthal vertex outside the simplex")
        idx = self._lookup[tuple(np.moveaxis(yv, 2, 0))]
        return idx, weights

    def interpolate(self, values, points) -> np.ndarray:
        """Piecewise-linear interpolation of node ``values`` at ``points``."""
        idx, w = self.locate(points)
        return np.einsum("ij,ij->i", np.asarray(values, dtype=float)[idx], w)


def grid_size(k: int, m: int) -> int:
    return math.comb(m + k, k)


def make_grid(k: int, m: int, max_nodes: int = MAX_GRID_NODES) -> BarycentricGrid:
    """Barycentric lattice on a face of order ``k + 1`` with resolution ``m``."""
    if k < 0 or m < 1:
        raise ValidationError("make_grid needs k >= 0 and m >= 1")
    count = grid_size(k, m)
    if count > max_nodes or (m + 1) ** k > 20 * max_nodes:
        raise GridOverflowError(f"grid with k={k}, m={m} has {count} nodes (limit {max_nodes})")
    lattice = _compositions(m, k + 1).copy()
    lookup = np.full((m + 1,) * k, -1, dtype=np.int64)
    if k > 0:
        lookup[tuple(lattice[:, :k].T)] = np.arange(count)
    if lattice.shape[0] != count:
        raise InternalError("grid enumeration produced the wrong node count")
    return BarycentricGrid(k + 1, m, _readonly(lattice), _readonly(lookup))
