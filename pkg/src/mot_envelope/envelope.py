"""Value function on each simplex face as the concave envelope of the cost.

Two independent solvers are provided:

* :func:`envelope_hull` computes the least concave majorant of the grid
  samples directly (upper convex hull of the lifted points, or one linear
  programme per node in dimension four and up).
* :func:`envelope_obstacle` iterates the monotone wide-stencil scheme for
  ``min{-sup_w 1/2 w'D^2V w, V - fbar} = 0`` with Dirichlet data taken from
  the lower-dimensional faces.

:func:`solve_recursive` runs either solver face by face in increasing
dimension, starting from ``V = f(x_i)`` at the Dirac masses.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial import ConvexHull
from scipy.stats import qmc

from .exceptions import ConvergenceError, InternalError, ValidationError
from .measures import (
    AtomGrid,
    BarycentricGrid,
    Face,
    ProbabilityVector,
    make_grid,
)
from .payoff import CostFunction, ModifiedCost

logger = logging.getLogger(__name__)

HULL_TOL = 1e-9
DEFAULT_EXTRA_DIRECTIONS = 32
DEFAULT_C = 0.01


@dataclass(frozen=True, eq=False)
class DirectionSet:
    """Unit directions in the hyperplane ``sum z_i = 0``.

    The pairwise exchange directions ``(e_i - e_j)/sqrt(2)`` come first, in
    lexicographic order of ``(i, j)``, followed by any extra directions.
    """

    vectors: np.ndarray
    c: float = DEFAULT_C
    n_exchange: int = 0

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if v.size and (np.any(np.abs(v.sum(axis=1)) > 1e-12)):
            raise ValidationError("directions must sum to zero")
        norms = np.linalg.norm(v, axis=1) if v.size else np.zeros(0)
        if np.any(norms <= self.c) or np.any(norms > 1 + 1e-12):
            raise ValidationError("direction norms must lie in (c, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def order(self) -> int:
        return self.vectors.shape[1]


def exchange_directions(order: int) -> np.ndarray:
    out = []
    for i, j in itertools.combinations(range(order), 2):
        d = np.zeros(order)
        d[i], d[j] = 1.0, -1.0
        out.append(d / math.sqrt(2.0))
    return np.array(out).reshape(-1, order)


def default_directions(
    order: int, n_extra: int = DEFAULT_EXTRA_DIRECTIONS, c: float = DEFAULT_C, seed: int = 0
) -> DirectionSet:
    """Exchange directions plus ``n_extra`` quasi-random hyperplane directions.

    On an edge (``order == 2``) the hyperplane is one-dimensional, so no
    extra directions are added.
    """
    ex = exchange_directions(order)
    extra = np.zeros((0, order))
    if order >= 3 and n_extra > 0:
        pts = qmc.Halton(d=order, scramble=True, seed=seed).random(4 * n_extra) * 2.0 - 1.0
        pts -= pts.mean(axis=1, keepdims=True)
        norms = np.linalg.norm(pts, axis=1)
        pts = pts[norms > 0.1]
        extra = (pts / np.linalg.norm(pts, axis=1, keepdims=True))[:n_extra]
        extra -= extra.mean(axis=1, keepdims=True)
        extra /= np.linalg.norm(extra, axis=1, keepdims=True)
    return DirectionSet(np.vstack([ex, extra]), c=c, n_exchange=len(ex))


@dataclass(eq=False)
class EnvelopeField:
    """Grid-sampled value function on one face."""

    face: Face
    grid: BarycentricGrid
    values: np.ndarray
    fbar: np.ndarray
    contact: np.ndarray
    method: str
    tol_contact: float
    info: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.grid.k

    def value_range(self) -> float:
        return float(np.ptp(self.fbar)) if self.fbar.size else 0.0


def default_tol_contact(fbar) -> float:
    return max(1e-6 * float(np.ptp(fbar)), 1e-12)


def default_tol_fp(fbar) -> float:
    return max(1e-8 * float(np.ptp(fbar)), 1e-14)


def tol_concave(fbar, tol_fp: float = 0.0) -> float:
    return 1e-6 * float(np.ptp(fbar)) + tol_fp


def contact_set(field: EnvelopeField, fbar=None, tol_contact: float | None = None) -> np.ndarray:
    """Nodes where the envelope touches the cost (the stopping region)."""
    fbar = field.fbar if fbar is None else np.asarray(fbar, dtype=float)
    tol = field.tol_contact if tol_contact is None else tol_contact
    mask = (field.values - fbar) <= tol
    mask[field.grid.vertex_indices()] = True
    return mask


def _finish(grid, face, values, fbar, method, tol_contact, info) -> EnvelopeField:
    tol_contact = default_tol_contact(fbar) if tol_contact is None else tol_contact
    values = np.asarray(values, dtype=float)
    field_ = EnvelopeField(face, grid, values, fbar, np.zeros(len(values), bool), method, tol_contact, info)
    field_.contact = contact_set(field_)
    values.setflags(write=False)
    field_.contact.setflags(write=False)
    return field_


def _affine_fit(grid: BarycentricGrid, fbar: np.ndarray) -> bool:
    """True when ``fbar`` is affine on the grid (up to rounding)."""
    if grid.k == 0 or grid.n_nodes <= grid.k + 1:
        return True
    X = np.column_stack([grid.nodes[:, : grid.k], np.ones(grid.n_nodes)])
    coef, *_ = np.linalg.lstsq(X, fbar, rcond=None)
    # rounding is relative, so the tolerance scales with the data
    scale = float(np.max(np.abs(fbar)))
    return bool(np.max(np.abs(X @ coef - fbar)) <= 1e-12 * scale)


def _upper_hull_1d(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Monotone-chain upper hull of points sorted by ``x``; returns indices."""
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.array(hull)


def _hull_1d(grid: BarycentricGrid, fbar: np.ndarray) -> np.ndarray:
    # lexicographic order sorts nodes by j_0
    x = grid.lattice[:, 0].astype(float)
    h = _upper_hull_1d(x, fbar)
    return np.interp(x, x[h], fbar[h])


def _hull_2d(grid: BarycentricGrid, fbar: np.ndarray) -> np.ndarray:
    m = grid.m
    lo = float(fbar.min())
    span = float(np.ptp(fbar))
    z = (fbar - lo) / span * m
    xy = grid.lattice[:, :2].astype(float)
    corners = np.array([[0.0, 0.0], [m, 0.0], [0.0, m]])
    pts = np.vstack([np.column_stack([xy, z]), np.column_stack([corners, np.full(3, -float(m))])])
    hull = ConvexHull(pts)
    eq = hull.equations
    up = eq[eq[:, 2] > 1e-8]
    # z = a x + b y + c on each upward facet
    planes = np.column_stack([-up[:, 0], -up[:, 1], -up[:, 3]]) / up[:, 2:3]
    planes = np.unique(np.round(planes, 12), axis=0)
    out = np.empty(grid.n_nodes)
    chunk = max(1, 4_000_000 // max(1, len(planes)))
    for s in range(0, grid.n_nodes, chunk):
        p = xy[s : s + chunk]
        out[s : s + chunk] = np.min(p @ planes[:, :2].T + planes[:, 2], axis=1)
    return out / m * span + lo


def _hull_lp(grid: BarycentricGrid, fbar: np.ndarray) -> np.ndarray:
    nodes = grid.nodes
    A_eq = np.vstack([nodes[:, : grid.k].T, np.ones(grid.n_nodes)])
    out = np.empty(grid.n_nodes)
    for i in range(grid.n_nodes):
        b_eq = np.append(nodes[i, : grid.k], 1.0)
        res = linprog(-fbar, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        if res.status != 0:
            raise InternalError(f"envelope LP failed at node {i}: {res.message}")
        out[i] = -res.fun
    return out


def envelope_hull(
    grid: BarycentricGrid,
    fbar,
    face: Face | None = None,
    tol_contact: float | None = None,
) -> EnvelopeField:
    """Least concave majorant of the samples ``fbar`` on ``grid``."""
    fbar = np.asarray(fbar, dtype=float)
    if fbar.shape != (grid.n_nodes,):
        raise ValidationError("fbar must have one value per grid node")
    if not np.all(np.isfinite(fbar)):
        raise ValidationError("fbar must be finite")
    face = Face(tuple(range(grid.order))) if face is None else face
    if grid.k == 0 or _affine_fit(grid, fbar):
        values = fbar.copy()
    elif grid.k == 1:
        values = _hull_1d(grid, fbar)
    elif grid.k == 2:
        values = _hull_2d(grid, fbar)
    else:
        values = _hull_lp(grid, fbar)
    values = np.maximum(values, fbar)
    verts = grid.vertex_indices()
    values[verts] = fbar[verts]
    return _finish(grid, face, values, fbar, "hull", tol_contact, {})


def _stencil_operator(grid: BarycentricGrid, dirs: DirectionSet, vertex_directions: bool = True):
    """Sparse averaging operator of all wide stencils at interior nodes.

    Each row evaluates ``(V(z + s d) + V(z - s d)) / 2`` for one interior
    node ``z``, direction ``d`` and step ``s`` (in lattice units, scaled so
    that the largest coordinate move is ``s``).  Steps are the powers of two
    below the largest admissible step, plus the largest step itself.
    Besides the global ``dirs``, each node gets the directions towards the
    simplex vertices, along which ridges of the envelope typically run.
    Off-grid endpoints are interpolated on the Freudenthal triangulation.
    """
    m = grid.m
    interior = np.flatnonzero(grid.interior_mask)
    y = grid.lattice[interior].astype(float)
    n_int = len(interior)
    fields = [(np.broadcast_to(d, (n_int, grid.order)), True) for d in dirs.vectors]
    if vertex_directions and grid.order >= 3:
        for i in range(grid.order):
            d = y / m - np.eye(grid.order)[i]
            fields.append((d, False))
    rows_node, starts, ends = [], [], []
    for D, maybe_lattice in fields:
        D = D / np.max(np.abs(D), axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            ratio = np.where(np.abs(D) > 1e-15, y / np.abs(D), np.inf)
        smax = np.min(ratio, axis=1)
        if maybe_lattice and np.allclose(D[0], np.round(D[0])):
            smax = np.floor(smax + 1e-9)
        p = 1.0
        while p < smax.max():
            sel = np.flatnonzero(smax > p + 1e-9)
            rows_node.append(sel)
            starts.append(y[sel] + p * D[sel])
            ends.append(y[sel] - p * D[sel])
            p *= 2.0
        sel = np.flatnonzero(smax > 1e-9)
        rows_node.append(sel)
        starts.append(y[sel] + smax[sel, None] * D[sel])
        ends.append(y[sel] - smax[sel, None] * D[sel])
    node_of_row = np.concatenate(rows_node)
    p_plus = np.clip(np.vstack(starts), 0.0, None) / m
    p_minus = np.clip(np.vstack(ends), 0.0, None) / m
    p_plus /= p_plus.sum(axis=1, keepdims=True)
    p_minus /= p_minus.sum(axis=1, keepdims=True)
    order = np.argsort(node_of_row, kind="stable")
    node_of_row = node_of_row[order]
    i_plus, w_plus = grid.locate(p_plus[order])
    i_minus, w_minus = grid.locate(p_minus[order])
    n_rows = len(node_of_row)
    r = np.repeat(np.arange(n_rows), grid.order)
    A = sparse.csr_matrix(
        (
            0.5 * np.concatenate([w_plus.ravel(), w_minus.ravel()]),
            (np.concatenate([r, r]), np.concatenate([i_plus.ravel(), i_minus.ravel()])),
        ),
        shape=(n_rows, grid.n_nodes),
    )
    A.sum_duplicates()
    A.eliminate_zeros()
    starts_idx = np.flatnonzero(np.r_[True, np.diff(node_of_row) != 0])
    owners = interior[node_of_row[starts_idx]]
    if len(owners) != n_int:
        raise InternalError("some interior node has no stencil")
    return A, starts_idx, owners


def envelope_obstacle(
    grid: BarycentricGrid,
    fbar,
    boundary=None,
    dirs: DirectionSet | None = None,
    tol_fp: float | None = None,
    max_sweeps: int | None = None,
    face: Face | None = None,
    tol_contact: float | None = None,
) -> EnvelopeField:
    """Fixed point of the Jacobi obstacle sweep with Dirichlet boundary data.

    ``boundary`` is an array over all nodes whose boundary entries hold the
    value function of the lower faces; interior entries are ignored.  Without
    it the boundary is pinned to ``fbar`` (only sensible on edges).
    """
    fbar = np.asarray(fbar, dtype=float)
    if fbar.shape != (grid.n_nodes,):
        raise ValidationError("fbar must have one value per grid node")
    face = Face(tuple(range(grid.order))) if face is None else face
    bmask = grid.boundary_mask
    if boundary is None:
        boundary = fbar
    boundary = np.asarray(boundary, dtype=float)
    if boundary.shape != fbar.shape or not np.all(np.isfinite(boundary[bmask])):
        raise ValidationError("boundary data incomplete")
    tol_fp = default_tol_fp(fbar) if tol_fp is None else tol_fp
    max_sweeps = 10 * grid.m**2 if max_sweeps is None else max_sweeps
    V = np.where(bmask, boundary, fbar)
    interior = np.flatnonzero(~bmask)
    if grid.k == 0 or interior.size == 0:
        info = {"sweeps": 0, "residual": 0.0, "tol_fp": tol_fp}
        return _finish(grid, face, V, fbar, "obstacle", tol_contact, info)
    dirs = default_directions(grid.order) if dirs is None else dirs
    if dirs.order != grid.order:
        raise ValidationError("direction set does not match the face dimension")
    A, starts, owners = _stencil_operator(grid, dirs)
    f_int = fbar[owners]
    V[owners] = np.maximum(V[owners], f_int)
    residual = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        cand = np.maximum.reduceat(A @ V, starts)
        new = np.maximum(f_int, cand)
        residual = float(np.max(np.abs(new - V[owners])))
        V[owners] = new
        sweeps += 1
        if residual < tol_fp:
            break
    else:
        raise ConvergenceError(
            f"obstacle iteration stopped after {sweeps} sweeps with residual {residual:.3e}",
            residual=residual,
            sweeps=sweeps,
        )
    logger.debug("obstacle face %s: %d sweeps, residual %.3e", face.indices, sweeps, residual)
    info = {"sweeps": sweeps, "residual": residual, "n_stencils": A.shape[0], "tol_fp": tol_fp}
    return _finish(grid, face, V, fbar, "obstacle", tol_contact, info)


def all_faces(n_atoms: int) -> list[Face]:
    """Every face, ordered by size and then lexicographically."""
    return [
        Face(c) for r in range(1, n_atoms + 1) for c in itertools.combinations(range(n_atoms), r)
    ]


def boundary_values(grid: BarycentricGrid, face: Face, solved: dict) -> np.ndarray:
    """Dirichlet data on ``face`` assembled from already-solved sub-faces."""
    out = np.full(grid.n_nodes, np.nan)
    bidx = np.flatnonzero(grid.boundary_mask)
    lat = grid.lattice[bidx]
    patterns = lat > 0
    for pattern in np.unique(patterns, axis=0):
        rows = np.flatnonzero(np.all(patterns == pattern, axis=1))
        positions = np.flatnonzero(pattern)
        sub = face.sub_face(positions.tolist())
        if sub not in solved:
            raise ValidationError(f"sub-face {sub.indices} has not been solved")
        sub_field = solved[sub]
        sub_idx = sub_field.grid.index_of(lat[rows][:, positions])
        out[bidx[rows]] = sub_field.values[sub_idx]
    return out


def solve_face(
    grid: AtomGrid,
    f: CostFunction,
    face: Face,
    m: int,
    method: str = "hull",
    solved: dict | None = None,
    **options,
) -> EnvelopeField:
    mc = ModifiedCost(grid, face, f)
    bgrid = make_grid(face.k, m)
    fbar = mc.evaluate(bgrid.nodes)
    tol_contact = options.get("tol_contact")
    if face.k == 0:
        return _finish(bgrid, face, fbar.copy(), fbar, method, tol_contact, {})
    if method == "hull":
        return envelope_hull(bgrid, fbar, face=face, tol_contact=tol_contact)
    if method == "obstacle":
        bvals = boundary_values(bgrid, face, solved or {})
        return envelope_obstacle(
            bgrid,
            fbar,
            boundary=bvals,
            dirs=options.get("dirs") or default_directions(
                face.order, options.get("n_extra_directions", DEFAULT_EXTRA_DIRECTIONS)
            ),
            tol_fp=options.get("tol_fp"),
            max_sweeps=options.get("max_sweeps"),
            face=face,
            tol_contact=tol_contact,
        )
    raise ValidationError(f"unknown method {method!r}")


def solve_recursive(
    grid: AtomGrid,
    f: CostFunction,
    m: int,
    method: str = "hull",
    faces: list[Face] | None = None,
    progress: Callable[[Face, EnvelopeField], None] | None = None,
    **options,
) -> dict[Face, EnvelopeField]:
    """Solve every face in increasing dimension.

    Singleton faces carry ``f(x_i)``; each higher face takes its boundary
    data from the sub-faces solved before it.
    """
    if m < 2:
        raise ValidationError("solve_recursive needs m >= 2")
    faces = all_faces(len(grid)) if faces is None else sorted(faces, key=lambda a: (a.order, a.indices))
    solved: dict[Face, EnvelopeField] = {}
    for face in faces:
        face.check_grid(grid)
        solved[face] = solve_face(grid, f, face, m, method, solved, **options)
        if progress is not None:
            progress(face, solved[face])
    return solved


def query_many(field: EnvelopeField, points) -> np.ndarray:
    """Interpolated envelope at rows of barycentric coordinates on the face."""
    return field.grid.interpolate(field.values, points)


def query(field: EnvelopeField, z: ProbabilityVector) -> float:
    """Envelope value at ``z`` by Freudenthal interpolation."""
    if z.face != field.face:
        raise ValidationError(f"point lives on {z.face.indices}, field on {field.face.indices}")
    return float(query_many(field, z.weights[None, :])[0])


def restrict_to_subface(field: EnvelopeField, sub: Face) -> tuple[np.ndarray, np.ndarray]:
    """Node indices of ``field`` lying on ``sub`` and their sub-grid lattice."""
    pos = np.array(field.face.positions_of(sub))
    others = np.setdiff1d(np.arange(field.face.order), pos)
    lat = field.grid.lattice
    rows = np.flatnonzero(np.all(lat[:, others] == 0, axis=1)) if others.size else np.arange(len(lat))
    return rows, lat[rows][:, pos]


def face_consistency(solution: dict[Face, EnvelopeField]) -> float:
    """Largest mismatch between a face solution and its sub-face solutions."""
    worst = 0.0
    for face, fld in solution.items():
        for sub, sub_field in solution.items():
            if sub == face or not set(sub.indices) <= set(face.indices):
                continue
            if sub_field.grid.m != fld.grid.m:
                continue
            rows, sub_lat = restrict_to_subface(fld, sub)
            idx = sub_field.grid.index_of(sub_lat)
            worst = max(worst, float(np.max(np.abs(fld.values[rows] - sub_field.values[idx]))))
    return worst


def discrete_concavity_violation(field: EnvelopeField, dirs: DirectionSet | None = None) -> float:
    """Largest ``(V(z+d) + V(z-d))/2 - V(z)`` over lattice exchange steps."""
    grid = field.grid
    if grid.k == 0:
        return 0.0
    worst = -np.inf
    lat = grid.lattice
    for i, j in itertools.combinations(range(grid.order), 2):
        d = np.zeros(grid.order, dtype=np.int64)
        d[i], d[j] = 1, -1
        ok = (lat[:, i] >= 1) & (lat[:, j] >= 1)
        rows = np.flatnonzero(ok)
        if rows.size == 0:
            continue
        up = grid.index_of(lat[rows] + d)
        dn = grid.index_of(lat[rows] - d)
        v = field.values
        worst = max(worst, float(np.max(0.5 * (v[up] + v[dn]) - v[rows])))
    if dirs is not None:
        interior = np.flatnonzero(grid.interior_mask)
        if interior.size:
            nodes = grid.nodes[interior]
            h = 1.0 / grid.m
            for d in dirs.vectors[dirs.n_exchange :]:
                p, q = nodes + h * d, nodes - h * d
                ok = np.all(p >= 0, axis=1) & np.all(q >= 0, axis=1)
                if not np.any(ok):
                    continue
                vp = grid.interpolate(field.values, p[ok])
                vq = grid.interpolate(field.values, q[ok])
                # interpolation of a concave function underestimates it,
                # so this check is one-sided and conservative
                worst = max(worst, float(np.max(0.5 * (vp + vq) - field.values[interior[ok]])))
    return max(worst, 0.0)
