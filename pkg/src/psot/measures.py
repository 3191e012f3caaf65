"""Discrete measures, directions, projections and the sparse plan container.

Everything downstream consumes :class:`DiscreteMeasure` and produces
:class:`SparsePlan`. Indices are 0-based throughout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WEIGHT_TOL = 1e-12
MARGINAL_TOL = 1e-10


class DimensionError(ValueError):
    pass


class PlanValidationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finite weighted point cloud ``sum_i w_i delta_{x_i}`` in R^d.

    Parameters
    ----------
    points : array-like, shape (n, d)
    weights : array-like, shape (n,), optional
        Uniform ``1/n`` if omitted. Must be strictly positive and sum to one.
    """

    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ValueError(f"points must have shape (n, d) with n, d >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        n = pts.shape[0]
        if self.weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape[0] != n:
                raise ValueError(f"{w.shape[0]} weights for {n} points")
            if np.any(w <= 0):
                raise ValueError("zero or negative weight atoms are not allowed")
            if abs(w.sum() - 1.0) > WEIGHT_TOL * max(1, n):
                raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.n) <= WEIGHT_TOL))

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        return cls(np.asarray(points, dtype=float))

    def with_points(self, points) -> "DiscreteMeasure":
        return DiscreteMeasure(points, self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def __repr__(self):
        return f"DiscreteMeasure(n={self.n}, d={self.dim}, uniform={self.is_uniform})"


@dataclass(frozen=True, eq=False)
class Direction:
    """Unit vector of R^d. Non-unit input is rejected; use :meth:`normalized`."""

    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=float).reshape(-1)
        if t.size == 0:
            raise ValueError("empty direction")
        if abs(np.linalg.norm(t) - 1.0) > 1e-12:
            raise ValueError(f"direction must have unit norm, got {np.linalg.norm(t)!r}")
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)

    @classmethod
    def normalized(cls, v) -> "Direction":
        v = np.asarray(v, dtype=float).reshape(-1)
        nrm = np.linalg.norm(v)
        if nrm == 0:
            raise ValueError("cannot normalize the zero vector")
        return cls(v / nrm)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def __repr__(self):
        return f"Direction({np.array2string(self.theta, precision=4)})"


def as_direction(theta) -> Direction:
    if isinstance(theta, Direction):
        return theta
    return Direction.normalized(theta)


def project(mu: DiscreteMeasure, theta) -> np.ndarray:
    """Return ``theta^T x_i`` for every atom of ``mu``."""
    theta = as_direction(theta)
    if theta.dim != mu.dim:
        raise DimensionError(f"direction has dim {theta.dim}, measure has dim {mu.dim}")
    return mu.points @ theta.theta


def default_tie_tol(values) -> float:
    values = np.asarray(values, dtype=float)
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    return 1e-9 * (scale + 1.0)


@dataclass(frozen=True, eq=False)
class TieGroups:
    """Partition of indices into groups of (numerically) equal projected value.

    ``groups[g]`` lists the member indices in increasing index order, and
    ``values[g]`` (the group mean) increases strictly with ``g``.
    """

    group_of: np.ndarray
    groups: list
    values: np.ndarray

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.groups], dtype=int)

    @property
    def tie_free(self) -> bool:
        return self.n_groups == self.group_of.shape[0]

    def masses(self, weights) -> np.ndarray:
        return np.bincount(self.group_of, weights=np.asarray(weights, float), minlength=self.n_groups)


def sort_with_groups(values, tie_tol: float | None = None):
    """Stable sort of ``values`` with transitive merging of gaps ``<= tie_tol``.

    Returns
    -------
    perm : ndarray of int
        ``values[perm]`` is non-decreasing; ties keep their original order.
    groups : TieGroups
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    if tie_tol is None:
        tie_tol = default_tie_tol(values)
    if tie_tol < 0:
        raise ValueError("tie_tol must be nonnegative")
    perm = np.argsort(values, kind="stable")
    sv = values[perm]
    new_group = np.empty(sv.shape[0], dtype=bool)
    if sv.size:
        new_group[0] = True
        new_group[1:] = np.diff(sv) > tie_tol
    gid_sorted = np.cumsum(new_group) - 1
    n_groups = int(gid_sorted[-1]) + 1 if sv.size else 0
    group_of = np.empty_like(gid_sorted)
    group_of[perm] = gid_sorted
    starts = np.flatnonzero(new_group)
    bounds = np.append(starts, sv.size)
    # stable sort => members of a group appear in increasing index order
    groups = [perm[bounds[g]:bounds[g + 1]] for g in range(n_groups)]
    sums = np.bincount(gid_sorted, weights=sv, minlength=n_groups)
    counts = np.diff(bounds)
    vals = sums / counts
    return perm, TieGroups(group_of=group_of, groups=groups, values=vals)


def has_ties(sorted_values, tie_tol: float) -> bool:
    return bool(sorted_values.size > 1 and np.min(np.diff(sorted_values)) <= tie_tol)


def sample_sphere(d: int, L: int, seed=None) -> np.ndarray:
    """``L`` directions drawn uniformly on S^{d-1}, shape (L, d).

    Gaussian vectors normalised to unit length; deterministic given ``seed``.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if L < 1:
        raise ValueError("L must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = rng.standard_normal((L, d))
    nrm = np.linalg.norm(g, axis=1, keepdims=True)
    # a numerically zero draw is astronomically unlikely, but keep directions finite
    bad = nrm[:, 0] < 1e-300
    if np.any(bad):
        g[bad] = 0.0
        g[bad, 0] = 1.0
        nrm[bad] = 1.0
    return g / nrm


@dataclass(eq=False)
class SparsePlan:
    """Coupling stored as ``(i, j, mass)`` triplets.

    Use :func:`SparsePlan.from_arrays` to build one (duplicates are merged and
    non-positive masses dropped); :meth:`validate` checks the marginals.
    """

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    source_marginal: np.ndarray
    target_marginal: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, rows, cols, mass, source_marginal, target_marginal, meta=None, drop_below=0.0):
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        mass = np.asarray(mass, dtype=float).reshape(-1)
        a = np.asarray(source_marginal, dtype=float)
        b = np.asarray(target_marginal, dtype=float)
        m = b.shape[0]
        key = rows * m + cols
        uniq, inv = np.unique(key, return_inverse=True)
        merged = np.bincount(inv, weights=mass, minlength=uniq.shape[0])
        keep = merged > drop_below
        uniq, merged = uniq[keep], merged[keep]
        return cls(uniq // m, uniq % m, merged, a, b, dict(meta or {}))

    @classmethod
    def from_permutation(cls, source_idx, target_idx, n):
        w = np.full(n, 1.0 / n)
        return cls.from_arrays(source_idx, target_idx, np.full(len(source_idx), 1.0 / n), w, w)

    @classmethod
    def from_dense(cls, P, source_marginal=None, target_marginal=None, atol=0.0):
        P = np.asarray(P, dtype=float)
        a = P.sum(1) if source_marginal is None else source_marginal
        b = P.sum(0) if target_marginal is None else target_marginal
        r, c = np.nonzero(P > atol)
        return cls.from_arrays(r, c, P[r, c], a, b)

    @property
    def n_source(self) -> int:
        return self.source_marginal.shape[0]

    @property
    def n_target(self) -> int:
        return self.target_marginal.shape[0]

    @property
    def nnz(self) -> int:
        return self.mass.shape[0]

    def todense(self) -> np.ndarray:
        P = np.zeros((self.n_source, self.n_target))
        np.add.at(P, (self.rows, self.cols), self.mass)
        return P

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.mass, minlength=self.n_source)

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.mass, minlength=self.n_target)

    def transpose(self) -> "SparsePlan":
        return SparsePlan.from_arrays(self.cols, self.rows, self.mass, self.target_marginal,
                                      self.source_marginal, self.meta)

    def cost(self, X, Y) -> float:
        X = np.asarray(X, float)
        Y = np.asarray(Y, float)
        diff = X[self.rows] - Y[self.cols]
        return float(np.dot(self.mass, np.einsum("ij,ij->i", diff, diff)))

    def validate(self, tol: float = MARGINAL_TOL) -> "SparsePlan":
        if np.any(self.mass <= 0):
            raise PlanValidationError("plan has non-positive masses")
        if self.nnz and (self.rows.min() < 0 or self.rows.max() >= self.n_source
                         or self.cols.min() < 0 or self.cols.max() >= self.n_target):
            raise PlanValidationError("plan index out of range")
        key = self.rows * self.n_target + self.cols
        if np.unique(key).shape[0] != key.shape[0]:
            raise PlanValidationError("duplicate (i, j) entries")
        err_r = np.max(np.abs(self.row_sums() - self.source_marginal))
        err_c = np.max(np.abs(self.col_sums() - self.target_marginal))
        if err_r > tol or err_c > tol:
            raise PlanValidationError(f"marginal violation: rows {err_r:.3e}, cols {err_c:.3e}")
        return self

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "mass"])
            for i, j, m in zip(self.rows.tolist(), self.cols.tolist(), self.mass.tolist()):
                w.writerow([i, j, repr(m)])

    @classmethod
    def from_csv(cls, path, source_marginal, target_marginal):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls.from_arrays(data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2],
                               source_marginal, target_marginal)

    def to_json(self) -> str:
        return json.dumps({
            "n_source": self.n_source,
            "n_target": self.n_target,
            "source_marginal": self.source_marginal.tolist(),
            "target_marginal": self.target_marginal.tolist(),
            "entries": [[int(i), int(j), float(m)] for i, j, m in zip(self.rows, self.cols, self.mass)],
            "meta": self.meta,
        })

    @classmethod
    def from_json(cls, text: str) -> "SparsePlan":
        d = json.loads(text)
        e = np.asarray(d["entries"], dtype=float).reshape(-1, 3)
        return cls.from_arrays(e[:, 0].astype(np.int64), e[:, 1].astype(np.int64), e[:, 2],
                               d["source_marginal"], d["target_marginal"], d.get("meta"))


def load_cloud(path) -> DiscreteMeasure:
    """Read a CSV point cloud; a last column with header ``weight`` holds weights.

    A header row is optional when no weight column is present.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty point cloud")
    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header = [c.strip().lower() for c in rows[0]]
        rows = rows[1:]
    data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    if header is not None and header[-1] == "weight":
        w = data[:, -1]
        return DiscreteMeasure(data[:, :-1], w / w.sum() if abs(w.sum() - 1) < 1e-9 else w)
    return DiscreteMeasure(data)


def save_cloud(mu: DiscreteMeasure, path, with_weights: bool | None = None):
    if with_weights is None:
        with_weights = not mu.is_uniform
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"x{k}" for k in range(mu.dim)] + (["weight"] if with_weights else [])
        w.writerow(header)
        for k in range(mu.n):
            row = [repr(float(v)) for v in mu.points[k]]
            if with_weights:
                row.append(repr(float(mu.weights[k])))
            w.writerow(row)
