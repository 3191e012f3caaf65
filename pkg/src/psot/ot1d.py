"""Exact optimal transport on the real line.

The optimal plan between two measures on R is the monotone (quantile)
coupling: sort both supports and pour mass north-west-corner style along the
two cumulative weight ladders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import (DimensionError, DiscreteMeasure, SparsePlan, as_direction, default_tie_tol,
                       project)

_BREAK_TOL = 1e-15


@dataclass(frozen=True, eq=False)
class QuantileCoupling:
    """Monotone coupling of two weighted 1D samples.

    Segment ``k`` spans cumulative mass ``[breakpoints[k], breakpoints[k+1])``
    and pairs source atom ``src[k]`` with target atom ``tgt[k]`` (original,
    unsorted indices).
    """

    breakpoints: np.ndarray
    src: np.ndarray
    tgt: np.ndarray
    n_source: int
    n_target: int

    @property
    def masses(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def pairs(self) -> np.ndarray:
        return np.stack([self.src, self.tgt], axis=1)

    def to_plan(self, weights_a, weights_b) -> SparsePlan:
        return SparsePlan.from_arrays(self.src, self.tgt, self.masses, weights_a, weights_b)

    def cost(self, values_a, values_b) -> float:
        d = np.asarray(values_a)[self.src] - np.asarray(values_b)[self.tgt]
        return float(np.dot(self.masses, d * d))


def _check_weights(w, name):
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size == 0:
        raise ValueError(f"{name}: empty")
    if np.any(w < 0):
        raise ValueError(f"{name}: negative weight")
    if abs(w.sum() - 1.0) > 1e-10:
        raise ValueError(f"{name}: weights sum to {w.sum()!r}, expected 1 within 1e-10")
    return w


def quantile_coupling(values_a, weights_a, values_b, weights_b) -> QuantileCoupling:
    """Monotone coupling between ``sum a_i delta_{u_i}`` and ``sum b_j delta_{v_j}``.

    Ties inside each input are broken by a stable sort, which does not change
    the coupling as a measure on R x R.
    """
    va = np.asarray(values_a, dtype=float).reshape(-1)
    vb = np.asarray(values_b, dtype=float).reshape(-1)
    wa = _check_weights(weights_a, "weights_a")
    wb = _check_weights(weights_b, "weights_b")
    if va.shape != wa.shape or vb.shape != wb.shape:
        raise ValueError("values and weights must have matching lengths")
    if not (np.all(np.isfinite(va)) and np.all(np.isfinite(vb))):
        raise ValueError("values must be finite")
    pa = np.argsort(va, kind="stable")
    pb = np.argsort(vb, kind="stable")
    ca = np.cumsum(wa[pa])
    cb = np.cumsum(wb[pb])
    ca[-1] = cb[-1] = 1.0
    bp = np.unique(np.concatenate(([0.0], ca, cb)))
    bp = bp[(bp >= 0.0) & (bp <= 1.0)]
    # drop slivers created by rounding in the two cumulative sums
    keep = np.ones(bp.shape[0], dtype=bool)
    keep[1:] = np.diff(bp) > _BREAK_TOL
    bp = bp[keep]
    bp[-1] = 1.0
    mid = 0.5 * (bp[:-1] + bp[1:])
    ia = np.minimum(np.searchsorted(ca, mid, side="right"), pa.size - 1)
    ib = np.minimum(np.searchsorted(cb, mid, side="right"), pb.size - 1)
    return QuantileCoupling(bp, pa[ia], pb[ib], va.size, vb.size)


def w2_1d(values_a, weights_a, values_b, weights_b) -> float:
    """Squared 2-Wasserstein distance between two weighted samples of R."""
    q = quantile_coupling(values_a, weights_a, values_b, weights_b)
    return q.cost(values_a, values_b)


def w2_1d_sorted_uniform(sorted_a, sorted_b) -> float:
    d = np.asarray(sorted_a) - np.asarray(sorted_b)
    return float(np.mean(d * d))


def projected_middle(mu1: DiscreteMeasure, mu2: DiscreteMeasure, theta, tie_tol=None) -> DiscreteMeasure:
    """Wasserstein midpoint of the projections of ``mu1`` and ``mu2``, embedded on R theta.

    Atoms whose positions on the line lie within ``tie_tol`` are merged.
    """
    theta = as_direction(theta)
    if mu1.dim != mu2.dim:
        raise DimensionError("measures live in different dimensions")
    u = project(mu1, theta)
    v = project(mu2, theta)
    q = quantile_coupling(u, mu1.weights, v, mu2.weights)
    t = 0.5 * (u[q.src] + v[q.tgt])
    mass = q.masses
    if tie_tol is None:
        tie_tol = default_tie_tol(t)
    # t is non-decreasing along segments
    new = np.ones(t.shape[0], dtype=bool)
    new[1:] = np.diff(t) > tie_tol
    gid = np.cumsum(new) - 1
    m = np.bincount(gid, weights=mass)
    pos = np.bincount(gid, weights=mass * t) / m
    return DiscreteMeasure(pos[:, None] * theta.theta[None, :], m / m.sum())
