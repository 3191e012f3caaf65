"""Lifted sliced plans, lifted cost LS_theta and Expected Sliced plans ES.

The lifted plan spreads the 1D optimal plan between tie groups back onto the
atoms: inside block ``(a, b)`` mass ``Q_ab`` is split as the product of the
within-group conditionals, ``a_i b_j / (A_a B_b) * Q_ab``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .measures import DimensionError, DiscreteMeasure, Direction, SparsePlan, as_direction, sort_with_groups
from .pivot import _tie_tol, batch_sorted, block_constraints


@dataclass
class LiftedPlan:
    theta: Direction
    plan: SparsePlan
    group_masses_source: np.ndarray  # A_i for every source atom
    group_masses_target: np.ndarray  # B_j for every target atom
    tie_tol: float = 0.0


def _groups(mu1, mu2, theta, tie_tol):
    theta = as_direction(theta)
    if mu1.dim != mu2.dim or theta.dim != mu1.dim:
        raise DimensionError("dimension mismatch between direction and measures")
    u = mu1.points @ theta.theta
    v = mu2.points @ theta.theta
    tol = _tie_tol(u, v, tie_tol)
    _, gx = sort_with_groups(u, tol)
    _, gy = sort_with_groups(v, tol)
    return theta, gx, gy, tol


def lifted_plan(mu1: DiscreteMeasure, mu2: DiscreteMeasure, theta, tie_tol=None) -> LiftedPlan:
    theta, gx, gy, tol = _groups(mu1, mu2, theta, tie_tol)
    wx, wy = mu1.weights, mu2.weights
    A = gx.masses(wx)
    B = gy.masses(wy)
    blocks = block_constraints(gx, wx, gy, wy)
    rows, cols, mass = [], [], []
    for a, b, q in zip(blocks.a, blocks.b, blocks.mass):
        I = gx.groups[a]
        J = gy.groups[b]
        rows.append(np.repeat(I, J.size))
        cols.append(np.tile(J, I.size))
        mass.append(np.outer(wx[I] / A[a], wy[J] / B[b]).ravel() * q)
    plan = SparsePlan.from_arrays(np.concatenate(rows), np.concatenate(cols), np.concatenate(mass), wx, wy,
                                  meta={"tie_tol": tol})
    return LiftedPlan(theta, plan, A[gx.group_of], B[gy.group_of], tol)


def ls_theta(mu1: DiscreteMeasure, mu2: DiscreteMeasure, theta, tie_tol=None, squared: bool = False) -> float:
    """Lifted cost ``LS_theta`` (its square if ``squared``)."""
    lp = lifted_plan(mu1, mu2, theta, tie_tol)
    c = max(lp.plan.cost(mu1.points, mu2.points), 0.0)
    return c if squared else math.sqrt(c)


def _direction_weights(directions, weights):
    directions = np.atleast_2d(np.asarray(directions, float))
    if directions.shape[0] == 0 or directions.size == 0:
        raise ValueError("at least one direction is required")
    if weights is None:
        w = np.full(directions.shape[0], 1.0 / directions.shape[0])
    else:
        w = np.asarray(weights, float).reshape(-1)
        if w.shape[0] != directions.shape[0] or np.any(w < 0) or abs(w.sum() - 1) > 1e-10:
            raise ValueError("direction weights must be nonnegative, one per direction, and sum to 1")
    return directions, w


def expected_plan(mu1: DiscreteMeasure, mu2: DiscreteMeasure, directions, weights=None, tie_tol=None,
                  drop_below: float = 0.0):
    """Average of lifted plans over ``directions``.

    Returns
    -------
    plan : SparsePlan
        Merged plan; with ``drop_below > 0`` tiny entries are removed and the
        remaining mass of each row is rescaled to keep the source marginal.
    es : float
        ``ES`` (not squared): square root of the weighted mean of ``LS_theta^2``.
    """
    directions, w = _direction_weights(directions, weights)
    if mu1.dim != mu2.dim or directions.shape[1] != mu1.dim:
        raise DimensionError("dimension mismatch between directions and measures")
    directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    rows, cols, mass = [], [], []
    es_sq = 0.0
    slow = np.ones(directions.shape[0], dtype=bool)
    if mu1.n == mu2.n and mu1.is_uniform and mu2.is_uniform:
        # tie-free directions lift to the sorted permutation
        PX, PY, ties = batch_sorted(mu1.points, mu2.points, directions, tie_tol)
        slow = ties
        fast = np.flatnonzero(~ties & (w > 0))
        if fast.size:
            r = PX[:, fast].T.ravel()
            c = PY[:, fast].T.ravel()
            m = np.repeat(w[fast] / mu1.n, mu1.n)
            rows.append(r)
            cols.append(c)
            mass.append(m)
            d = mu1.points[r] - mu2.points[c]
            es_sq += float(m @ np.einsum("ij,ij->i", d, d))
    for k in np.flatnonzero(slow & (w > 0)):
        lp = lifted_plan(mu1, mu2, Direction.normalized(directions[k]), tie_tol)
        rows.append(lp.plan.rows)
        cols.append(lp.plan.cols)
        mass.append(w[k] * lp.plan.mass)
        es_sq += w[k] * lp.plan.cost(mu1.points, mu2.points)
    plan = SparsePlan.from_arrays(np.concatenate(rows), np.concatenate(cols), np.concatenate(mass),
                                  mu1.weights, mu2.weights, meta={"n_directions": int(directions.shape[0])})
    merged_cost = plan.cost(mu1.points, mu2.points)
    if abs(merged_cost - es_sq) > 1e-10 * max(1.0, es_sq):
        raise AssertionError(f"ES cost {es_sq!r} differs from merged plan cost {merged_cost!r}")
    if drop_below > 0:
        keep = plan.mass >= drop_below
        row_mass = plan.row_sums()
        kept = np.bincount(plan.rows[keep], weights=plan.mass[keep], minlength=plan.n_source)
        scale = np.divide(row_mass, kept, out=np.ones_like(row_mass), where=kept > 0)
        plan = SparsePlan.from_arrays(plan.rows[keep], plan.cols[keep], plan.mass[keep] * scale[plan.rows[keep]],
                                      mu1.weights, mu2.weights, meta=plan.meta)
    return plan, math.sqrt(max(es_sq, 0.0))


def barycentric_projection(plan: SparsePlan, target_points) -> np.ndarray:
    """Image of each source atom: ``sum_j P_ij y_j / sum_j P_ij``."""
    Y = np.asarray(target_points, float)
    row = plan.row_sums()
    if np.any(row <= 0):
        raise ValueError(f"source atom {int(np.flatnonzero(row <= 0)[0])} carries no plan mass")
    out = np.zeros((plan.n_source, Y.shape[1]))
    np.add.at(out, plan.rows, plan.mass[:, None] * Y[plan.cols])
    return out / row[:, None]


def lifted_barycentric(mu1: DiscreteMeasure, mu2: DiscreteMeasure, theta, tie_tol=None) -> np.ndarray:
    """Barycentric image of the lifted plan without materialising the plan.

    Every atom of a source group gets the same image
    ``sum_b Q_ab * mean_{J_b} y / A_a``, so large tie groups (e.g. repeated
    pixel colours) stay cheap.
    """
    theta, gx, gy, _ = _groups(mu1, mu2, theta, tie_tol)
    wx, wy = mu1.weights, mu2.weights
    A = gx.masses(wx)
    B = gy.masses(wy)
    blocks = block_constraints(gx, wx, gy, wy)
    Y = mu2.points
    group_mean_y = np.zeros((gy.n_groups, Y.shape[1]))
    np.add.at(group_mean_y, gy.group_of, wy[:, None] * Y)
    group_mean_y /= B[:, None]
    img = np.zeros((gx.n_groups, Y.shape[1]))
    np.add.at(img, blocks.a, blocks.mass[:, None] * group_mean_y[blocks.b])
    img /= A[:, None]
    return img[gx.group_of]


def expected_barycentric(mu1: DiscreteMeasure, mu2: DiscreteMeasure, directions, weights=None,
                         tie_tol=None) -> np.ndarray:
    """Barycentric projection of the expected plan (average of per-direction images)."""
    directions, w = _direction_weights(directions, weights)
    out = np.zeros((mu1.n, mu2.dim))
    for theta, wk in zip(directions, w):
        if wk:
            out += wk * lifted_barycentric(mu1, mu2, Direction.normalized(theta), tie_tol)
    return out
