"""Pivot Sliced discrepancy PS_theta, its plan, and min-PS over directions.

PS_theta is evaluated as a constrained Kantorovich problem: couplings of
``mu1`` and ``mu2`` whose push-forward by the projection equals the 1D optimal
plan between the projected measures. With the projected values grouped into
tie groups ``I_a`` (source) and ``J_b`` (target), that constraint says each
block ``I_a x J_b`` carries exactly the 1D plan mass ``c_ab``.

Without ties on either side, the constraint leaves a single feasible plan
(sorted matching); with ties only the blocks touched by a tie group need an
LP.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import connected_components

from .exact import LinearProgram, SizeGuardError, lp_solve, sq_cost_matrix_exact
from .measures import (DimensionError, DiscreteMeasure, Direction, SparsePlan, TieGroups, as_direction,
                       default_tie_tol, has_ties, project, sample_sphere, sort_with_groups)
from .ot1d import quantile_coupling

MAX_BLOCK_VARS = 10_000
MONGE_MAX_ENUM = 1_000_000


class DegeneratePointsError(ValueError):
    pass


@dataclass
class BlockConstraint:
    """Active blocks ``(a, b)`` of the 1D plan between tie groups and their masses."""

    a: np.ndarray
    b: np.ndarray
    mass: np.ndarray

    def check(self, source_masses, target_masses, tol=1e-10):
        if np.any(self.mass <= 0):
            raise ValueError("block masses must be positive")
        ra = np.bincount(self.a, weights=self.mass, minlength=len(source_masses))
        rb = np.bincount(self.b, weights=self.mass, minlength=len(target_masses))
        if np.max(np.abs(ra - source_masses)) > tol or np.max(np.abs(rb - target_masses)) > tol:
            raise ValueError("block masses do not match the group masses")
        return self


@dataclass
class PivotResult:
    theta: Direction
    cost_sq: float
    plan: SparsePlan
    middle: DiscreteMeasure | None
    tie_free: bool
    meta: dict = field(default_factory=dict)

    @property
    def cost(self) -> float:
        return math.sqrt(max(self.cost_sq, 0.0))


def _tie_tol(u, v, tie_tol):
    if tie_tol is not None:
        return tie_tol
    return max(default_tie_tol(u), default_tie_tol(v))


def block_constraints(gx: TieGroups, wx, gy: TieGroups, wy) -> BlockConstraint:
    """Masses ``c_ab`` sent from source group ``a`` to target group ``b`` by the 1D plan."""
    ma = gx.masses(wx)
    mb = gy.masses(wy)
    q = quantile_coupling(gx.values, ma / ma.sum(), gy.values, mb / mb.sum())
    # q.src/q.tgt index groups (group values are already sorted)
    key = q.src * gy.n_groups + q.tgt
    uniq, inv = np.unique(key, return_inverse=True)
    mass = np.bincount(inv, weights=q.masses)
    return BlockConstraint(uniq // gy.n_groups, uniq % gy.n_groups, mass)


def _check_pair(mu1, mu2, theta):
    theta = as_direction(theta)
    if mu1.dim != mu2.dim:
        raise DimensionError("measures live in different dimensions")
    if theta.dim != mu1.dim:
        raise DimensionError(f"direction has dim {theta.dim}, measures have dim {mu1.dim}")
    return theta


def _sorted_matching_cost(X, Y, px, py):
    d = X[px] - Y[py]
    return float(np.einsum("ij,ij->", d, d) / X.shape[0])


def _fast_path_ok(mu1, mu2):
    return mu1.n == mu2.n and mu1.is_uniform and mu2.is_uniform


def _solve_blocks_lp(X, Y, wx, wy, gx, gy, blocks, method="auto"):
    """Constrained Kantorovich LP restricted to active blocks, split into connected components."""
    n, m = X.shape[0], Y.shape[0]
    # variables: every (i, j) inside an active block
    var_i, var_j, var_blk = [], [], []
    for k, (a, b) in enumerate(zip(blocks.a, blocks.b)):
        I = gx.groups[a]
        J = gy.groups[b]
        ii, jj = np.meshgrid(I, J, indexing="ij")
        var_i.append(ii.ravel())
        var_j.append(jj.ravel())
        var_blk.append(np.full(ii.size, k))
    var_i = np.concatenate(var_i)
    var_j = np.concatenate(var_j)
    var_blk = np.concatenate(var_blk)
    # components over atoms: source i <-> node i, target j <-> node n + j
    g = sparse.coo_matrix((np.ones(var_i.size), (var_i, n + var_j)), shape=(n + m, n + m))
    n_comp, labels = connected_components(g, directed=False)
    comp_of_var = labels[var_i]
    order = np.argsort(comp_of_var, kind="stable")
    splits = np.flatnonzero(np.diff(comp_of_var[order])) + 1
    rows, cols, mass = [], [], []
    total = 0.0
    lp_vars = 0
    for idx in np.split(order, splits):
        vi, vj, vb = var_i[idx], var_j[idx], var_blk[idx]
        if idx.size == 1:
            # a singleton block: the pair is forced
            rows.append(vi)
            cols.append(vj)
            mass.append(blocks.mass[vb])
            d = X[vi[0]] - Y[vj[0]]
            total += float(blocks.mass[vb[0]] * (d @ d))
            continue
        if idx.size > MAX_BLOCK_VARS:
            raise SizeGuardError(
                f"tied block subproblem has {idx.size} variables (limit {MAX_BLOCK_VARS}); "
                "jitter the inputs or use the tie-free fast path")
        lp_vars += idx.size
        ui, ri = np.unique(vi, return_inverse=True)
        uj, rj = np.unique(vj, return_inverse=True)
        ub, rb = np.unique(vb, return_inverse=True)
        nv = idx.size
        cols_ix = np.arange(nv)
        A = sparse.vstack([
            sparse.csr_matrix((np.ones(nv), (ri, cols_ix)), shape=(ui.size, nv)),
            sparse.csr_matrix((np.ones(nv), (rj, cols_ix)), shape=(uj.size, nv)),
            sparse.csr_matrix((np.ones(nv), (rb, cols_ix)), shape=(ub.size, nv)),
        ]).tocsr()
        b = np.concatenate([wx[ui], wy[uj], blocks.mass[ub]])
        d = X[vi] - Y[vj]
        c = np.einsum("ij,ij->i", d, d)
        res = lp_solve(LinearProgram(c=c, A_eq=A, b_eq=b), method)
        x = np.maximum(res.x, 0.0)
        keep = x > 1e-15
        rows.append(vi[keep])
        cols.append(vj[keep])
        mass.append(x[keep])
        total += float(c @ x)
    plan = SparsePlan.from_arrays(np.concatenate(rows), np.concatenate(cols), np.concatenate(mass), wx, wy)
    return total, plan, lp_vars


def _solve_uniform_components(X, Y, px, py, tie_x, tie_y):
    """Uniform, equal-size inputs with ties: solve each tied run of sorted positions.

    ``tie_x[k]`` is True when sorted positions ``k`` and ``k+1`` of the source
    are tied (same for ``tie_y``). Between consecutive cuts, the feasible
    couplings are exactly the couplings supported on the active blocks, since
    the block graph of a monotone 1D plan is a forest; each run is therefore
    an assignment problem with forbidden pairs.
    """
    n = X.shape[0]
    linked = tie_x | tie_y
    src = px.copy()
    tgt = py.copy()
    total = 0.0
    if np.any(linked):
        # run boundaries in sorted-position space
        starts = np.flatnonzero(np.diff(np.concatenate(([0], linked.astype(np.int8)))) == 1)
        ends = np.flatnonzero(np.diff(np.concatenate((linked.astype(np.int8), [0]))) == -1) + 1
        gx = np.concatenate(([0], np.cumsum(~tie_x)))  # source group id per sorted position
        gy = np.concatenate(([0], np.cumsum(~tie_y)))
        # a two-position run allows both pairings; keep the cheaper one
        pair = ends - starts == 1
        if np.any(pair):
            s0 = starts[pair]
            i0, i1, j0, j1 = px[s0], px[s0 + 1], py[s0], py[s0 + 1]
            keep = (np.sum((X[i0] - Y[j0]) ** 2, 1) + np.sum((X[i1] - Y[j1]) ** 2, 1)
                    <= np.sum((X[i0] - Y[j1]) ** 2, 1) + np.sum((X[i1] - Y[j0]) ** 2, 1))
            tgt[s0] = np.where(keep, j0, j1)
            tgt[s0 + 1] = np.where(keep, j1, j0)
        for s, e in zip(starts[~pair], ends[~pair]):
            pos = np.arange(s, e + 1)
            I = px[pos]
            J = py[pos]
            # block (a, b) is active iff group intervals overlap in position space
            ga, gb = gx[pos], gy[pos]
            a_lo = {a: pos[ga == a].min() for a in np.unique(ga)}
            a_hi = {a: pos[ga == a].max() for a in np.unique(ga)}
            b_lo = {b: pos[gb == b].min() for b in np.unique(gb)}
            b_hi = {b: pos[gb == b].max() for b in np.unique(gb)}
            lo = np.maximum(np.array([a_lo[a] for a in ga])[:, None], np.array([b_lo[b] for b in gb])[None, :])
            hi = np.minimum(np.array([a_hi[a] for a in ga])[:, None], np.array([b_hi[b] for b in gb])[None, :])
            C = sq_cost_matrix_exact(X[I], Y[J])
            C = np.where(lo <= hi, C, np.inf)
            r, c = linear_sum_assignment(C)
            src[pos] = I[r]
            tgt[pos] = J[c]
    d = X[src] - Y[tgt]
    total = float(np.einsum("ij,ij->", d, d) / n)
    return total, src, tgt


def ps_theta(mu1: DiscreteMeasure, mu2: DiscreteMeasure, theta, tie_tol: float | None = None,
             solver: str = "auto", with_middle: bool = True, exact_ties: bool = True) -> PivotResult:
    """Squared Pivot Sliced discrepancy along ``theta`` and an optimal plan.

    Parameters
    ----------
    tie_tol : float, optional
        Projected values closer than this are treated as equal. Defaults to
        ``1e-9 * (max|value| + 1)``.
    solver : {"auto", "lp", "assignment"}
        How tied blocks are resolved. ``"lp"`` solves the block-constrained
        Kantorovich LP (vertex solution); ``"assignment"`` (uniform inputs of
        equal size only) solves an assignment problem restricted to the
        active blocks. ``"auto"`` uses the assignment route when allowed.
    exact_ties : bool
        If False, ties are broken by the stable sort and the sorted matching
        is returned regardless; this is only an upper bound on PS_theta.
    """
    theta = _check_pair(mu1, mu2, theta)
    X, Y = mu1.points, mu2.points
    u = X @ theta.theta
    v = Y @ theta.theta
    tol = _tie_tol(u, v, tie_tol)
    px = np.argsort(u, kind="stable")
    py = np.argsort(v, kind="stable")
    uniform = _fast_path_ok(mu1, mu2)
    tie_x = np.diff(u[px]) <= tol
    tie_y = np.diff(v[py]) <= tol
    tie_free = not (np.any(tie_x) or np.any(tie_y))
    meta = {"tie_tol": tol}
    if uniform and (tie_free or not exact_ties):
        cost = _sorted_matching_cost(X, Y, px, py)
        plan = SparsePlan.from_arrays(px, py, np.full(mu1.n, 1.0 / mu1.n), mu1.weights, mu2.weights)
        meta["path"] = "sorted" if tie_free else "sorted-stable"
    elif uniform and solver in ("auto", "assignment"):
        cost, src, tgt = _solve_uniform_components(X, Y, px, py, tie_x, tie_y)
        plan = SparsePlan.from_arrays(src, tgt, np.full(mu1.n, 1.0 / mu1.n), mu1.weights, mu2.weights)
        meta["path"] = "assignment"
    else:
        if solver == "assignment":
            raise ValueError("assignment solver needs uniform measures of equal size")
        _, gx = sort_with_groups(u, tol)
        _, gy = sort_with_groups(v, tol)
        blocks = block_constraints(gx, mu1.weights, gy, mu2.weights)
        cost, plan, nvars = _solve_blocks_lp(X, Y, mu1.weights, mu2.weights, gx, gy, blocks,
                                             method="auto" if solver in ("auto", "lp") else solver)
        meta["path"] = "lp"
        meta["lp_vars"] = nvars
    middle = None
    if with_middle:
        from .ot1d import projected_middle

        middle = projected_middle(mu1, mu2, theta)
    return PivotResult(theta, cost, plan, middle, tie_free, meta)


def ps_theta_monge_oracle(mu1: DiscreteMeasure, mu2: DiscreteMeasure, theta, tie_tol=None,
                          max_enum: int = MONGE_MAX_ENUM):
    """Brute-force PS_theta^2 over permutation pairs that sort both projections.

    Enumerates every ``sigma`` that only permutes inside source tie groups and
    every ``tau`` that only permutes inside target tie groups.

    Returns
    -------
    cost_sq : float
    (sigma, tau) : tuple of ndarray
        Optimal pair; position ``k`` matches ``x[sigma[k]]`` with ``y[tau[k]]``.
    """
    theta = _check_pair(mu1, mu2, theta)
    if not _fast_path_ok(mu1, mu2):
        raise ValueError("the Monge oracle needs uniform measures with equal atom counts")
    u = project(mu1, theta)
    v = project(mu2, theta)
    tol = _tie_tol(u, v, tie_tol)
    px, gx = sort_with_groups(u, tol)
    py, gy = sort_with_groups(v, tol)
    count = math.prod(math.factorial(s) for s in gx.sizes) * math.prod(math.factorial(s) for s in gy.sizes)
    if count > max_enum:
        raise SizeGuardError(f"{count} permutation pairs exceed the enumeration limit {max_enum}")

    def all_sorting_perms(groups):
        per_group = [list(itertools.permutations(g.tolist())) for g in groups]
        return np.array([np.concatenate(choice) for choice in itertools.product(*per_group)], dtype=int)

    S = all_sorting_perms(gx.groups)
    T = all_sorting_perms(gy.groups)
    C = sq_cost_matrix_exact(mu1.points, mu2.points)
    n = mu1.n
    best, arg = math.inf, (None, None)
    chunk = max(1, 2_000_000 // (T.shape[0] * n))
    for s0 in range(0, S.shape[0], chunk):
        Sc = S[s0:s0 + chunk]
        costs = C[Sc[:, None, :], T[None, :, :]].sum(-1) / n
        k = np.unravel_index(np.argmin(costs), costs.shape)
        if costs[k] < best:
            best = float(costs[k])
            arg = (Sc[k[0]].copy(), T[k[1]].copy())
    return best, arg


def batch_sorted(X, Y, thetas, tie_tol=None):
    """Stable sorting permutations of the projections for a batch of directions.

    Returns ``(PX, PY, ties)`` where column ``k`` of ``PX``/``PY`` sorts the
    projections on ``thetas[k]`` and ``ties[k]`` flags a tie on either side.
    """
    U = X @ thetas.T
    V = Y @ thetas.T
    PX = np.argsort(U, axis=0, kind="stable")
    PY = np.argsort(V, axis=0, kind="stable")
    su = np.take_along_axis(U, PX, 0)
    sv = np.take_along_axis(V, PY, 0)
    if tie_tol is None:
        tol = np.maximum(1e-9 * (np.abs(U).max(0) + 1), 1e-9 * (np.abs(V).max(0) + 1))
    else:
        tol = np.full(thetas.shape[0], float(tie_tol))
    ties = np.zeros(thetas.shape[0], dtype=bool)
    if X.shape[0] > 1:
        ties = (np.diff(su, axis=0) <= tol).any(0) | (np.diff(sv, axis=0) <= tol).any(0)
    return PX, PY, ties


def _batch_sorted_costs(X, Y, thetas, tie_tol=None):
    """Sorted-matching cost for a batch of directions; also flags directions with ties."""
    PX, PY, ties = batch_sorted(X, Y, thetas, tie_tol)
    costs = np.empty(thetas.shape[0])
    for k in range(thetas.shape[0]):
        d = X[PX[:, k]] - Y[PY[:, k]]
        costs[k] = np.einsum("ij,ij->", d, d) / X.shape[0]
    return costs, ties


def ps_costs(mu1: DiscreteMeasure, mu2: DiscreteMeasure, thetas, tie_tol=None, threads: int = 1,
             exact_ties: bool = True) -> np.ndarray:
    """PS_theta^2 for each row of ``thetas`` (no plans kept)."""
    thetas = np.atleast_2d(np.asarray(thetas, float))
    if mu1.dim != mu2.dim or thetas.shape[1] != mu1.dim:
        raise DimensionError("dimension mismatch between directions and measures")
    n = max(mu1.n, mu2.n)
    costs = np.empty(thetas.shape[0])
    if _fast_path_ok(mu1, mu2) and n <= 20_000:
        chunk = max(1, 2_000_000 // n)
        for s in range(0, thetas.shape[0], chunk):
            c, ties = _batch_sorted_costs(mu1.points, mu2.points, thetas[s:s + chunk], tie_tol)
            costs[s:s + chunk] = c
            if exact_ties:
                for k in np.flatnonzero(ties):
                    costs[s + k] = ps_theta(mu1, mu2, thetas[s + k], tie_tol, with_middle=False).cost_sq
        return costs

    def one(k):
        return ps_theta(mu1, mu2, Direction.normalized(thetas[k]), tie_tol, with_middle=False,
                        exact_ties=exact_ties).cost_sq

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            costs[:] = list(ex.map(one, range(thetas.shape[0])))
    else:
        for k in range(thetas.shape[0]):
            costs[k] = one(k)
    return costs


def _refine(mu1, mu2, theta0, cost0, iters, rng, tie_tol, exact_ties, scale0=0.3):
    """(1+1) evolution strategy on the sphere; the objective is piecewise constant in theta."""
    best_t, best_c = theta0.copy(), cost0
    scale = scale0
    fails = 0
    for _ in range(iters):
        cand = best_t + scale * rng.standard_normal(best_t.shape[0])
        nrm = np.linalg.norm(cand)
        if nrm < 1e-12:
            continue
        cand /= nrm
        c = ps_costs(mu1, mu2, cand[None, :], tie_tol, exact_ties=exact_ties)[0]
        if c < best_c:
            best_t, best_c, fails = cand, c, 0
        else:
            if c == best_c:
                # drift along plateaus
                best_t = cand
            fails += 1
            if fails >= 20:
                scale *= 0.5
                fails = 0
                if scale < 1e-6:
                    scale = scale0
    return best_t, best_c


def min_ps(mu1: DiscreteMeasure, mu2: DiscreteMeasure, L: int = 50, seed=None, refine: bool = False,
           refine_iters: int = 500, tie_tol=None, directions=None, threads: int = 1,
           exact_ties: bool = True, with_middle: bool = False) -> PivotResult:
    """Minimise PS_theta over ``L`` random directions, optionally refined by local search.

    The returned result carries the winning direction; ``meta["costs"]``
    holds the sampled costs and ``meta["best_index"]`` the lowest-index
    argmin among them.
    """
    if mu1.dim != mu2.dim:
        raise DimensionError("measures live in different dimensions")
    rng = np.random.default_rng(seed)
    if directions is None:
        if L < 1:
            raise ValueError("L must be >= 1")
        directions = sample_sphere(mu1.dim, L, rng)
    directions = np.atleast_2d(np.asarray(directions, float))
    costs = ps_costs(mu1, mu2, directions, tie_tol, threads=threads, exact_ties=exact_ties)
    k = int(np.argmin(costs))
    best_t, best_c = directions[k] / np.linalg.norm(directions[k]), float(costs[k])
    if refine and refine_iters > 0:
        best_t, best_c = _refine(mu1, mu2, best_t, best_c, refine_iters, rng, tie_tol, exact_ties)
    res = ps_theta(mu1, mu2, Direction.normalized(best_t), tie_tol, with_middle=with_middle, exact_ties=exact_ties)
    res.meta.update(costs=costs, best_index=k, sampled_best=float(costs[k]), refined=bool(refine))
    return res


def _affinely_independent(P, tol=1e-9):
    if P.shape[0] <= 1:
        return True
    D = P[1:] - P[0]
    s = np.linalg.svd(D, compute_uv=False)
    return s.size == D.shape[0] and s[-1] > tol * max(1.0, s[0])


def in_general_position(P, tol=1e-9) -> bool:
    """No ``k + 2`` points of ``P`` in a ``k``-dimensional affine subspace (k < d)."""
    P = np.asarray(P, float)
    n, d = P.shape
    if n <= d + 1:
        return _affinely_independent(P, tol)
    return all(_affinely_independent(P[list(c)], tol) for c in itertools.combinations(range(n), d + 1))


def verify_full_permutation_coverage(X, Y, margin: float = 1e-9, max_n: int = 4) -> bool:
    """Check that every pair of orderings of ``X`` and ``Y`` is induced by some direction.

    For each ``(sigma, tau)`` a margin-maximising LP looks for ``theta`` in
    the unit box with ``theta^T (x_{sigma(i+1)} - x_{sigma(i)}) >= t`` and the
    same for ``Y``; the ordering pair is realisable iff the optimal ``t`` is
    positive (above ``margin``).
    """
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    n, d = X.shape
    if Y.shape != X.shape:
        raise ValueError("X and Y must have the same shape")
    if n > max_n:
        raise SizeGuardError(f"permutation enumeration limited to n <= {max_n}")
    if n == 1:
        return True
    both = np.vstack([X, Y])
    ok = in_general_position(both) if 2 * n <= d + 1 else (in_general_position(X) and in_general_position(Y))
    if not ok:
        raise DegeneratePointsError("points are not in general position")
    perms = list(itertools.permutations(range(n)))
    # variables: theta (d, free in [-1, 1]) and t (free, <= 1); maximise t
    c = np.zeros(d + 1)
    c[-1] = -1.0
    lb = np.concatenate([-np.ones(d), [-np.inf]])
    ub = np.ones(d + 1)
    for s in perms:
        Dx = X[list(s[1:])] - X[list(s[:-1])]
        for t in perms:
            Dy = Y[list(t[1:])] - Y[list(t[:-1])]
            D = np.vstack([Dx, Dy])
            A_ub = np.hstack([-D, np.ones((D.shape[0], 1))])
            res = lp_solve(LinearProgram(c=c, A_ub=A_ub, b_ub=np.zeros(D.shape[0]), lb=lb, ub=ub))
            if -res.value <= margin:
                return False
    return True
