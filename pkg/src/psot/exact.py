"""Exact, desk-scale optimal transport oracles.

* :func:`lp_solve` -- generic LP; a dense two-phase simplex with Bland's rule
  (deterministic, always returns a vertex) or HiGHS dual simplex for larger
  problems.
* :func:`w2_exact` -- discrete squared 2-Wasserstein cost and optimal plan.
* :func:`w_nu_lp` -- pivot-based Wasserstein cost through a 3-plan LP.
* :func:`w_nu_disintegration` -- the same quantity from the conditional
  measures of the (unique) optimal plans towards the pivot.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse

from .measures import DimensionError, DiscreteMeasure, SparsePlan

DEFAULT_MAX_ENTRIES = 4_000_000
DEFAULT_MAX_LP_VARS = 100_000
BLAND_MAX_VARS = 400


class LPError(RuntimeError):
    pass


class InfeasibleError(LPError):
    pass


class UnboundedError(LPError):
    pass


class SizeGuardError(RuntimeError):
    """Raised when an exact solver is asked for a problem beyond its size guard."""


class NonUniquePlanError(RuntimeError):
    pass


@dataclass
class LinearProgram:
    """``min c^T x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lb <= x <= ub``.

    Constraint matrices may be dense arrays or scipy sparse matrices.
    ``lb`` defaults to 0 and ``ub`` to +inf; use ``-np.inf`` for free variables.
    """

    c: np.ndarray
    A_eq: object = None
    b_eq: np.ndarray = None
    A_ub: object = None
    b_ub: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        nv = self.c.shape[0]
        if not np.all(np.isfinite(self.c)):
            raise ValueError("objective must be finite")
        for name in ("eq", "ub"):
            A = getattr(self, f"A_{name}")
            b = getattr(self, f"b_{name}")
            if A is None:
                setattr(self, f"A_{name}", sparse.csr_matrix((0, nv)))
                setattr(self, f"b_{name}", np.zeros(0))
                continue
            A = sparse.csr_matrix(A, dtype=float)
            b = np.asarray(b, dtype=float).reshape(-1)
            if A.shape[1] != nv or A.shape[0] != b.shape[0]:
                raise ValueError(f"A_{name} has shape {A.shape}, expected ({b.shape[0]}, {nv})")
            if not (np.all(np.isfinite(A.data)) and np.all(np.isfinite(b))):
                raise ValueError("constraint coefficients must be finite")
            setattr(self, f"A_{name}", A)
            setattr(self, f"b_{name}", b)
        self.lb = np.zeros(nv) if self.lb is None else np.broadcast_to(np.asarray(self.lb, float), (nv,)).copy()
        self.ub = np.full(nv, np.inf) if self.ub is None else np.broadcast_to(np.asarray(self.ub, float), (nv,)).copy()

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]


@dataclass
class LPResult:
    value: float
    x: np.ndarray
    vertex: bool
    method: str
    iterations: int = 0


def _bland_tableau(A, b, c, eps=1e-10, max_iter=50_000):
    """Two-phase simplex on ``min c x, A x = b, x >= 0`` with Bland's rule."""
    m, n = A.shape
    neg = b < 0
    A = A.copy()
    b = b.copy()
    A[neg] *= -1
    b[neg] *= -1
    scale = max(1.0, float(np.max(np.abs(A))) if A.size else 1.0)
    # tableau columns: n structural, m artificial, rhs
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    basis = np.arange(n, n + m)
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    iters = 0

    def run(ncols):
        nonlocal iters
        while True:
            if iters > max_iter:
                raise LPError("simplex iteration limit reached")
            red = T[m, :ncols]
            cand = np.flatnonzero(red < -eps * scale)
            if cand.size == 0:
                return
            j = cand[0]
            col = T[:m, j]
            pos = col > eps * scale
            if not np.any(pos):
                raise UnboundedError("LP is unbounded")
            ratios = np.full(m, np.inf)
            ratios[pos] = T[:m, -1][pos] / col[pos]
            rmin = ratios.min()
            ties = np.flatnonzero(ratios <= rmin + eps * max(1.0, abs(rmin)))
            r = ties[np.argmin(basis[ties])]
            T[r] /= T[r, j]
            others = np.arange(m + 1) != r
            T[others] -= np.outer(T[others, j], T[r])
            basis[r] = j
            iters += 1

    run(n + m)
    if T[m, -1] < -1e-8 * max(1.0, float(np.abs(b).sum())):
        raise InfeasibleError(f"LP is infeasible (phase-one residual {-T[m, -1]:.3e})")
    # drive artificials out of the basis, dropping redundant rows
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] < n:
            continue
        nz = np.flatnonzero(np.abs(T[r, :n]) > eps * scale)
        if nz.size == 0:
            keep[r] = False
            continue
        j = nz[0]
        T[r] /= T[r, j]
        others = np.arange(m + 1) != r
        T[others] -= np.outer(T[others, j], T[r])
        basis[r] = j
    rows = np.flatnonzero(keep)
    T = np.vstack([T[rows][:, list(range(n)) + [n + m]], np.zeros((1, n + 1))])
    basis = basis[rows]
    m = rows.shape[0]
    T[m, :n] = c
    T[m, -1] = 0.0
    for r in range(m):
        T[m] -= c[basis[r]] * T[r]
    run(n)
    x = np.zeros(n)
    x[basis] = T[:m, -1]
    # re-solve with the final basis to shed accumulated pivoting error
    xb, *_ = np.linalg.lstsq(A[keep][:, basis], b[keep], rcond=None)
    if np.all(xb >= -1e-9 * max(1.0, float(np.abs(b).max()))):
        x[basis] = np.maximum(xb, 0.0)
    x[np.abs(x) < eps] = 0.0
    return x, iters


def _to_standard_form(lp: LinearProgram):
    """Rewrite bounds/inequalities so that all variables are >= 0 and rows are equalities.

    Returns ``(A, b, c, recover)`` with ``recover(z) -> x``.
    """
    nv = lp.n_vars
    cols = []  # (orig var, sign, offset)
    for k in range(nv):
        lo, hi = lp.lb[k], lp.ub[k]
        if np.isfinite(lo):
            cols.append((k, 1.0, lo))
        elif np.isfinite(hi):
            cols.append((k, -1.0, hi))
        else:
            cols.append((k, 1.0, 0.0))
            cols.append((k, -1.0, 0.0))
    M = np.zeros((nv, len(cols)))
    off = np.zeros(nv)
    for p, (k, s, o) in enumerate(cols):
        M[k, p] = s
        if s > 0 or np.isfinite(o):
            off[k] = o
    # x = M z + off
    Aeq = lp.A_eq.toarray()
    Aub = lp.A_ub.toarray()
    ub_rows, ub_rhs = [], []
    for k in range(nv):
        lo, hi = lp.lb[k], lp.ub[k]
        if np.isfinite(lo) and np.isfinite(hi):
            row = np.zeros(nv)
            row[k] = 1.0
            ub_rows.append(row)
            ub_rhs.append(hi)
    if ub_rows:
        Aub = np.vstack([Aub, np.array(ub_rows)])
    b_ub = np.concatenate([lp.b_ub, np.array(ub_rhs)]) if ub_rows else lp.b_ub
    n_slack = Aub.shape[0]
    Az_eq = Aeq @ M
    Az_ub = Aub @ M
    A = np.zeros((Az_eq.shape[0] + n_slack, M.shape[1] + n_slack))
    A[:Az_eq.shape[0], :M.shape[1]] = Az_eq
    A[Az_eq.shape[0]:, :M.shape[1]] = Az_ub
    A[Az_eq.shape[0]:, M.shape[1]:] = np.eye(n_slack)
    b = np.concatenate([lp.b_eq - Aeq @ off, b_ub - Aub @ off])
    c = np.concatenate([M.T @ lp.c, np.zeros(n_slack)])
    nz = M.shape[1]

    def recover(z):
        return M @ z[:nz] + off

    return A, b, c, recover


def lp_solve(lp: LinearProgram, method: str = "auto") -> LPResult:
    """Solve ``lp`` to optimality and return a basic (vertex) optimal solution.

    Parameters
    ----------
    method : {"auto", "bland", "highs"}
        ``"bland"`` is a dense tableau simplex with Bland's anti-cycling rule;
        ``"highs"`` calls HiGHS dual simplex through scipy. ``"auto"`` picks
        Bland up to a few hundred variables.

    Raises
    ------
    InfeasibleError, UnboundedError
    """
    if method == "auto":
        method = "bland" if lp.n_vars <= BLAND_MAX_VARS else "highs"
    if method == "bland":
        A, b, c, recover = _to_standard_form(lp)
        z, iters = _bland_tableau(A, b, c)
        x = recover(z)
        return LPResult(float(lp.c @ x), x, True, "bland", iters)
    if method == "highs":
        bounds = np.stack([np.where(np.isfinite(lp.lb), lp.lb, -np.inf),
                           np.where(np.isfinite(lp.ub), lp.ub, np.inf)], axis=1)
        bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
                  for lo, hi in bounds]
        res = optimize.linprog(
            lp.c,
            A_ub=lp.A_ub if lp.A_ub.shape[0] else None,
            b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
            A_eq=lp.A_eq if lp.A_eq.shape[0] else None,
            b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
            bounds=bounds,
            method="highs-ds",
        )
        if res.status == 2:
            raise InfeasibleError(f"LP is infeasible: {res.message}")
        if res.status == 3:
            raise UnboundedError(f"LP is unbounded: {res.message}")
        if res.status != 0:
            raise LPError(f"HiGHS failed: {res.message}")
        return LPResult(float(res.fun), np.asarray(res.x), True, "highs", int(res.nit))
    raise ValueError(f"unknown LP method {method!r}")


def transport_lp(C, a, b) -> LinearProgram:
    """Kantorovich LP for cost matrix ``C`` (n x m) and marginals ``a``, ``b``."""
    n, m = C.shape
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    A = sparse.vstack([rows, cols]).tocsr()
    return LinearProgram(c=C.reshape(-1), A_eq=A, b_eq=np.concatenate([a, b]))


def sq_cost_matrix(X, Y) -> np.ndarray:
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    C = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    np.maximum(C, 0.0, out=C)
    return C


def sq_cost_matrix_exact(X, Y) -> np.ndarray:
    d = np.asarray(X, float)[:, None, :] - np.asarray(Y, float)[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _guard(n, m, max_entries):
    if n * m > max_entries:
        raise SizeGuardError(
            f"exact OT on {n} x {m} atoms needs a dense {n}x{m} cost matrix "
            f"(limit {max_entries} entries); use a sliced method (minps / es / sw) instead")


def w2_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, max_entries: int = DEFAULT_MAX_ENTRIES,
             method: str = "auto"):
    """Exact squared 2-Wasserstein cost and an optimal plan.

    Uniform measures with the same number of atoms are solved as an
    assignment problem, so the plan is a permutation. Other inputs go
    through the transportation LP.

    Returns
    -------
    cost : float
    plan : SparsePlan
    """
    if mu.dim != nu.dim:
        raise DimensionError("measures live in different dimensions")
    _guard(mu.n, nu.n, max_entries)
    C = sq_cost_matrix_exact(mu.points, nu.points) if mu.n * nu.n <= 250_000 else sq_cost_matrix(mu.points, nu.points)
    if method == "auto" and mu.n == nu.n and mu.is_uniform and nu.is_uniform:
        from scipy.optimize import linear_sum_assignment

        r, c = linear_sum_assignment(C)
        plan = SparsePlan.from_arrays(r, c, np.full(mu.n, 1.0 / mu.n), mu.weights, nu.weights,
                                      meta={"solver": "assignment"})
        return float(C[r, c].sum() / mu.n), plan
    lp_method = "auto" if method in ("auto", "lp") else method
    res = lp_solve(transport_lp(C, mu.weights, nu.weights), lp_method)
    P = np.maximum(res.x.reshape(mu.n, nu.n), 0.0)
    r, c = np.nonzero(P > 1e-14)
    plan = SparsePlan.from_arrays(r, c, P[r, c], mu.weights, nu.weights, meta={"solver": res.method})
    return float(np.sum(C * P)), plan


@dataclass
class ThreePlan:
    """Coupling of (pivot, mu1, mu2): ``entries`` rows are ``(k, i, j, mass)``."""

    k: np.ndarray
    i: np.ndarray
    j: np.ndarray
    mass: np.ndarray
    pivot_marginal: np.ndarray
    marginal_1: np.ndarray
    marginal_2: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def entries(self) -> np.ndarray:
        return np.column_stack([self.k, self.i, self.j, self.mass])

    def bimarginal(self, which: str) -> SparsePlan:
        """``"k1"``, ``"k2"`` or ``"12"`` two-dimensional marginal."""
        src = {"k1": (self.k, self.i, self.pivot_marginal, self.marginal_1),
               "k2": (self.k, self.j, self.pivot_marginal, self.marginal_2),
               "12": (self.i, self.j, self.marginal_1, self.marginal_2)}[which]
        return SparsePlan.from_arrays(src[0], src[1], self.mass, src[2], src[3])

    def validate(self, tol=1e-9):
        if np.any(self.mass <= 0):
            raise ValueError("non-positive mass in 3-plan")
        for name, idx, marg in (("pivot", self.k, self.pivot_marginal), ("mu1", self.i, self.marginal_1),
                                ("mu2", self.j, self.marginal_2)):
            s = np.bincount(idx, weights=self.mass, minlength=marg.shape[0])
            if np.max(np.abs(s - marg)) > tol:
                raise ValueError(f"3-plan {name} marginal violated by {np.max(np.abs(s - marg)):.3e}")
        return self


def w_nu_lp(nu: DiscreteMeasure, mu1: DiscreteMeasure, mu2: DiscreteMeasure,
            max_vars: int = DEFAULT_MAX_LP_VARS, method: str = "auto"):
    """Squared pivot-based Wasserstein cost between ``mu1`` and ``mu2`` with pivot ``nu``.

    Minimises ``sum ||x_i - y_j||^2 rho_kij`` over 3-plans whose (pivot, mu1)
    and (pivot, mu2) marginals are optimal couplings. A coupling is optimal
    exactly when it lives on the pairs of zero reduced cost under an optimal
    dual of the two-marginal problem, so the LP keeps only the triples whose
    two pivot pairs are tight and needs no cost side-constraints.

    Returns
    -------
    cost : float
    plan : ThreePlan
    """
    if not (nu.dim == mu1.dim == mu2.dim):
        raise DimensionError("measures live in different dimensions")
    K, I, J = nu.n, mu1.n, mu2.n
    nv = K * I * J
    if nv > max_vars:
        raise SizeGuardError(f"3-plan LP with {nv} variables exceeds the limit {max_vars}")
    C1 = sq_cost_matrix_exact(nu.points, mu1.points)
    C2 = sq_cost_matrix_exact(nu.points, mu2.points)
    C12 = sq_cost_matrix_exact(mu1.points, mu2.points)
    t1, w1 = optimal_face(C1, nu.weights, mu1.weights)
    t2, w2 = optimal_face(C2, nu.weights, mu2.weights)
    kk, ii, jj = np.meshgrid(np.arange(K), np.arange(I), np.arange(J), indexing="ij")
    kk, ii, jj = kk.ravel(), ii.ravel(), jj.ravel()
    live = t1[kk, ii] & t2[kk, jj]
    kk, ii, jj = kk[live], ii[live], jj[live]
    nl = kk.shape[0]
    var = np.arange(nl)
    A_eq = sparse.vstack([
        sparse.csr_matrix((np.ones(nl), (kk, var)), shape=(K, nl)),
        sparse.csr_matrix((np.ones(nl), (ii, var)), shape=(I, nl)),
        sparse.csr_matrix((np.ones(nl), (jj, var)), shape=(J, nl)),
    ]).tocsr()
    # the three marginal blocks are linearly dependent (all sum to 1); drop one row
    A_eq = A_eq[:-1]
    b_eq = np.concatenate([nu.weights, mu1.weights, mu2.weights])[:-1]
    lp = LinearProgram(c=C12[ii, jj], A_eq=A_eq, b_eq=b_eq)
    try:
        res = lp_solve(lp, method)
    except InfeasibleError as exc:
        raise InfeasibleError(f"3-plan LP numerically infeasible on the optimal faces: {exc}") from exc
    x = np.maximum(res.x, 0.0)
    keep = x > 1e-14
    plan = ThreePlan(kk[keep], ii[keep], jj[keep], x[keep], nu.weights.copy(), mu1.weights.copy(),
                     mu2.weights.copy(), meta={"w2sq_pivot_1": w1, "w2sq_pivot_2": w2, "solver": res.method,
                                               "lp_vars": int(nl)})
    return float(C12[ii, jj] @ x), plan


def optimal_face(C, a, b, rtol: float = 1e-9):
    """Pairs ``(i, j)`` allowed in some optimal coupling, and the optimal cost.

    Uses the duals ``(f, g)`` of the transport LP: ``P`` is optimal iff it is
    supported where ``C_ij - f_i - g_j = 0``.
    """
    res = optimize.linprog(C.reshape(-1), A_eq=transport_lp(C, a, b).A_eq, b_eq=np.concatenate([a, b]),
                           bounds=(0, None), method="highs")
    if res.status != 0:
        raise LPError(f"transport LP failed: {res.message}")
    n = C.shape[0]
    duals = res.eqlin.marginals
    reduced = C - duals[:n, None] - duals[None, n:]
    return reduced <= rtol * max(1.0, float(np.max(np.abs(C)))), float(res.fun)


def _optimal_plan_is_unique(C, a, b, base_plan, n_trials=3, seed=0):
    """Perturbation test: re-solve with tiny random costs and compare supports."""
    rng = np.random.default_rng(seed)
    base = set(zip(base_plan.rows.tolist(), base_plan.cols.tolist()))
    scale = max(1.0, float(np.max(np.abs(C))))
    for _ in range(n_trials):
        Cp = C + 1e-7 * scale * rng.standard_normal(C.shape)
        res = lp_solve(transport_lp(Cp, a, b))
        P = res.x.reshape(C.shape)
        r, c = np.nonzero(P > 1e-12)
        if set(zip(r.tolist(), c.tolist())) != base:
            return False
    return True


def _optimal_vertex_plans(C, max_n=8):
    """All optimal permutation plans for a uniform square problem (brute force)."""
    n = C.shape[0]
    if n > max_n:
        raise SizeGuardError(f"vertex enumeration limited to n <= {max_n}")
    perms = np.array(list(itertools.permutations(range(n))))
    costs = C[np.arange(n)[None, :], perms].sum(1)
    best = costs.min()
    tol = 1e-9 * max(1.0, abs(best))
    return perms[costs <= best + tol]


def w_nu_disintegration(nu: DiscreteMeasure, mu1: DiscreteMeasure, mu2: DiscreteMeasure,
                        on_nonunique: str = "raise") -> float:
    """Pivot-based Wasserstein cost from the conditionals of the optimal plans.

    Computes ``sum_k nu_k W2^2(gamma_1^{z_k}, gamma_2^{z_k})`` where
    ``gamma_i`` is the optimal plan between ``nu`` and ``mu_i`` and
    ``gamma_i^{z_k}`` its normalised ``k``-th row.

    Parameters
    ----------
    on_nonunique : {"raise", "vertices"}
        If an optimal plan is not unique, either raise
        :class:`NonUniquePlanError` or (uniform, equal sizes, n <= 8 only)
        minimise over all pairs of optimal permutation plans. The latter is
        exact whenever the minimum is attained at a vertex pair, e.g. when
        one of the two plans is unique.
    """
    if not (nu.dim == mu1.dim == mu2.dim):
        raise DimensionError("measures live in different dimensions")
    plans = []
    unique = []
    for mu in (mu1, mu2):
        C = sq_cost_matrix_exact(nu.points, mu.points)
        _, plan = w2_exact(nu, mu, method="lp")
        plans.append([plan.todense()])
        unique.append(_optimal_plan_is_unique(C, nu.weights, mu.weights, plan))
        if not unique[-1]:
            if on_nonunique != "vertices":
                raise NonUniquePlanError(
                    "optimal plan towards the pivot is not unique; use w_nu_lp instead")
            if not (nu.is_uniform and mu.is_uniform and nu.n == mu.n):
                raise NonUniquePlanError("vertex enumeration needs uniform measures of equal size")
            n = nu.n
            plans[-1] = []
            for p in _optimal_vertex_plans(C):
                P = np.zeros((n, n))
                P[np.arange(n), p] = 1.0 / n
                plans[-1].append(P)
    best = math.inf
    for P1 in plans[0]:
        for P2 in plans[1]:
            total = 0.0
            for k in range(nu.n):
                r1, r2 = P1[k], P2[k]
                s1, s2 = r1 > 1e-14, r2 > 1e-14
                cond1 = DiscreteMeasure(mu1.points[s1], r1[s1] / r1[s1].sum())
                cond2 = DiscreteMeasure(mu2.points[s2], r2[s2] / r2[s2].sum())
                total += nu.weights[k] * w2_exact(cond1, cond2, method="lp")[0]
            best = min(best, total)
    return float(best)
