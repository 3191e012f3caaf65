import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psot.exact import (InfeasibleError, LinearProgram, NonUniquePlanError, SizeGuardError, UnboundedError,
                        lp_solve, sq_cost_matrix_exact, transport_lp, w2_exact, w_nu_disintegration, w_nu_lp)
from psot.measures import DiscreteMeasure

from conftest import clouds, weighted_clouds

WNU_LIMIT = (DiscreteMeasure([[0, 1], [0, -1]]), DiscreteMeasure([[-1, 0], [1, 0]]),
             DiscreteMeasure([[-2, -1], [2, 1]]))


def _brute_w2(mu, nu):
    C = sq_cost_matrix_exact(mu.points, nu.points)
    return min(C[np.arange(mu.n), list(p)].mean() for p in itertools.permutations(range(nu.n)))


@pytest.mark.parametrize("method", ["bland", "highs"])
def test_lp_trivial(method):
    res = lp_solve(LinearProgram(c=[1.0], A_ub=[[-1.0]], b_ub=[-3.0]), method)
    assert res.value == pytest.approx(3.0) and res.vertex


@pytest.mark.parametrize("method", ["bland", "highs"])
def test_lp_two_by_two_transport(method):
    res = lp_solve(transport_lp(np.array([[0.0, 1.0], [1.0, 0.0]]), np.full(2, 0.5), np.full(2, 0.5)), method)
    assert res.value == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(res.x.reshape(2, 2), np.diag([0.5, 0.5]), atol=1e-12)


@pytest.mark.parametrize("method", ["bland", "highs"])
def test_lp_infeasible_and_unbounded(method):
    with pytest.raises(InfeasibleError):
        lp_solve(LinearProgram(c=[1.0], A_eq=[[1.0]], b_eq=[-1.0]), method)
    with pytest.raises(UnboundedError):
        lp_solve(LinearProgram(c=[-1.0], A_ub=[[-1.0]], b_ub=[0.0]), method)


def test_lp_shape_checks():
    with pytest.raises(ValueError):
        LinearProgram(c=[1.0, 2.0], A_eq=[[1.0]], b_eq=[1.0])


def test_bland_is_deterministic(rng):
    C = rng.random((4, 4))
    a = np.full(4, 0.25)
    r1 = lp_solve(transport_lp(C, a, a), "bland")
    r2 = lp_solve(transport_lp(C, a, a), "bland")
    np.testing.assert_array_equal(r1.x, r2.x)


def test_transport_lp_matches_w2_on_random_5x5(rng):
    for _ in range(5):
        X, Y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
        mu, nu = DiscreteMeasure(X), DiscreteMeasure(Y)
        C = sq_cost_matrix_exact(X, Y)
        a = np.full(5, 0.2)
        vals = [lp_solve(transport_lp(C, a, a), m).value for m in ("bland", "highs")]
        w, plan = w2_exact(mu, nu)
        np.testing.assert_allclose(vals, w, atol=1e-10)
        assert w == pytest.approx(_brute_w2(mu, nu), abs=1e-12)
        # permutation plan
        assert plan.nnz == 5 and np.allclose(plan.mass, 0.2)


def test_w2_examples():
    mu1 = DiscreteMeasure([[-1, 0], [1, 5]])
    mu2 = DiscreteMeasure([[-1, 5], [1, 0]])
    assert w2_exact(mu1, mu1)[0] == 0.0
    # both matchings enumerated: straight costs 25, crossed costs 4
    assert w2_exact(mu1, mu2)[0] == pytest.approx(4.0)
    nu, a, b = WNU_LIMIT
    assert w2_exact(a, b)[0] <= 2.0 + 1e-12


def test_w2_guard():
    big = DiscreteMeasure(np.zeros((3000, 1)) + np.arange(3000)[:, None])
    with pytest.raises(SizeGuardError, match="sliced"):
        w2_exact(big, big)


@given(weighted_clouds(2), weighted_clouds(2))
def test_w2_plan_is_feasible(mu, nu):
    cost, plan = w2_exact(mu, nu)
    plan.validate(1e-9)
    assert cost == pytest.approx(plan.cost(mu.points, nu.points), abs=1e-9)


def test_w_nu_examples():
    nu, a, b = WNU_LIMIT
    assert w_nu_lp(nu, a, b)[0] == pytest.approx(2.0, abs=1e-8)
    assert w_nu_disintegration(nu, a, b, on_nonunique="vertices") == pytest.approx(2.0, abs=1e-12)
    x2 = DiscreteMeasure([[-1, 0.25], [1, 0]])
    assert w_nu_lp(nu, x2, b)[0] == pytest.approx(0.5 * (9 + 0.75 ** 2) + 0.5 * 10, abs=1e-8)
    mu = DiscreteMeasure([[0, 0], [1, 2], [3, 1]])
    assert w_nu_lp(mu, mu, mu)[0] == pytest.approx(0.0, abs=1e-10)
    assert w_nu_disintegration(mu, mu, mu) == pytest.approx(0.0, abs=1e-12)


def test_disintegration_refuses_nonunique_plans():
    nu, a, b = WNU_LIMIT
    with pytest.raises(NonUniquePlanError):
        w_nu_disintegration(nu, a, b)


def test_disintegration_agrees_with_lp(rng):
    for _ in range(10):
        nu, a, b = (DiscreteMeasure(rng.normal(size=(4, 2))) for _ in range(3))
        assert w_nu_disintegration(nu, a, b) == pytest.approx(w_nu_lp(nu, a, b)[0], abs=1e-8)


def test_w_nu_guard():
    mu = DiscreteMeasure(np.arange(50.0)[:, None])
    with pytest.raises(SizeGuardError):
        w_nu_lp(mu, mu, mu)


@settings(max_examples=25)
@given(clouds(d=2, max_n=4), clouds(d=2, max_n=4), clouds(d=2, max_n=4))
def test_w_nu_properties(nu, a, b):
    v, plan = w_nu_lp(nu, a, b)
    plan.validate()
    plan.bimarginal("12").validate(1e-9)
    assert v == pytest.approx(w_nu_lp(nu, b, a)[0], abs=1e-7)
    assert v >= w2_exact(a, b)[0] - 1e-8
    # bi-marginals towards the pivot are optimal
    assert plan.bimarginal("k1").cost(nu.points, a.points) == pytest.approx(w2_exact(nu, a)[0], abs=1e-8)
    assert plan.bimarginal("k2").cost(nu.points, b.points) == pytest.approx(w2_exact(nu, b)[0], abs=1e-8)


@settings(max_examples=25)
@given(clouds(d=2, max_n=4), clouds(d=2, max_n=4), clouds(d=2, max_n=4))
def test_generalised_geodesic_midpoint_identity(nu, a, b):
    v, rho = w_nu_lp(nu, a, b)
    mid = 0.5 * (a.points[rho.i] + b.points[rho.j])
    m = DiscreteMeasure(mid, rho.mass / rho.mass.sum())
    lhs = w2_exact(nu, m)[0]
    rhs = 0.5 * w2_exact(nu, a)[0] + 0.5 * w2_exact(nu, b)[0] - 0.25 * v
    assert lhs == pytest.approx(rhs, abs=1e-7)
