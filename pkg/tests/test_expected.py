import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psot.exact import w2_exact
from psot.expected import (barycentric_projection, expected_barycentric, expected_plan, lifted_barycentric,
                           lifted_plan, ls_theta)
from psot.measures import DiscreteMeasure, SparsePlan, sample_sphere
from psot.pivot import ps_theta

from conftest import clouds, unit_vectors, weighted_clouds

VSEG = DiscreteMeasure([[0, 0], [0, 1]])
E1 = np.array([1.0, 0.0])


def test_vertical_segment_self_plan_is_product():
    lp = lifted_plan(VSEG, VSEG, E1)
    np.testing.assert_allclose(lp.plan.todense(), np.full((2, 2), 0.25))
    np.testing.assert_allclose(lp.group_masses_source, [1.0, 1.0])
    assert ls_theta(VSEG, VSEG, E1, squared=True) == pytest.approx(0.5, abs=1e-15)
    assert ls_theta(VSEG, VSEG, E1) == pytest.approx(np.sqrt(0.5))


def test_forced_pair_plus_uniform_block():
    X = DiscreteMeasure([[1, 0], [1, 1], [0, 0]])  # x3 alone below the tied pair
    Y = DiscreteMeasure([[0, 2], [1, 2], [1, 3]])  # y1 alone below the tied pair
    P = lifted_plan(X, Y, E1).plan.todense()
    want = np.array([[0, 1 / 6, 1 / 6], [0, 1 / 6, 1 / 6], [1 / 3, 0, 0]])
    np.testing.assert_allclose(P, want, atol=1e-15)


def test_tie_free_matches_sorted_permutation(rng):
    mu1, mu2 = DiscreteMeasure(rng.normal(size=(9, 2))), DiscreteMeasure(rng.normal(size=(9, 2)))
    theta = np.array([0.6, 0.8])
    np.testing.assert_allclose(lifted_plan(mu1, mu2, theta).plan.todense(),
                               ps_theta(mu1, mu2, theta).plan.todense())
    assert ls_theta(mu1, mu1, theta) == 0.0


@given(weighted_clouds(2), weighted_clouds(2), unit_vectors(2))
def test_lifted_plan_formula(mu1, mu2, theta):
    lp = lifted_plan(mu1, mu2, theta)
    lp.plan.validate(1e-9)
    P = lp.plan.todense()
    Q = P / np.outer(mu1.weights / lp.group_masses_source, mu2.weights / lp.group_masses_target)
    # Q is constant on each block: the product structure
    for i in range(mu1.n):
        for j in range(mu2.n):
            same_i = np.isclose(mu1.points @ theta, mu1.points[i] @ theta, atol=lp.tie_tol)
            same_j = np.isclose(mu2.points @ theta, mu2.points[j] @ theta, atol=lp.tie_tol)
            np.testing.assert_allclose(Q[np.ix_(same_i, same_j)], Q[i, j], atol=1e-12)


@given(clouds(d=2, integer=True), clouds(d=2, integer=True), unit_vectors(2))
def test_lifted_plan_symmetry(mu1, mu2, theta):
    a = lifted_plan(mu1, mu2, theta).plan.todense()
    b = lifted_plan(mu2, mu1, theta).plan.todense()
    np.testing.assert_allclose(a, b.T, atol=1e-15)


@given(clouds(d=2, integer=True), clouds(d=2, integer=True), clouds(d=2, integer=True),
       st.sampled_from([E1, np.array([0.0, 1.0]), np.array([0.6, 0.8])]))
def test_ls_triangle_inequality(a, b, c, theta):
    assert ls_theta(a, c, theta) <= ls_theta(a, b, theta) + ls_theta(b, c, theta) + 1e-9


def test_self_distance_vanishes_for_random_directions(rng):
    mu = DiscreteMeasure(rng.integers(-3, 4, (12, 2)).astype(float))
    for seed in range(100):
        theta = sample_sphere(2, 1, seed)[0]
        assert ls_theta(mu, mu, theta) == 0.0


def test_expected_plan_single_direction_and_vseg():
    plan, es = expected_plan(VSEG, VSEG, [E1])
    np.testing.assert_allclose(plan.todense(), lifted_plan(VSEG, VSEG, E1).plan.todense())
    assert es ** 2 == pytest.approx(0.5)


def test_expected_plan_identity_when_tie_free(rng):
    mu = DiscreteMeasure(rng.normal(size=(10, 3)))
    plan, es = expected_plan(mu, mu, sample_sphere(3, 20, 0))
    np.testing.assert_allclose(plan.todense(), np.eye(10) / 10)
    assert es == 0.0


def test_expected_plan_rejects_bad_input():
    with pytest.raises(ValueError):
        expected_plan(VSEG, VSEG, np.zeros((0, 2)))
    with pytest.raises(ValueError):
        expected_plan(VSEG, VSEG, [E1, E1], weights=[0.5, 0.6])


@given(weighted_clouds(2), weighted_clouds(2))
def test_es_is_mean_of_ls_and_cost_of_plan(mu1, mu2):
    dirs = sample_sphere(2, 5, 1)
    w = np.array([0.1, 0.2, 0.3, 0.15, 0.25])
    plan, es = expected_plan(mu1, mu2, dirs, weights=w)
    plan.validate(1e-9)
    want = sum(wk * ls_theta(mu1, mu2, t, squared=True) for wk, t in zip(w, dirs))
    assert es ** 2 == pytest.approx(want, abs=1e-10, rel=1e-10)
    assert plan.cost(mu1.points, mu2.points) == pytest.approx(es ** 2, abs=1e-10, rel=1e-10)
    assert es ** 2 >= w2_exact(mu1, mu2)[0] - 1e-8


@given(clouds(n=6, d=2, integer=True), clouds(n=6, d=2, integer=True), clouds(n=6, d=2, integer=True))
def test_es_triangle_inequality(a, b, c):
    dirs = np.vstack([E1, [0.0, 1.0], sample_sphere(2, 4, 2)])
    es = lambda p, q: expected_plan(p, q, dirs)[1]
    assert es(a, c) <= es(a, b) + es(b, c) + 1e-9


def test_es_fast_path_matches_general(rng):
    mu1, mu2 = DiscreteMeasure(rng.normal(size=(15, 2))), DiscreteMeasure(rng.normal(size=(15, 2)))
    dirs = np.vstack([sample_sphere(2, 10, 3), E1])
    plan, es = expected_plan(mu1, mu2, dirs)
    ref = sum(lifted_plan(mu1, mu2, t).plan.todense() for t in dirs) / len(dirs)
    np.testing.assert_allclose(plan.todense(), ref, atol=1e-15)


def test_drop_below_keeps_marginals(rng):
    mu1, mu2 = DiscreteMeasure(rng.normal(size=(8, 2))), DiscreteMeasure(rng.normal(size=(8, 2)))
    plan, _ = expected_plan(mu1, mu2, sample_sphere(2, 40, 0), drop_below=0.02)
    assert plan.mass.min() >= 0.02
    np.testing.assert_allclose(plan.row_sums(), mu1.weights, atol=1e-12)


def test_es_zero_implies_equal():
    plan, es = expected_plan(VSEG, VSEG, sample_sphere(2, 10, 0))
    assert es == 0.0 and w2_exact(VSEG, VSEG)[0] == 0.0


def test_barycentric_examples(rng):
    Y = rng.normal(size=(4, 2))
    perm = SparsePlan.from_permutation([0, 1, 2, 3], [2, 0, 3, 1], 4)
    np.testing.assert_allclose(barycentric_projection(perm, Y), Y[[2, 0, 3, 1]])
    prod = SparsePlan.from_dense(np.full((3, 4), 1 / 12))
    np.testing.assert_allclose(barycentric_projection(prod, Y), np.tile(Y.mean(0), (3, 1)))
    lp = lifted_plan(VSEG, VSEG, E1)
    np.testing.assert_allclose(barycentric_projection(lp.plan, VSEG.points), [[0, 0.5], [0, 0.5]])


@given(weighted_clouds(2), weighted_clouds(2))
def test_group_barycentre_matches_plan(mu1, mu2):
    dirs = np.vstack([E1, [0.0, 1.0], [0.6, 0.8]])
    plan, _ = expected_plan(mu1, mu2, dirs)
    np.testing.assert_allclose(expected_barycentric(mu1, mu2, dirs), barycentric_projection(plan, mu2.points),
                               atol=1e-9)
    lp = lifted_plan(mu1, mu2, E1)
    np.testing.assert_allclose(lifted_barycentric(mu1, mu2, E1), barycentric_projection(lp.plan, mu2.points),
                               atol=1e-9)
