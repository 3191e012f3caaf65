import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psot.measures import (DimensionError, Direction, DiscreteMeasure, PlanValidationError, SparsePlan,
                           default_tie_tol, load_cloud, project, sample_sphere, save_cloud, sort_with_groups)

from conftest import clouds


def test_uniform_default_weights():
    mu = DiscreteMeasure([[0, 0], [1, 1], [2, 0]])
    assert mu.n == 3 and mu.dim == 2 and mu.is_uniform
    np.testing.assert_allclose(mu.weights, 1 / 3)


@pytest.mark.parametrize("w", [[0.5, 0.5, 0.0], [0.6, 0.6, -0.2], [0.5, 0.4, 0.0999]])
def test_bad_weights_rejected(w):
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0], [1.0], [2.0]], w)


def test_measure_is_read_only():
    mu = DiscreteMeasure([[0.0, 1.0]])
    with pytest.raises(ValueError):
        mu.points[0, 0] = 3.0


def test_direction_requires_unit_norm():
    with pytest.raises(ValueError):
        Direction([1.0, 1.0])
    assert np.isclose(np.linalg.norm(Direction.normalized([1.0, 1.0]).theta), 1.0)


def test_project_examples():
    np.testing.assert_array_equal(project(DiscreteMeasure([[-1, 0], [1, 5]]), [1, 0]), [-1, 1])
    np.testing.assert_array_equal(project(DiscreteMeasure([[0, 1], [0, 0]]), [1, 0]), [0, 0])
    np.testing.assert_array_equal(project(DiscreteMeasure([[0, 3], [0, -2], [0, 7]]), [1, 0]), [0, 0, 0])


def test_project_dimension_mismatch():
    with pytest.raises(DimensionError):
        project(DiscreteMeasure([[0, 1, 2]]), [1, 0])


@given(clouds(d=3), st.floats(-2, 2), st.floats(-2, 2))
def test_project_is_linear(mu, a, b):
    t1, t2 = np.array([1.0, 0, 0]), np.array([0, 0.6, 0.8])
    v = a * t1 + b * t2
    if np.linalg.norm(v) < 1e-6:
        return
    lhs = project(mu, v) * np.linalg.norm(v)
    np.testing.assert_allclose(lhs, a * project(mu, t1) + b * project(mu, t2), atol=1e-9)


@pytest.mark.parametrize("values, perm, n_groups", [
    ([-1.0, 1.0], [0, 1], 2),
    ([0.0, 0.0], [0, 1], 1),
    ([3.0, 1.0, 2.0], [1, 2, 0], 3),
])
def test_sort_with_groups_examples(values, perm, n_groups):
    p, g = sort_with_groups(values, 0.0)
    np.testing.assert_array_equal(p, perm)
    assert g.n_groups == n_groups


def test_ties_merge_transitively():
    _, g = sort_with_groups([0.0, 0.4, 0.8, 5.0], 0.5)
    assert g.n_groups == 2
    np.testing.assert_array_equal(g.groups[0], [0, 1, 2])


@given(st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=20))
def test_sort_with_groups_invariants(values):
    p, g = sort_with_groups(values, 0.0)
    v = np.asarray(values)
    assert np.all(np.diff(v[p]) >= 0)
    # stable inside ties
    for a, b in zip(p[:-1], p[1:]):
        if v[a] == v[b]:
            assert a < b
    assert sorted(np.concatenate(g.groups).tolist()) == list(range(len(v)))
    assert np.all(np.diff(g.values) > 0)
    for gid, idx in enumerate(g.groups):
        assert np.all(v[idx] == g.values[gid])
        assert np.all(g.group_of[idx] == gid)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20, unique=True))
def test_injective_values_give_singletons(values):
    _, g = sort_with_groups(values, 0.0)
    assert g.n_groups == len(values) and g.tie_free


def test_default_tie_tol():
    assert default_tie_tol([0.0]) == pytest.approx(1e-9)
    assert default_tie_tol([-3.0, 1.0]) == pytest.approx(4e-9)


def test_sample_sphere_examples():
    s = sample_sphere(1, 3, seed=7)
    assert set(np.abs(s).ravel()) == {1.0}
    big = sample_sphere(2, 10_000, seed=0)
    assert np.linalg.norm(big.mean(0)) < 0.05
    np.testing.assert_allclose(np.linalg.norm(big, axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(sample_sphere(4, 5, 3), sample_sphere(4, 5, 3))
    with pytest.raises(ValueError):
        sample_sphere(0, 3, 0)


def test_sparse_plan_merges_duplicates_and_validates():
    a = np.array([0.5, 0.5])
    p = SparsePlan.from_arrays([0, 0, 1], [1, 1, 0], [0.25, 0.25, 0.5], a, a)
    assert p.nnz == 2
    p.validate()
    np.testing.assert_allclose(p.todense(), [[0, 0.5], [0.5, 0]])
    np.testing.assert_allclose(p.transpose().todense(), p.todense().T)


def test_sparse_plan_validator_catches_bad_marginals():
    a = np.array([0.5, 0.5])
    with pytest.raises(PlanValidationError):
        SparsePlan.from_arrays([0, 1], [0, 0], [0.5, 0.5], a, a).validate()


def test_sparse_plan_cost():
    X = np.array([[0.0, 0.0], [1.0, 0.0]])
    Y = np.array([[0.0, 1.0], [1.0, 1.0]])
    p = SparsePlan.from_permutation([0, 1], [1, 0], 2)
    assert p.cost(X, Y) == pytest.approx(0.5 * 2 + 0.5 * 2)


def test_plan_csv_and_json_round_trip(tmp_path):
    a = np.array([0.2, 0.8])
    b = np.array([0.5, 0.5])
    p = SparsePlan.from_dense(np.array([[0.2, 0.0], [0.3, 0.5]]), a, b)
    path = tmp_path / "plan.csv"
    p.to_csv(path)
    assert path.read_text().splitlines()[0] == "i,j,mass"
    q = SparsePlan.from_csv(path, a, b).validate()
    np.testing.assert_array_equal(q.todense(), p.todense())
    r = SparsePlan.from_json(p.to_json())
    np.testing.assert_array_equal(r.todense(), p.todense())
    assert json.loads(p.to_json())["source_marginal"] == a.tolist()


def test_cloud_csv_round_trip(tmp_path):
    mu = DiscreteMeasure([[0.1, 2.0], [3.0, -1.0], [0.0, 0.0]], [0.2, 0.3, 0.5])
    save_cloud(mu, tmp_path / "c.csv")
    nu = load_cloud(tmp_path / "c.csv")
    np.testing.assert_array_equal(nu.points, mu.points)
    np.testing.assert_allclose(nu.weights, mu.weights, atol=1e-15)
    (tmp_path / "plain.csv").write_text("1,2\n3,4\n")
    assert load_cloud(tmp_path / "plain.csv").is_uniform
