import json

import numpy as np
import pytest

from fairacq.errors import DataError
from fairacq.partition import (
    Partitioning, bic_scores, em_diag, fit_gmm, normalized_distances, partition_by_attribute,
    select_g,
)

from conftest import make_dataset


def blobs(centers, n_each=300, sd=1.0, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    X = np.vstack([c + sd * rng.standard_normal((n_each, centers.shape[1])) for c in centers])
    truth = np.repeat(np.arange(len(centers)), n_each)
    s = rng.integers(0, 2, len(X))
    y = rng.integers(0, 2, len(X))
    return make_dataset(X, y, s), truth


def agreement(assignment, truth):
    # best label matching for two clusters
    a = np.mean(assignment == truth)
    return max(a, 1 - a)


def test_normalized_distances_cases():
    assert normalized_distances([[1.0, 2.0]]).tolist() == [[0.0]]
    assert normalized_distances([[0.0], [3.0]]).tolist() == [[0.0, 1.0], [1.0, 0.0]]
    d = normalized_distances([[0.0], [1.0], [2.0]])
    np.testing.assert_allclose(d, [[0, 0.5, 1], [0.5, 0, 0.5], [1, 0.5, 0]])
    assert not normalized_distances([[1.0], [1.0]]).any()


def test_two_blobs_recovered():
    pool, truth = blobs([[-5, -5], [5, 5]])
    part = fit_gmm(pool, 2, seed=1)
    assert agreement(part.assignment, truth) >= 0.99
    assert part.sizes.sum() == len(pool)
    assert part.dist[0, 1] == 1.0 and part.dist[0, 0] == 0.0
    # centroids are reported in the original feature space
    np.testing.assert_allclose(np.sort(part.centroids[:, 0]), [-5, 5], atol=0.2)


def test_single_component_and_determinism():
    pool, _ = blobs([[0, 0]], n_each=200)
    part = fit_gmm(pool, 1)
    assert part.g == 1 and part.dist.tolist() == [[0.0]]
    pool, _ = blobs([[-2, 0], [2, 0], [0, 3]], n_each=150, seed=4)
    a, b = fit_gmm(pool, 3, seed=7), fit_gmm(pool, 3, seed=7)
    assert a.assignment.tolist() == b.assignment.tolist()


def test_pool_too_small():
    pool, _ = blobs([[0, 0]], n_each=9)
    with pytest.raises(DataError):
        fit_gmm(pool, 2)


def test_invariants_on_three_blobs():
    pool, _ = blobs([[-4, 0], [4, 0], [0, 6]], seed=2)
    part = fit_gmm(pool, 3, seed=0)
    assert sorted(np.concatenate([part.members(k) for k in range(3)]).tolist()) == pool.ids.tolist()
    np.testing.assert_allclose(part.dist, part.dist.T)
    assert np.all(np.diag(part.dist) == 0) and part.dist.max() == 1.0
    assert np.all(np.isfinite(part.delta_br))


def test_distances_invariant_to_feature_rescaling():
    pool, _ = blobs([[-4, 0], [4, 0], [0, 6]], seed=3)
    scaled = make_dataset(pool.X * np.array([100.0, 0.01]), pool.y, pool.s)
    a, b = fit_gmm(pool, 3, seed=5), fit_gmm(scaled, 3, seed=5)
    assert a.assignment.tolist() == b.assignment.tolist()
    np.testing.assert_allclose(a.dist, b.dist, atol=1e-9)


def test_em_matches_sklearn_on_log_likelihood():
    sk = pytest.importorskip("sklearn.mixture")
    pool, _ = blobs([[-3, 0, 1], [3, 1, 0], [0, 4, -2]], n_each=400, seed=6)
    X = (pool.X - pool.X.mean(0)) / pool.X.std(0)
    ours = em_diag(X, 3, np.random.default_rng(0))
    ref = sk.GaussianMixture(3, covariance_type="diag", reg_covar=1e-6, tol=1e-8,
                             max_iter=500, n_init=5, random_state=0).fit(X)
    assert ours.loglik / len(X) == pytest.approx(ref.score(X), abs=1e-3)


def test_bic_selects_true_count():
    pool, _ = blobs([[-6, -6], [6, 6]], n_each=400, seed=1)
    assert select_g(pool, range(2, 6), seed=0) == 2
    assert select_g(pool, [3]) == 3


def test_bic_single_gaussian_picks_range_minimum():
    pool, _ = blobs([[0, 0, 0]], n_each=1500, seed=8)
    assert select_g(pool, range(2, 6), seed=0) == 2


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_bic_valley_around_true_count(seed):
    pool, _ = blobs([[-6, 0], [6, 0], [0, 9]], n_each=300, seed=seed)
    scores = bic_scores(pool, range(1, 7), seed=seed)
    vals = [scores[g] for g in range(1, 7)]
    assert np.argmin(vals) == 2
    assert vals[0] > vals[1] > vals[2] < vals[3]


def test_partition_by_attribute():
    X = np.zeros((8, 1))
    y = [1, 1, 0, 0, 1, 0, 1, 1]
    s = [0, 1, 0, 1, 0, 1, 0, 1]
    state = np.array(["a", "a", "a", "a", "b", "b", "b", "b"], dtype=object)
    d = make_dataset(X, y, s)
    d = d.__class__(d.X, d.y, d.s, d.ids, d.feature_names, "s", "y", {"state": state})
    part = partition_by_attribute(d, "state")
    assert part.g == 2
    # a: S=0 -> (1,0) rate .5, S=1 -> (1,0) rate .5 ; b: S=0 -> (1,1) rate 1, S=1 -> (0,1) .5
    np.testing.assert_allclose(part.delta_br, [0.0, 0.5])
    four = d.__class__(d.X, d.y, d.s, d.ids, d.feature_names, "s", "y",
                       {"state": np.array(list("abcdabcd"), dtype=object)})
    assert partition_by_attribute(four, "state").g == 4
    const = d.__class__(d.X, d.y, d.s, d.ids, d.feature_names, "s", "y",
                        {"state": np.array(["z"] * 8, dtype=object)})
    assert partition_by_attribute(const, "state").g == 1
    with pytest.raises(DataError):
        partition_by_attribute(d, "missing")
    many = make_dataset(np.arange(40.0), np.arange(40) % 2, (np.arange(40) // 2) % 2)
    with pytest.raises(DataError):
        partition_by_attribute(many, "x0")


def test_single_group_partition_falls_back_to_pool_rate():
    X = np.array([[0.0], [0.1], [0.2], [0.3], [9.0], [9.1], [9.2], [9.3]])
    d = make_dataset(X, [1, 0, 1, 0, 1, 0, 0, 0], [1, 1, 1, 1, 0, 1, 0, 1])
    part = partition_by_attribute(d, "x0")  # 8 singleton partitions, none has both groups
    pool_dbr = 1 / 2 - 2 / 6
    np.testing.assert_allclose(part.delta_br, pool_dbr)


def test_json_round_trip():
    pool, _ = blobs([[-4, 0], [4, 0]], n_each=50)
    part = fit_gmm(pool, 2, seed=0)
    again = Partitioning.from_json(part.to_json())
    assert again.assignment.tolist() == part.assignment.tolist()
    np.testing.assert_allclose(again.dist, part.dist)
    assert json.loads(part.to_json())["delta_br"] == part.delta_br.tolist()
