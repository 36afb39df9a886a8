import numpy as np
import pytest
from scipy import sparse

from peer_valuation.errors import DegenerateVarianceError, InvalidInputError
from peer_valuation.evaluation.moran import knn_weights, morans_i


@pytest.fixture()
def path_weights():
    """Binary weights of the path 0 - 1 - 2 - 3."""
    dense = np.zeros((4, 4))
    for i in range(3):
        dense[i, i + 1] = dense[i + 1, i] = 1.0
    return sparse.csr_matrix(dense)


def test_trend_along_a_path(path_weights):
    stat, _ = morans_i([1.0, 2.0, 3.0, 4.0], path_weights, permutations=9)
    assert stat == pytest.approx(1.0 / 3.0)


def test_alternating_values(path_weights):
    stat, p = morans_i([1.0, -1.0, 1.0, -1.0], path_weights, 99)
    assert stat == pytest.approx(-1.0)
    assert p == pytest.approx(1.0)


def test_p_value_is_seeded_and_bounded(path_weights):
    values = [1.0, 2.0, 3.0, 4.0]
    a = morans_i(values, path_weights, permutations=50, seed=1)
    b = morans_i(values, path_weights, permutations=50, seed=1)
    assert a == b
    assert 1.0 / 51.0 <= a[1] <= 1.0


@pytest.mark.parametrize("a, b", [(3.0, 0.0), (0.01, -7.0), (250.0, 1e4)])
def test_invariant_under_affine_maps(path_weights, a, b):
    values = np.random.default_rng(8).normal(size=path_weights.shape[0])
    stat, _ = morans_i(values, path_weights, 9)
    mapped, _ = morans_i(a * values + b, path_weights, 9)
    assert mapped == pytest.approx(stat, abs=1e-12)


def test_constant_values(path_weights):
    with pytest.raises(DegenerateVarianceError, match="constant"):
        morans_i([2.0] * 4, path_weights)


def test_too_few_values():
    with pytest.raises(InvalidInputError, match=">= 3 values"):
        morans_i([1.0, 2.0], sparse.csr_matrix((2, 2)))


def test_knn_weights_rows_sum_to_one():
    rng = np.random.default_rng(0)
    coords = np.column_stack(
        [rng.uniform(-33.5, -33.4, 30), rng.uniform(-70.7, -70.6, 30)]
    )
    W = knn_weights(coords, k=4)
    np.testing.assert_allclose(np.asarray(W.sum(axis=1)).ravel(), 1.0)
    assert W.diagonal().sum() == 0.0
    assert np.all(np.diff(W.indptr) == 4)


def test_knn_weights_k_range():
    with pytest.raises(InvalidInputError, match="k must lie"):
        knn_weights(np.zeros((3, 2)), k=3)


def test_clustered_field_is_significant():
    rng = np.random.default_rng(2)
    coords = np.column_stack(
        [rng.uniform(0.0, 1.0, 200), rng.uniform(0.0, 1.0, 200)]
    )
    values = coords[:, 0] + 0.05 * rng.normal(size=200)
    stat, p = morans_i(values, knn_weights(coords, 6), permutations=199)
    assert stat > 0.5
    assert p == pytest.approx(1.0 / 200.0)


def test_alternating_cycle():
    dense = np.zeros((4, 4))
    for i in range(4):
        dense[i, (i + 1) % 4] = dense[(i + 1) % 4, i] = 1.0
    stat, _ = morans_i([1.0, -1.0, 1.0, -1.0], sparse.csr_matrix(dense), 9)
    assert stat == pytest.approx(-1.0, abs=1e-12)


def test_linear_ramp_on_a_grid():
    rows, cols = np.meshgrid(np.arange(10), np.arange(10), indexing="ij")
    coords = np.column_stack([0.01 * rows.ravel(), 0.01 * cols.ravel()])
    stat, _ = morans_i(cols.ravel(), knn_weights(coords, 4), 99)
    assert stat > 0.8


@pytest.mark.slow
def test_noise_is_rarely_significant():
    significant = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        coords = np.column_stack(
            [rng.uniform(-33.5, -33.4, 150), rng.uniform(-70.7, -70.6, 150)]
        )
        _, p = morans_i(
            rng.normal(size=150), knn_weights(coords, 8), 999, seed=seed
        )
        significant += p <= 0.05
    assert significant <= 2
