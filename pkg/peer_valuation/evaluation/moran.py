"""Global Moran's I with a one-sided permutation test."""

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from peer_valuation.errors import DegenerateVarianceError, InvalidInputError
from peer_valuation.graph.geo import GeoPoint, as_latlon_array

DEFAULT_MORAN_K = 8
DEFAULT_PERMUTATIONS = 999
# permutations evaluated per matrix product
_BATCH = 128


def knn_weights(
    points: list[GeoPoint] | np.ndarray, k: int = DEFAULT_MORAN_K
) -> sparse.csr_matrix:
    """Row-normalized weights of the ``k`` geographically nearest
    neighbors of every point.

    Neighbors are found by chord distance on the unit sphere, which
    orders points exactly as great-circle distance does.
    """
    coords = as_latlon_array(points)
    n = len(coords)
    if k < 1 or k >= n:
        raise InvalidInputError(
            f"k must lie in [1, {n - 1}] for {n} points. Got {k}"
        )
    phi, lam = np.radians(coords[:, 0]), np.radians(coords[:, 1])
    xyz = np.column_stack(
        [np.cos(phi) * np.cos(lam), np.cos(phi) * np.sin(lam), np.sin(phi)]
    )
    _, idx = cKDTree(xyz).query(xyz, k=k + 1)
    rows, cols = [], []
    for i in range(n):
        # coincident points can push the point itself off position 0
        neighbors = [j for j in idx[i] if j != i][:k]
        rows.extend([i] * k)
        cols.extend(neighbors)
    data = np.full(len(rows), 1.0 / k)
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def _statistic(z: np.ndarray, W: sparse.csr_matrix, scale: float):
    """I for one centered vector (n,) or for a batch of rows (b, n)."""
    if z.ndim == 1:
        return scale * float(z @ (W @ z))
    return scale * np.einsum("bn,bn->b", z, (W @ z.T).T)


def morans_i(
    values,
    weights: sparse.spmatrix,
    permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
) -> tuple[float, float]:
    """
    Moran's I of ``values`` and its one-sided permutation p-value.

    ``I = (n / S0) * sum_ij w_ij z_i z_j / sum_i z_i^2`` with ``z`` the
    centered values and ``S0`` the sum of all weights. The p-value is
    ``(1 + #{I_perm >= I}) / (permutations + 1)``.

    Parameters
    ----------
    values : array-like
        One value per point, at least 3.
    weights : scipy.sparse matrix
        (n, n) spatial weights, e.g. from ``knn_weights``.
    permutations : int, optional
        Number of random relabelings, by default 999.
    seed : int, optional
        Seed of the permutations.

    Returns
    -------
    tuple of float
        The statistic and its p-value in (0, 1].
    """
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    n = len(x)
    if n < 3:
        raise InvalidInputError(f"Moran's I needs >= 3 values. Got {n}")
    if weights.shape != (n, n):
        raise InvalidInputError(
            f"Weights of shape {weights.shape} do not match {n} values"
        )
    if permutations < 1:
        raise InvalidInputError(
            f"permutations must be >= 1. Got {permutations}"
        )
    z = x - x.mean()
    denom = float(z @ z)
    if denom == 0.0 or np.ptp(x) == 0.0:
        raise DegenerateVarianceError(
            "Moran's I is undefined for constant values"
        )
    W = sparse.csr_matrix(weights, dtype=np.float64)
    s0 = float(W.sum())
    if s0 == 0.0:
        raise InvalidInputError("The weights matrix has no entries")
    scale = n / (s0 * denom)
    observed = _statistic(z, W, scale)

    rng = np.random.default_rng(seed)
    larger = 0
    done = 0
    while done < permutations:
        batch = min(_BATCH, permutations - done)
        perms = np.stack([rng.permutation(n) for _ in range(batch)])
        larger += int(np.sum(_statistic(z[perms], W, scale) >= observed))
        done += batch
    p_value = (1 + larger) / (permutations + 1)
    return observed, p_value
