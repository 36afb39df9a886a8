from dataclasses import replace

import numpy as np
import pytest

from peer_valuation.errors import InvalidInputError, SingularSystemError
from peer_valuation.graph.knhs import SpatialGraph
from peer_valuation.nn.layers import EmbeddingSpec, GraphTensors
from peer_valuation.nn.models import (
    ModelInputs,
    ModelSpec,
    fit_linreg,
    forward,
    init_params,
    linreg_design,
    load_checkpoint,
    predict_linreg,
    save_checkpoint,
)
from peer_valuation.nn.tensor import Tape, backward, mse_loss, zero_grad
from peer_valuation.training.optim import Adam


@pytest.fixture()
def ring():
    """Six nodes, each informed by its two ring neighbours."""
    n = 6
    edges = [((i + 1) % n, i) for i in range(n)]
    edges += [((i - 1) % n, i) for i in range(n)]
    attrs = np.random.default_rng(0).uniform(size=(2 * n, 3))
    return SpatialGraph(n, np.array(edges), attrs)


@pytest.fixture()
def inputs():
    rng = np.random.default_rng(1)
    return ModelInputs(
        rng.uniform(size=(6, 3)), rng.integers(0, 4, size=(6, 1))
    )


def spec_for(kind, seed=0):
    return ModelSpec(
        kind=kind,
        continuous_dim=3,
        embedding_specs=(EmbeddingSpec.for_cardinality(4),),
        hidden_dim=8,
        heads=2,
        d_head=4,
        seed=seed,
    )


def test_spec_rejects_unknown_kind():
    with pytest.raises(InvalidInputError, match="Unknown model kind"):
        ModelSpec(kind="mlp")


def test_spec_dict_round_trip():
    spec = spec_for("pd_tgcn", seed=3)
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_init_is_seeded():
    a = init_params(spec_for("pd_gcn", seed=5))
    b = init_params(spec_for("pd_gcn", seed=5))
    c = init_params(spec_for("pd_gcn", seed=6))
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name].data, b[name].data)
    assert not np.array_equal(a["gcn1.W_self"].data, c["gcn1.W_self"].data)


def test_linreg_has_no_graph_params():
    with pytest.raises(InvalidInputError, match="closed form"):
        init_params(spec_for("linreg"))


@pytest.mark.parametrize("kind", ["pd_gcn", "pd_tgcn"])
def test_forward_shape(kind, ring, inputs):
    spec = spec_for(kind)
    graph = GraphTensors.from_graph(ring)
    pred = forward(spec, init_params(spec), inputs, graph)
    assert pred.shape == (6,)
    assert np.all(np.isfinite(pred.data))


@pytest.mark.parametrize("kind", ["pd_gcn", "pd_tgcn"])
def test_forward_is_permutation_equivariant(kind, ring, inputs):
    spec = spec_for(kind)
    params = init_params(spec)
    perm = np.array([3, 1, 5, 0, 2, 4])
    pred = forward(spec, params, inputs, ring).data
    pred_perm = forward(
        spec, params, inputs.permuted(perm), ring.permuted(perm)
    ).data
    np.testing.assert_allclose(pred_perm, pred[perm], atol=1e-12)


def test_tgcn_logs_attention_of_both_layers(ring, inputs):
    spec = spec_for("pd_tgcn")
    log: list = []
    forward(spec, init_params(spec), inputs, ring, attention_log=log)
    assert len(log) == 2 * spec.heads
    assert all(alpha.shape == (ring.n_edges,) for alpha in log)


def test_linreg_design_reference_levels():
    spec = spec_for("linreg")
    ids = np.array([[0], [1], [2], [3]])
    X = linreg_design(spec, ModelInputs(np.zeros((4, 3)), ids))
    assert X.shape == (4, 5)
    np.testing.assert_array_equal(
        X[:, 3:], [[0, 0], [0, 0], [1, 0], [0, 1]]
    )


def test_fit_linreg_recovers_coefficients():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 3))
    y = 1.5 + X @ np.array([2.0, -1.0, 0.5])
    coef = fit_linreg(X, y)
    np.testing.assert_allclose(coef, [1.5, 2.0, -1.0, 0.5], atol=1e-6)
    np.testing.assert_allclose(predict_linreg(coef, X), y, atol=1e-6)


@pytest.fixture()
def design():
    rng = np.random.default_rng(6)
    return rng.normal(size=(100, 5)), rng.normal(size=100)


def test_fit_linreg_matches_a_qr_solution(design):
    X, y = design
    q, r = np.linalg.qr(np.column_stack([np.ones(len(X)), X]))
    expected = np.linalg.solve(r, q.T @ y)
    coef = fit_linreg(X, y, ridge=0.0)
    np.testing.assert_allclose(coef, expected, rtol=0, atol=1e-12)


def test_fit_linreg_residuals_are_orthogonal_to_the_design(design):
    X, y = design
    residual = y - predict_linreg(fit_linreg(X, y, ridge=0.0), X)
    X1 = np.column_stack([np.ones(len(X)), X])
    np.testing.assert_allclose(X1.T @ residual, 0.0, atol=1e-12)


def test_fit_linreg_through_two_points():
    coef = fit_linreg(np.array([[0.0], [1.0]]), np.array([1.0, 3.0]), 0.0)
    np.testing.assert_allclose(coef, [1.0, 2.0], rtol=0, atol=1e-12)


def test_fit_linreg_singular_design():
    X = np.random.default_rng(3).normal(size=(20, 1))
    with pytest.raises(SingularSystemError, match="singular"):
        fit_linreg(np.column_stack([X, 2 * X]), np.ones(20))


def test_fit_linreg_tolerates_zero_columns():
    rng = np.random.default_rng(4)
    X = np.column_stack([rng.normal(size=30), np.zeros(30)])
    coef = fit_linreg(X, 1.0 + 3.0 * X[:, 0])
    np.testing.assert_allclose(coef, [1.0, 3.0, 0.0], atol=1e-6)


def test_fit_linreg_needs_more_rows_than_columns():
    with pytest.raises(InvalidInputError, match="more rows"):
        fit_linreg(np.ones((2, 3)), np.ones(2))


def test_checkpoint_round_trip(tmp_path, ring, inputs):
    spec = spec_for("pd_tgcn")
    params = init_params(spec)
    save_checkpoint(tmp_path / "model.json", spec, params, {"note": "x"})
    loaded_spec, loaded, extra = load_checkpoint(tmp_path / "model.json")
    assert loaded_spec == spec
    assert extra == {"note": "x"}
    np.testing.assert_allclose(
        forward(spec, loaded, inputs, ring).data,
        forward(spec, params, inputs, ring).data,
    )


@pytest.fixture()
def random_graph():
    """Twenty nodes, each informed by three random peers."""
    rng = np.random.default_rng(3)
    n = 20
    edges = []
    for dst in range(n):
        others = np.delete(np.arange(n), dst)
        edges += [(int(s), dst) for s in rng.choice(others, 3, replace=False)]
    attrs = rng.uniform(size=(len(edges), 3))
    inputs = ModelInputs(
        rng.uniform(size=(n, 3)), rng.integers(0, 4, size=(n, 1))
    )
    return SpatialGraph(n, np.array(edges), attrs), inputs


@pytest.mark.parametrize("kind", ["pd_gcn", "pd_tgcn"])
def test_model_gradients_match_finite_differences(kind, random_graph):
    graph, inputs = random_graph
    spec = spec_for(kind)
    params = init_params(spec)
    target = np.linspace(0.0, 1.0, graph.n_nodes)

    def loss_value():
        pred = forward(spec, params, inputs, graph)
        return float(mse_loss(pred, target).data)

    with Tape() as tape:
        loss = mse_loss(forward(spec, params, inputs, graph), target)
    backward(tape, loss)

    step = 1e-5
    for name, param in params.items():
        numeric = np.zeros_like(param.data)
        for idx in np.ndindex(param.data.shape):
            orig = param.data[idx]
            param.data[idx] = orig + step
            hi = loss_value()
            param.data[idx] = orig - step
            lo = loss_value()
            param.data[idx] = orig
            numeric[idx] = (hi - lo) / (2 * step)
        np.testing.assert_allclose(
            param.grad, numeric, rtol=1e-4, atol=1e-8, err_msg=name
        )


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["pd_gcn", "pd_tgcn"])
def test_models_can_fit_a_small_market(kind):
    rng = np.random.default_rng(5)
    n = 50
    edges = [((i + 1) % n, i) for i in range(n)]
    edges += [((i - 1) % n, i) for i in range(n)]
    graph = SpatialGraph(n, np.array(edges), rng.uniform(size=(2 * n, 3)))
    inputs = ModelInputs(
        rng.uniform(size=(n, 3)), rng.integers(0, 4, size=(n, 1))
    )
    # own features plus the mean of the two peers, within reach of both
    x = inputs.continuous
    peers = 0.5 * (np.roll(x, 1, axis=0) + np.roll(x, -1, axis=0))
    target = 0.5 * x[:, 0] + 0.4 * peers[:, 1]
    spec = replace(spec_for(kind), hidden_dim=32, d_head=8)
    params = init_params(spec)
    optimizer = Adam(lr=1e-2)
    for _ in range(2000):
        zero_grad(params)
        with Tape() as tape:
            loss = mse_loss(forward(spec, params, inputs, graph), target)
        backward(tape, loss)
        optimizer.step(params)
    final = mse_loss(forward(spec, params, inputs, graph), target)
    assert float(final.data) < 1e-3


@pytest.mark.parametrize("kind", ["pd_gcn", "pd_tgcn"])
def test_isolated_node_ignores_the_other_houses(kind, ring, inputs):
    spec = spec_for(kind)
    params = init_params(spec)
    # drop the two edges into node 5
    keep = ring.dst != 5
    graph = SpatialGraph(6, ring.edges[keep], ring.edge_attrs[keep])
    before = forward(spec, params, inputs, graph).data
    continuous = inputs.continuous.copy()
    continuous[:5] += 1.0
    moved = ModelInputs(continuous, inputs.categorical)
    after = forward(spec, params, moved, graph).data
    assert after[5] == pytest.approx(before[5], abs=1e-12)
    assert not np.allclose(after[:5], before[:5])


def test_gcn_on_a_chain_by_hand():
    # 0 -> 1 -> 2 -> 3, one continuous feature, every width 1
    spec = ModelSpec(kind="pd_gcn", continuous_dim=1, hidden_dim=1)
    graph = SpatialGraph(
        4, np.array([[0, 1], [1, 2], [2, 3]]), np.zeros((3, 3))
    )
    inputs = ModelInputs(
        np.array([[1.0], [2.0], [3.0], [4.0]]), np.zeros((4, 0))
    )
    values = {
        "gcn1.W_self": 2.0,
        "gcn1.W_neigh": 0.5,
        "gcn2.W_self": 1.0,
        "gcn2.W_neigh": -1.0,
        "dense.W": 1.0,
        "dense.b": -2.25,
        "out.W": 2.0,
        "out.b": 0.25,
    }
    params = init_params(spec)
    assert set(params) == set(values)
    for name, value in values.items():
        params[name].data = np.full(params[name].shape, value)
    # first layer [2, 4.5, 7, 9.5], second [2, 2.5, 2.5, 2.5], then the
    # dense ReLU cuts node 0 to zero
    pred = forward(spec, params, inputs, graph).data
    np.testing.assert_allclose(
        pred, [0.25, 0.75, 0.75, 0.75], rtol=0, atol=1e-12
    )


@pytest.mark.parametrize("kind", ["pd_gcn", "pd_tgcn"])
def test_zero_head_weights_predict_the_bias(kind, ring, inputs):
    spec = spec_for(kind)
    params = init_params(spec)
    params["out.W"].data = np.zeros_like(params["out.W"].data)
    params["out.b"].data = np.array([0.7])
    pred = forward(spec, params, inputs, ring).data
    np.testing.assert_allclose(pred, 0.7, rtol=0, atol=1e-12)
