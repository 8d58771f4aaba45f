import numpy as np
import pytest
import torch

from src.common.errors import ContractError, DataError, DimensionError
from src.graph.spatial_graph import SpatialGraph
from src.models.checkpoint import load_checkpoint, save_checkpoint
from src.models.ensemble import (
    PredictiveEnsemble,
    _window_plan,
    compbnn_total_variance,
    predict_ensemble,
    rolling_predict,
)
from src.models.networks import BSTNNModel, BTNNModel, CompBNNModel, bstnn_forward, btnn_forward
from src.tensor.autodiff import DTYPE
from src.tensor.noise import NoiseStream, member_seeds

LSTM_UNITS = (3, 4)
GRAPH_UNITS = (5, 5)


def line_graph(num_nodes: int) -> SpatialGraph:
    coords = np.column_stack([np.arange(num_nodes) * 300.0, np.zeros(num_nodes)])
    return SpatialGraph.from_coords(coords, method="diffusion", sigma_dk2=1000.0)


def small_bstnn(num_nodes: int = 4, seed: int = 0, graph: SpatialGraph = None) -> BSTNNModel:
    graph = graph if graph is not None else line_graph(num_nodes)
    return BSTNNModel(3, graph, LSTM_UNITS, GRAPH_UNITS, seed=seed)


def features(T: int, N: int, D: int = 3, seed: int = 0) -> torch.Tensor:
    return torch.randn(T, N, D, generator=torch.Generator().manual_seed(seed), dtype=DTYPE)


def test_btnn_zero_weights_give_head_bias():
    model = BTNNModel(3, LSTM_UNITS)
    sample = {vp: torch.zeros(vp.shape, dtype=DTYPE) for vp in model.variational_parameters()}
    sample[model.head.bias] = torch.tensor([0.7], dtype=DTYPE)
    out = model(torch.randn(2, 9, 3, dtype=DTYPE), sample)
    assert torch.allclose(out, torch.full((2, 9), 0.7, dtype=DTYPE))


def test_btnn_forward_seeding():
    model = BTNNModel(3, LSTM_UNITS)
    X = features(12, 1)[:, 0, :]
    first = btnn_forward(model, X, NoiseStream(seed=1))
    assert torch.equal(first, btnn_forward(model, X, NoiseStream(seed=1)))
    assert not torch.equal(first, btnn_forward(model, X, NoiseStream(seed=2)))
    with pytest.raises(DimensionError):
        btnn_forward(model, torch.zeros(12, 4, dtype=DTYPE), NoiseStream(seed=1))


def test_bstnn_draws_each_parameter_once_per_pass():
    for T, N in [(5, 2), (20, 7)]:
        model = small_bstnn(N)
        noise = NoiseStream(seed=0)
        out = bstnn_forward(model, features(T, N), noise)
        assert out.shape == (T, N)
        keys = {vp.name for vp in model.variational_parameters()}
        assert set(noise.draws) == keys
        assert all(count == 1 for count in noise.draws.values())


def test_bstnn_rejects_wrong_node_count():
    with pytest.raises(DimensionError):
        bstnn_forward(small_bstnn(4), features(6, 3), NoiseStream(seed=0))


def test_bstnn_permutation_equivariance():
    graph = line_graph(5)
    order = [3, 0, 4, 1, 2]
    model = small_bstnn(graph=graph, seed=4)
    relabeled = small_bstnn(graph=graph.permuted(order), seed=4)
    X = features(10, 5)
    Y = bstnn_forward(model, X, NoiseStream(seed=9))
    Y_perm = bstnn_forward(relabeled, X[:, order, :], NoiseStream(seed=9))
    assert torch.allclose(Y_perm, Y[:, order], atol=1e-8)


def test_bstnn_single_node_matches_temporal_dense_pipeline():
    graph = SpatialGraph.from_adjacency(np.zeros((1, 2)), np.zeros((1, 1)))
    model = small_bstnn(graph=graph)
    sample = model.sample_weights(NoiseStream(seed=3))
    X = features(8, 1)
    H = model.temporal(X[:, 0, :].unsqueeze(0), sample)[0]
    for layer in model.spatial:
        H = torch.relu(H @ sample[layer.theta])
    expected = (H @ sample[model.head.weight] + sample[model.head.bias]).squeeze(-1)
    assert torch.allclose(model(X, sample)[:, 0], expected, atol=1e-12)


def test_bstnn_identical_nodes_identical_outputs():
    model = small_bstnn(2)
    series = features(7, 1)
    Y = bstnn_forward(model, series.repeat(1, 2, 1), NoiseStream(seed=0))
    assert torch.allclose(Y[:, 0], Y[:, 1], atol=1e-12)


def test_bstnn_identity_operator_and_layers_reproduce_temporal_output():
    graph = SpatialGraph.from_adjacency(np.zeros((3, 2)), np.zeros((3, 3)))
    model = BSTNNModel(3, graph, LSTM_UNITS, (4, 4))
    sample = model.sample_weights(NoiseStream(seed=5))
    for layer in model.spatial:
        sample[layer.theta] = torch.eye(4, dtype=DTYPE)
    X = features(6, 3)
    per_node = []
    for n in range(3):
        H = model.temporal(X[:, n, :].unsqueeze(0), sample)[0]
        per_node.append((torch.relu(H) @ sample[model.head.weight] + sample[model.head.bias]).squeeze(-1))
    assert torch.allclose(model(X, sample), torch.stack(per_node, dim=1), atol=1e-8)


def test_predict_ensemble_single_member_equals_one_pass():
    model = small_bstnn(3)
    X = features(9, 3)
    ensemble = predict_ensemble(model, X, num_members=1, seed=5)
    direct = bstnn_forward(model, X, NoiseStream(seed=member_seeds(5, 1)[0]))
    assert ensemble.samples.shape == (1, 9, 3)
    np.testing.assert_allclose(ensemble.samples[0], direct.detach().numpy(), atol=1e-12)


def test_predict_ensemble_contract_and_determinism():
    model = small_bstnn(3)
    X = features(9, 3)
    with pytest.raises(ContractError):
        predict_ensemble(model, X, num_members=0)
    serial = predict_ensemble(model, X, num_members=4, seed=2)
    threaded = predict_ensemble(model, X, num_members=4, seed=2, workers=2)
    np.testing.assert_array_equal(serial.samples, threaded.samples)


def test_collapsed_posterior_gives_identical_members():
    model = small_bstnn(3)
    with torch.no_grad():
        for vp in model.variational_parameters():
            vp.rho.fill_(-800.0)
    ensemble = predict_ensemble(model, features(6, 3), num_members=5, seed=0)
    assert np.all(ensemble.samples == ensemble.samples[0])


def test_spread_grows_with_rho_offset():
    model = BTNNModel(3, LSTM_UNITS)
    X = features(10, 2)
    spreads = []
    for rho in (-8.0, -5.0, -2.0):
        with torch.no_grad():
            for vp in model.variational_parameters():
                vp.rho.fill_(rho)
        spreads.append(predict_ensemble(model, X, num_members=8, seed=1).samples.std(axis=0).mean())
    assert spreads[0] < spreads[1] < spreads[2]


def test_window_plan_covers_every_step_once():
    plan = _window_plan(10, 0, 10, 4, 2)
    assert plan == [(0, 0, 2), (0, 2, 4), (2, 4, 6), (4, 6, 8), (6, 8, 10)]
    assert _window_plan(3, 0, 3, 4, 2) == [(0, 0, 3)]


def test_rolling_predict_returns_requested_span():
    model = small_bstnn(2)
    X = features(20, 2)
    noise = NoiseStream(seed=0)
    sample = model.sample_weights(noise)
    with torch.no_grad():
        y, s = rolling_predict(model, X, sample, noise, window=6, horizon=3, span=(4, 17))
    assert y.shape == (13, 2)
    assert s is None


def test_ensemble_median_ignores_member_order():
    samples = np.random.default_rng(0).normal(size=(7, 5, 3))
    shuffled = PredictiveEnsemble(samples[[6, 2, 0, 5, 1, 4, 3]])
    np.testing.assert_array_equal(PredictiveEnsemble(samples).median(), shuffled.median())


def test_total_variance_examples():
    constant = PredictiveEnsemble(np.full((3, 2, 2), 4.0), log_variances=np.zeros((3, 2, 2)))
    np.testing.assert_allclose(compbnn_total_variance(constant), 1.0)
    spread = PredictiveEnsemble(np.array([[[1.0]], [[3.0]]]), log_variances=np.full((2, 1, 1), -np.inf))
    np.testing.assert_allclose(compbnn_total_variance(spread), 1.0)


def test_total_variance_matches_direct_evaluation():
    rng = np.random.default_rng(3)
    y, s = rng.normal(size=(11, 4, 2)), rng.normal(size=(11, 4, 2))
    ensemble = PredictiveEnsemble(y, log_variances=s)
    for verbatim in (False, True):
        expected = np.zeros((4, 2))
        for t in range(4):
            for n in range(2):
                values = y[:, t, n]
                variances = np.exp(s[:, t, n])
                aleatoric = np.sum(variances**2 if verbatim else variances) / 11
                expected[t, n] = np.sum(values**2) / 11 - (np.sum(values) / 11) ** 2 + aleatoric
        np.testing.assert_allclose(compbnn_total_variance(ensemble, squared_aleatoric=verbatim), expected, rtol=1e-12)


def test_total_variance_contracts():
    with pytest.raises(ContractError):
        compbnn_total_variance(PredictiveEnsemble(np.zeros((3, 2, 2))))
    with pytest.raises(ContractError):
        compbnn_total_variance(PredictiveEnsemble(np.zeros((1, 2, 2)), log_variances=np.zeros((1, 2, 2))))


def test_compbnn_without_dropout_has_no_epistemic_term():
    model = CompBNNModel(3, LSTM_UNITS, dropout_rate=0.0)
    ensemble = predict_ensemble(model, features(8, 2), num_members=4, seed=0)
    assert ensemble.log_variances.shape == (4, 8, 2)
    expected = np.exp(ensemble.log_variances).mean(axis=0)
    np.testing.assert_allclose(compbnn_total_variance(ensemble), expected, rtol=1e-10, atol=1e-12)


def test_compbnn_dropout_makes_members_differ():
    model = CompBNNModel(3, LSTM_UNITS, dropout_rate=0.5)
    ensemble = predict_ensemble(model, features(8, 2), num_members=3, seed=0)
    assert not np.allclose(ensemble.samples[0], ensemble.samples[1])


def test_checkpoint_round_trip(tmp_path):
    model = small_bstnn(3, seed=6)
    model.set_scaling([1.0, 2.0, 3.0], [0.5, 0.5, 2.0], 10.0, 4.0)
    path = save_checkpoint(tmp_path / "JT.ckpt", model, "JT", config={"mode": "JT"})
    restored = load_checkpoint(path)
    assert restored.regime == "JT"
    assert restored.config == {"mode": "JT"}
    assert restored.layout_hash == model.graph.graph_hash()
    X = features(5, 3)
    expected = model.predict_nodes(X, model.sample_weights(NoiseStream(seed=1)), NoiseStream(seed=1))[0]
    actual = restored.model.predict_nodes(X, restored.model.sample_weights(NoiseStream(seed=1)), NoiseStream(seed=1))[0]
    assert torch.equal(expected, actual)


def test_load_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")
    junk = tmp_path / "junk.ckpt"
    junk.write_text("not a checkpoint")
    with pytest.raises(DataError):
        load_checkpoint(junk)
    torch.save({"format": "something-else"}, tmp_path / "other.ckpt")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "other.ckpt")
