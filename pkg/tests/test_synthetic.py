import numpy as np
import pytest

from gaets.data import load_csv
from gaets.errors import ConfigurationError, DimensionError
from gaets.synthetic import (
    BENCHMARK,
    GroundTruthGraph,
    benchmark_series,
    generate,
    random_graph,
    spectral_radius,
    structure_recovery_score,
    write_dataset,
)


def pairwise_auc(scores, labels):
    """Brute-force AUC: fraction of (positive, negative) pairs ranked correctly."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


class TestRandomGraph:
    def test_edge_count_and_no_diagonal(self):
        graph = random_graph(6, 8, seed=1)
        assert graph.adjacency.sum() == 8
        assert np.diag(graph.adjacency).sum() == 0

    def test_spectral_radius_bounded(self):
        for seed in range(5):
            graph = random_graph(5, 10, seed=seed)
            assert spectral_radius(graph.coefficients) < 1.0

    def test_deterministic(self):
        a = random_graph(6, 8, seed=3)
        b = random_graph(6, 8, seed=3)
        np.testing.assert_array_equal(a.adjacency, b.adjacency)
        np.testing.assert_array_equal(a.coefficients, b.coefficients)

    def test_too_many_edges_rejected(self):
        with pytest.raises(ConfigurationError):
            random_graph(3, 7, seed=0)


class TestGroundTruthGraph:
    def test_unstable_coefficients_rejected(self):
        adjacency = np.array([[0, 1], [1, 0]])
        coefficients = np.array([[0.0, 1.1], [1.1, 0.0]])
        with pytest.raises(ConfigurationError, match="spectral"):
            GroundTruthGraph(adjacency, coefficients, noise_std=0.1)

    def test_pattern_mismatch_rejected(self):
        adjacency = np.array([[0, 1], [0, 0]])
        coefficients = np.array([[0.5, 0.0], [0.0, 0.0]])
        with pytest.raises(ConfigurationError):
            GroundTruthGraph(adjacency, coefficients, noise_std=0.1)


class TestGenerate:
    def test_empty_graph_is_white_noise(self):
        graph = GroundTruthGraph(
            adjacency=np.zeros((3, 3), dtype=int),
            coefficients=np.zeros((3, 3)),
            noise_std=0.25,
            nonlinearity="linear",
        )
        series = generate(graph, 10_000, seed=0)
        stds = series.values.std(axis=1)
        assert np.all(np.abs(stds - 0.25) < 0.25 * 0.05)

    def test_single_edge_lag_one_correlation(self):
        adjacency = np.zeros((3, 3), dtype=int)
        coefficients = np.zeros((3, 3))
        adjacency[0, 1] = 1
        coefficients[0, 1] = 0.9
        graph = GroundTruthGraph(adjacency, coefficients, noise_std=0.1,
                                 nonlinearity="linear")
        series = generate(graph, 10_000, seed=1)
        x = series.values
        corr = np.corrcoef(x[0, :-1], x[1, 1:])[0, 1]
        assert corr > 0.5

    def test_deterministic_per_seed(self):
        graph = random_graph(4, 4, seed=2)
        a = generate(graph, 500, seed=9)
        b = generate(graph, 500, seed=9)
        np.testing.assert_array_equal(a.values, b.values)
        c = generate(graph, 500, seed=10)
        assert not np.array_equal(a.values, c.values)

    def test_long_run_stays_finite(self):
        graph = random_graph(3, 4, seed=4, nonlinearity="tanh")
        series = generate(graph, 1_000_000, seed=5)
        assert np.isfinite(series.values).all()

    def test_burn_in_discarded(self):
        graph = random_graph(3, 3, seed=6)
        series = generate(graph, 50, seed=6)
        assert series.values.shape == (3, 50)


class TestRecoveryScore:
    def test_perfect_probabilities(self):
        graph = random_graph(5, 6, seed=7)
        score = structure_recovery_score(graph.adjacency.astype(float),
                                         graph.adjacency)
        assert score.auc == 1.0

    def test_uninformative_probabilities(self):
        graph = random_graph(5, 6, seed=8)
        probs = np.full((5, 5), 0.5)
        score = structure_recovery_score(probs, graph.adjacency)
        assert score.auc == pytest.approx(0.5)

    def test_three_node_hand_case_matches_pairwise_oracle(self):
        a_true = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]])
        probs = np.array([
            [0.00, 0.90, 0.20],
            [0.35, 0.00, 0.40],
            [0.10, 0.40, 0.00],
        ])
        score = structure_recovery_score(probs, a_true)
        off = ~np.eye(3, dtype=bool)
        oracle = pairwise_auc(probs[off].tolist(), a_true[off].tolist())
        assert score.auc == pytest.approx(oracle)
        assert score.n_edges == 2
        assert score.n_non_edges == 4

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(11)
        a_true = random_graph(6, 8, seed=12).adjacency
        probs = rng.uniform(0.01, 0.99, size=(6, 6))
        base = structure_recovery_score(probs, a_true).auc
        squashed = structure_recovery_score(probs**3, a_true).auc
        shifted = structure_recovery_score(np.log(probs) + 5, a_true).auc
        assert base == pytest.approx(squashed)
        assert base == pytest.approx(shifted)

    def test_diagonal_excluded(self):
        a_true = random_graph(4, 5, seed=13).adjacency
        rng = np.random.default_rng(14)
        probs = rng.uniform(size=(4, 4))
        polluted = probs.copy()
        np.fill_diagonal(polluted, 10.0)
        assert (structure_recovery_score(probs, a_true).auc
                == structure_recovery_score(polluted, a_true).auc)

    def test_degenerate_truth_undefined(self):
        none = np.zeros((3, 3), dtype=int)
        score = structure_recovery_score(np.ones((3, 3)) * 0.5, none)
        assert not score.defined
        full = 1 - np.eye(3, dtype=int)
        score = structure_recovery_score(np.ones((3, 3)) * 0.5, full)
        assert not score.defined

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            structure_recovery_score(np.zeros((2, 3)), np.zeros((2, 3)))


class TestBenchmarkAndExport:
    def test_benchmark_defaults(self):
        graph, series = benchmark_series()
        assert graph.n_vars == BENCHMARK["n_vars"]
        assert graph.adjacency.sum() == BENCHMARK["n_edges"]
        assert series.values.shape == (6, BENCHMARK["length"])

    def test_write_dataset_round_trip(self, tmp_path):
        graph, series = benchmark_series()
        paths = write_dataset(tmp_path, graph, series)
        loaded = load_csv(paths["data"])
        assert loaded.var_names == series.var_names
        np.testing.assert_allclose(loaded.values, series.values, rtol=1e-15)
        import pandas as pd

        edges = pd.read_csv(paths["truth_edges"])
        assert len(edges) == 8
        assert set(edges.columns) == {"source", "target", "coefficient"}
