import numpy as np
import pytest

from hiformer.errors import ConfigError, DataError, SchemaError
from hiformer.graph import (
    Node2vecConfig,
    TurbineGraph,
    biased_walks,
    build_adjacency,
    node2vec_embed,
    read_adjacency_csv,
    read_coords_csv,
    train_embeddings,
    transition_probabilities,
    uniform_adjacency,
    write_embeddings_csv,
)


def two_cliques(k=5):
    n = 2 * k
    a = np.zeros((n, n))
    a[:k, :k] = 1.0
    a[k:, k:] = 1.0
    np.fill_diagonal(a, 0.0)
    return TurbineGraph(adjacency=a)


class TestAdjacency:
    def test_zero_distance_gives_weight_one(self):
        g = build_adjacency(np.array([[0.0, 0.0], [0.0, 0.0]]), sigma=1.0)
        assert g.adjacency[0, 1] == 1.0
        assert g.adjacency[0, 0] == 0.0

    def test_threshold_boundary(self):
        sigma, eps, delta = 2.0, 0.05, 0.01
        d = sigma * np.sqrt(2.0 * np.log(1.0 / eps)) * (1.0 + delta)
        g = build_adjacency(np.array([[0.0, 0.0], [d, 0.0]]), sigma=sigma, epsilon=eps)
        assert g.adjacency[0, 1] == 0.0
        # just inside the boundary the edge survives
        d_in = sigma * np.sqrt(2.0 * np.log(1.0 / eps)) * (1.0 - delta)
        g_in = build_adjacency(np.array([[0.0, 0.0], [d_in, 0.0]]), sigma=sigma, epsilon=eps)
        assert g_in.adjacency[0, 1] > eps

    def test_square_grid_matches_hand_kernel(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        sigma = 1.5
        g = build_adjacency(coords, sigma=sigma, epsilon=0.0)
        expected = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                if i != j:
                    d2 = np.sum((coords[i] - coords[j]) ** 2)
                    expected[i, j] = np.exp(-d2 / (2 * sigma**2))
        assert np.max(np.abs(g.adjacency - expected)) < 1e-12

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(0)
        coords = rng.uniform(0, 10, size=(6, 2))
        perm = rng.permutation(6)
        g = build_adjacency(coords, sigma=3.0, epsilon=0.0)
        gp = build_adjacency(coords[perm], sigma=3.0, epsilon=0.0)
        np.testing.assert_allclose(gp.adjacency, g.adjacency[np.ix_(perm, perm)], atol=1e-15)

    def test_median_sigma_default(self):
        rng = np.random.default_rng(1)
        coords = rng.uniform(0, 100, size=(10, 2))
        g = build_adjacency(coords)
        assert g.num_edges > 0
        assert g.adjacency.max() <= 1.0

    def test_single_node_rejected(self):
        with pytest.raises(DataError):
            build_adjacency(np.array([[0.0, 0.0]]))

    def test_uniform_adjacency(self):
        g = uniform_adjacency(5)
        assert g.adjacency[0, 1] == 0.25
        assert g.adjacency[2, 2] == 0.0

    def test_graph_validation(self):
        bad = np.array([[0.0, 0.5], [0.4, 0.0]])
        with pytest.raises(ConfigError):
            TurbineGraph(adjacency=bad)
        with pytest.raises(ConfigError):
            TurbineGraph(adjacency=np.array([[0.0, 1.5], [1.5, 0.0]]))


class TestWalks:
    def test_transition_probabilities_sum_to_one(self):
        rng = np.random.default_rng(2)
        coords = rng.uniform(0, 5, size=(7, 2))
        g = build_adjacency(coords, sigma=2.0, epsilon=0.0)
        for cur in range(7):
            for prev in [None, (cur + 1) % 7]:
                _, probs = transition_probabilities(g, prev, cur, p=0.5, q=2.0)
                assert abs(probs.sum() - 1.0) < 1e-12

    def test_first_order_when_p_q_one(self):
        # frequency counts against weight-proportional draws, 3-sigma bands
        a = np.array(
            [
                [0.0, 0.6, 0.3, 0.1],
                [0.6, 0.0, 0.5, 0.0],
                [0.3, 0.5, 0.0, 0.8],
                [0.1, 0.0, 0.8, 0.0],
            ]
        )
        g = TurbineGraph(adjacency=a)
        cfg = Node2vecConfig(walk_len=21, walks_per_node=1250, window=5, p=1.0, q=1.0)
        walks = biased_walks(g, cfg, np.random.default_rng(3))
        counts = np.zeros((4, 4))
        for walk in walks:
            for s, t in zip(walk[:-1], walk[1:]):
                counts[s, t] += 1
        total_steps = sum(len(w) - 1 for w in walks)
        assert total_steps >= 10**5
        for v in range(4):
            n_v = counts[v].sum()
            probs = a[v] / a[v].sum()
            for u in range(4):
                if a[v, u] == 0:
                    assert counts[v, u] == 0
                    continue
                sd = np.sqrt(n_v * probs[u] * (1 - probs[u]))
                assert abs(counts[v, u] - n_v * probs[u]) <= 3 * sd

    def test_two_node_path_alternates(self):
        g = TurbineGraph(adjacency=np.array([[0.0, 1.0], [1.0, 0.0]]))
        walks = biased_walks(g, Node2vecConfig(walk_len=10, walks_per_node=2), np.random.default_rng(4))
        for walk in walks:
            assert np.all(walk[:-1] != walk[1:])
            assert len(walk) == 10

    def test_return_bias_on_triangle_rule(self):
        # on a triangle every non-return neighbor sits at distance 1 from
        # prev, so q is inert there; the 1/p return weight is what shows
        tri = np.ones((3, 3)) - np.eye(3)
        g = TurbineGraph(adjacency=tri)
        nbrs, probs = transition_probabilities(g, prev=0, cur=1, p=0.25, q=1e9)
        ret = probs[nbrs == 0][0]
        other = probs[nbrs == 2][0]
        np.testing.assert_allclose(ret, 4.0 / 5.0)
        np.testing.assert_allclose(other, 1.0 / 5.0)

    def test_inward_bias_beats_baseline_on_cycle(self):
        # 4-cycle has distance-2 neighbors, so large q forces returns
        cyc = np.zeros((4, 4))
        for i in range(4):
            cyc[i, (i + 1) % 4] = cyc[(i + 1) % 4, i] = 1.0
        g = TurbineGraph(adjacency=cyc)

        def return_rate(q):
            cfg = Node2vecConfig(walk_len=20, walks_per_node=200, q=q)
            walks = biased_walks(g, cfg, np.random.default_rng(5))
            returns = steps = 0
            for walk in walks:
                for i in range(2, len(walk)):
                    steps += 1
                    returns += walk[i] == walk[i - 2]
            return returns / steps

        assert return_rate(1e6) > return_rate(1.0) + 0.3

    def test_no_edges_rejected(self):
        g = TurbineGraph(adjacency=np.zeros((3, 3)))
        with pytest.raises(DataError):
            biased_walks(g, Node2vecConfig(), np.random.default_rng(0))

    def test_isolated_node_degenerate_walk(self):
        a = np.zeros((3, 3))
        a[0, 1] = a[1, 0] = 1.0
        g = TurbineGraph(adjacency=a)
        walks = biased_walks(g, Node2vecConfig(walk_len=6, walks_per_node=1), np.random.default_rng(6))
        lengths = {int(w[0]): len(w) for w in walks}
        assert lengths[2] == 1
        assert lengths[0] == 6

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            Node2vecConfig(p=0.0).validate()
        with pytest.raises(ConfigError):
            Node2vecConfig(dims=1).validate()
        with pytest.raises(ConfigError):
            Node2vecConfig(walk_len=4, window=5).validate()


class TestEmbeddings:
    def test_disconnected_cliques_separate(self):
        g = two_cliques(5)
        result = node2vec_embed(g, Node2vecConfig(dims=16, seed=7))
        vec = result.vectors.data
        norms = np.linalg.norm(vec, axis=0)
        unit = vec / norms
        cos = unit.T @ unit
        intra = np.concatenate([cos[:5, :5][np.triu_indices(5, 1)], cos[5:, 5:][np.triu_indices(5, 1)]])
        inter = cos[:5, 5:].ravel()
        assert intra.mean() > inter.mean() + 0.2

    def test_determinism(self):
        g = two_cliques(3)
        cfg = Node2vecConfig(dims=8, seed=9)
        a = node2vec_embed(g, cfg)
        b = node2vec_embed(g, cfg)
        np.testing.assert_array_equal(a.vectors.data, b.vectors.data)
        assert a.epoch_loss == b.epoch_loss

    def test_single_edge_graph_trains(self):
        # 2 nodes / 4 parameters sit close to the sampling noise floor, so
        # the visible decrease is small; seed pinned like the other runs
        g = TurbineGraph(adjacency=np.array([[0.0, 1.0], [1.0, 0.0]]))
        result = node2vec_embed(g, Node2vecConfig(dims=2, epochs=5, seed=0))
        assert np.all(np.isfinite(result.vectors.data))
        assert result.epoch_loss[-1] < result.epoch_loss[0]

    def test_loss_trajectory_finite_nonincreasing_on_average(self):
        g = two_cliques(4)
        result = node2vec_embed(g, Node2vecConfig(dims=8, epochs=6, seed=2))
        losses = np.asarray(result.epoch_loss)
        assert np.all(np.isfinite(losses))
        assert losses[-1] <= losses[0]

    def test_empty_walks_rejected(self):
        with pytest.raises(DataError):
            train_embeddings([], Node2vecConfig())


class TestGraphCsv:
    def test_coords_round_trip(self, tmp_path):
        path = tmp_path / "coords.csv"
        path.write_text("turbine_id,x,y\nT1,0.0,1.5\nT2,3.0,4.0\n")
        ids, coords = read_coords_csv(path)
        assert ids == ["T1", "T2"]
        np.testing.assert_allclose(coords, [[0.0, 1.5], [3.0, 4.0]])

    def test_coords_missing_column(self, tmp_path):
        path = tmp_path / "coords.csv"
        path.write_text("turbine_id,x\nT1,0.0\n")
        with pytest.raises(SchemaError, match="'y'"):
            read_coords_csv(path)

    def test_coords_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_coords_csv(tmp_path / "nope.csv")

    def test_adjacency_csv(self, tmp_path):
        path = tmp_path / "adj.csv"
        path.write_text("0.0,0.5\n0.5,0.0\n")
        g = read_adjacency_csv(path)
        assert g.n == 2
        assert g.adjacency[0, 1] == 0.5

    def test_embeddings_export_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        vecs = rng.normal(size=(4, 3))
        path = tmp_path / "emb.csv"
        write_embeddings_csv(path, vecs, ids=["a", "b", "c"])
        lines = path.read_text().splitlines()
        assert lines[0] == "turbine_id,e_0,e_1,e_2,e_3"
        loaded = np.array([[float(x) for x in line.split(",")[1:]] for line in lines[1:]])
        np.testing.assert_array_equal(loaded.T, vecs)
