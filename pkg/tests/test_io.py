import json

import numpy as np
import pytest

from hypepull import io, lorentz
from hypepull.errors import DataError
from hypepull.gplvm import LatentModel
from hypepull.kernels import Hyp2SEKernel, Hyp3SEKernel
from hypepull.pullback import expected_metric

from conftest import random_points


class TestArrays:
    def test_roundtrip_bit_exact(self, rng):
        a = rng.standard_normal((7, 3)) * np.pi
        b = io.decode_array(io.encode_array(a))
        assert a.tobytes() == b.tobytes()


class TestDatasets:
    def test_csv_roundtrip_and_centering(self, tmp_path):
        p = tmp_path / "obs.csv"
        io.write_matrix_csv(p, np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
        bundle = io.load_dataset(p)
        assert bundle.observations.shape == (3, 2)
        np.testing.assert_allclose(bundle.observations.mean(axis=0), 0.0,
                                   atol=1e-15)
        np.testing.assert_allclose(bundle.obs_mean, [3.0, 4.0], atol=1e-15)

    def test_ragged_csv_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2\n3,4,5\n")
        with pytest.raises(DataError, match="row 2"):
            io.read_matrix_csv(p)

    def test_asymmetric_graph_rejected(self, tmp_path):
        obs = tmp_path / "obs.csv"
        io.write_matrix_csv(obs, np.eye(2))
        g = tmp_path / "graph.json"
        g.write_text(json.dumps({"nodes": [0, 1],
                                 "dist": [[0.0, 1.0], [2.0, 0.0]],
                                 "assignment": [0, 1]}))
        with pytest.raises(DataError, match="asymmetric"):
            io.load_dataset(obs, graph_path=g)

    def test_edges_to_hop_distances(self, tmp_path):
        obs = tmp_path / "obs.csv"
        io.write_matrix_csv(obs, np.eye(3))
        g = tmp_path / "graph.json"
        g.write_text(json.dumps({"nodes": [0, 1, 2],
                                 "edges": [[0, 1], [1, 2]],
                                 "assignment": [0, 1, 2]}))
        bundle = io.load_dataset(obs, graph_path=g)
        assert bundle.node_dist[0, 2] == 2.0

    def test_out_of_range_assignment_rejected(self, tmp_path):
        obs = tmp_path / "obs.csv"
        io.write_matrix_csv(obs, np.eye(2))
        g = tmp_path / "graph.json"
        g.write_text(json.dumps({"nodes": [0, 1],
                                 "dist": [[0.0, 1.0], [1.0, 0.0]],
                                 "assignment": [0, 5]}))
        with pytest.raises(DataError, match="references node"):
            io.load_dataset(obs, graph_path=g)

    def test_trajectory_segments(self, tmp_path):
        obs = tmp_path / "obs.csv"
        io.write_matrix_csv(obs, np.zeros((15, 2)))
        t = tmp_path / "traj.json"
        t.write_text(json.dumps({"starts": [0, 10]}))
        bundle = io.load_dataset(obs, traj_path=t)
        np.testing.assert_array_equal(bundle.traj_starts, [0, 10])


class TestGenerators:
    def test_cshape_inside_disk(self):
        pts = io.gen_cshape(1000)
        assert len(pts) == 1000
        assert np.max(np.linalg.norm(pts, axis=1)) < 1.0

    def test_cshape_lift_on_manifold(self):
        lifted = io.cshape_lorentz(io.gen_cshape(50))
        assert np.max(np.abs(lorentz.manifold_defect(lifted))) < 1e-9

    def test_tree_node_count_and_distance(self):
        feats, dist, assign = io.gen_tree_dataset(3, 2, 5, seed=1)
        assert len(feats) == 15
        assert dist[0, 14] == 3.0           # root to deepest leaf
        np.testing.assert_array_equal(assign, np.arange(15))

    def test_tree_siblings_closer_than_cross_subtree(self):
        # construction: sibling features share a parent sample
        gaps = []
        for seed in range(10):
            feats, _, _ = io.gen_tree_dataset(3, 2, 6, seed=seed)
            sib = np.linalg.norm(feats[7] - feats[8])     # children of node 3
            cross = np.linalg.norm(feats[7] - feats[13])  # other subtree
            gaps.append(cross - sib)
        assert np.median(gaps) > 0


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ["hyp2", "hyp3"])
    def test_roundtrip_metric_bit_exact(self, tmp_path, rng, kind):
        if kind == "hyp2":
            k = Hyp2SEKernel(tau=0.7, kappa=0.15, n_samples=200, seed=9)
            dim = 2
        else:
            k = Hyp3SEKernel(tau=0.7, kappa=0.3)
            dim = 3
        X = random_points(rng, 12, dim=dim, scale=0.5)
        Y = rng.standard_normal((12, 4))
        model = LatentModel(X, Y, k, 0.2)
        path = tmp_path / "ckpt.json"
        io.save_checkpoint(path, model, priors_config={"stress_weight": 3.0})
        loaded, doc = io.load_checkpoint(path)
        assert doc["priors"]["stress_weight"] == 3.0
        queries = random_points(rng, 5, dim=dim, scale=0.6)
        for q in queries:
            g1 = expected_metric(model, q).G
            g2 = expected_metric(loaded, q).G
            assert g1.tobytes() == g2.tobytes()

    def test_unknown_schema_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"schema": "other/v9"}))
        with pytest.raises(DataError, match="schema"):
            io.load_checkpoint(path)
