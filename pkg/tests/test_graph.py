import numpy as np
import pytest

from slamcert import graph as G
from slamcert.graph import MeasurementGraph, PoseLandmarkEdge, PosePoseEdge

from helpers import dense_laplacian_oracle, make_random_graph


def _edge(i, j, w=1.0):
    return PoseLandmarkEdge(pose=i, landmark=j, meas=np.zeros(3), w=w)


def _pedge(i, k, w_r=1.0, w_t=1.0):
    return PosePoseEdge(
        from_pose=i, to_pose=k, rel_rotation=np.eye(3),
        rel_translation=np.zeros(3), w_r=w_r, w_t=w_t,
    )


class TestCanonicalOrdering:
    def test_groups_landmarks_before_pose_edges(self):
        # conceptual insertion order: [pose edge, lm(L0), lm(L1), lm(L0)]
        g = MeasurementGraph(
            2, 2,
            landmark_edges=[_edge(0, 0), _edge(1, 1), _edge(0, 0)],
            pose_edges=[_pedge(0, 1)],
        )
        ordering = G.canonical_ordering(g)
        # landmark-edge columns: both L0 edges (insertion order), then L1
        assert ordering.landmark_perm.tolist() == [0, 2, 1]
        assert ordering.combined().tolist() == [0, 2, 1, 3]
        assert ordering.group_ptr.tolist() == [0, 2, 3]

    def test_no_landmark_edges_keeps_pose_order(self):
        g = MeasurementGraph(3, 0, [], [_pedge(0, 1), _pedge(1, 2)])
        ordering = G.canonical_ordering(g)
        assert ordering.combined().tolist() == [0, 1]

    def test_contiguity_on_random_graph(self, rng):
        g = make_random_graph(rng, n_poses=6, n_landmarks=5, obs_per_landmark=3)
        ordering = G.canonical_ordering(g)
        keys = [g.landmark_edges[i].landmark for i in ordering.landmark_perm]
        # grouped: once a landmark index changes it never reappears
        seen = set()
        prev = None
        for k in keys:
            if k != prev:
                assert k not in seen
                seen.add(k)
            prev = k
        # every landmark edge precedes every pose edge
        comb = ordering.combined()
        nb = len(g.landmark_edges)
        assert all(c < nb for c in comb[:nb])

    def test_idempotent_and_deterministic(self, rng):
        g = make_random_graph(rng, n_poses=5, n_landmarks=7)
        o1 = G.canonical_ordering(g)
        o2 = G.canonical_ordering(g)
        assert np.array_equal(o1.landmark_perm, o2.landmark_perm)


class TestIncidence:
    def test_single_edge_column(self):
        g = MeasurementGraph(1, 1, [_edge(0, 0)], [])
        B = G.incidence(g, G.canonical_ordering(g)).toarray()
        assert B.tolist() == [[-1.0], [1.0]]

    def test_columns_sum_to_zero(self, rng):
        g = make_random_graph(rng, n_poses=6, n_landmarks=8)
        B = G.incidence(g, G.canonical_ordering(g))
        assert np.abs(np.asarray(B.sum(axis=0))).max() == 0.0

    def test_rank_is_vertices_minus_one(self, rng):
        for _ in range(5):
            g = make_random_graph(rng, n_poses=5, n_landmarks=6)
            B = G.incidence(g, G.canonical_ordering(g)).toarray()
            assert np.linalg.matrix_rank(B) == g.n_vertices - 1

    def test_landmark_rows_zero_for_pose_edges(self, rng):
        g = make_random_graph(rng, n_poses=5, n_landmarks=4)
        ordering = G.canonical_ordering(g)
        B = G.incidence(g, ordering).toarray()
        nb = ordering.n_landmark_edges
        assert np.all(B[g.n_poses :, nb:] == 0.0)


class TestRestrictedIncidence:
    def test_single_edge(self):
        g = MeasurementGraph(1, 1, [_edge(0, 0)], [])
        Bp = G.restricted_incidence(g, G.canonical_ordering(g)).toarray()
        assert Bp.tolist() == [[1.0]]

    def test_pose_edge_marks_tail_only(self):
        g = MeasurementGraph(2, 1, [_edge(0, 0)], [_pedge(0, 1)])
        Bp = G.restricted_incidence(g, G.canonical_ordering(g)).toarray()
        assert Bp[:, 1].tolist() == [1.0, 0.0]

    def test_one_nonzero_per_column(self, rng):
        g = make_random_graph(rng, n_poses=6, n_landmarks=7)
        Bp = G.restricted_incidence(g, G.canonical_ordering(g))
        counts = np.asarray((Bp != 0).sum(axis=0)).ravel()
        assert np.all(counts == 1)


class TestWeightedIncidence:
    def test_unit_weights_equal_incidence(self, rng):
        g = make_random_graph(rng, unit_weights=True)
        ordering = G.canonical_ordering(g)
        V, Vp = G.weighted_incidences(g, ordering)
        assert np.allclose(V.toarray(), G.incidence(g, ordering).toarray())
        assert np.allclose(
            Vp.toarray(), G.restricted_incidence(g, ordering).toarray()
        )

    def test_weight_four_scales_by_two(self):
        g = MeasurementGraph(1, 1, [_edge(0, 0, w=4.0)], [])
        V, _ = G.weighted_incidences(g, G.canonical_ordering(g))
        assert np.allclose(V.toarray(), [[-2.0], [2.0]])

    def test_laplacian_matches_oracle(self, rng):
        g = make_random_graph(rng, n_poses=6, n_landmarks=9)
        ordering = G.canonical_ordering(g)
        V, _ = G.weighted_incidences(g, ordering)
        L = G.laplacian(V).toarray()
        assert np.allclose(L, dense_laplacian_oracle(g, ordering), atol=1e-12)


class TestLaplacian:
    def test_two_vertex_chain(self):
        g = MeasurementGraph(1, 1, [_edge(0, 0)], [])
        V, _ = G.weighted_incidences(g, G.canonical_ordering(g))
        assert np.allclose(G.laplacian(V).toarray(), [[1, -1], [-1, 1]])

    def test_ones_vector_in_nullspace(self, rng):
        g = make_random_graph(rng)
        V, _ = G.weighted_incidences(g, G.canonical_ordering(g))
        L = G.laplacian(V)
        assert np.abs(L @ np.ones(g.n_vertices)).max() < 1e-12

    def test_spectrum_of_connected_graph(self, rng):
        for _ in range(3):
            g = make_random_graph(rng, n_poses=4, n_landmarks=5)
            V, _ = G.weighted_incidences(g, G.canonical_ordering(g))
            evals = np.linalg.eigvalsh(G.laplacian(V).toarray())
            assert abs(evals[0]) < 1e-10
            assert evals[1] > 1e-8  # corank exactly one


class TestValidation:
    def test_invalid_weight(self):
        with pytest.raises(ValueError, match="invalid weight"):
            MeasurementGraph(1, 1, [_edge(0, 0, w=0.0)], [])

    def test_disconnected_graph_rejected(self):
        with pytest.raises(ValueError, match="connected"):
            MeasurementGraph(3, 1, [_edge(0, 0)], [_pedge(0, 1)])

    def test_unobserved_landmark_rejected(self):
        with pytest.raises(ValueError, match="no observations"):
            MeasurementGraph(2, 2, [_edge(0, 0), _edge(1, 0)], [_pedge(0, 1)])

    def test_non_orthogonal_rotation_rejected(self):
        bad = PosePoseEdge(
            from_pose=0, to_pose=1, rel_rotation=np.eye(3) * 1.01,
            rel_translation=np.zeros(3),
        )
        with pytest.raises(ValueError, match="orthogonal"):
            MeasurementGraph(2, 0, [], [bad])

    def test_duplicate_edges_allowed(self):
        g = MeasurementGraph(2, 0, [], [_pedge(0, 1), _pedge(0, 1)])
        assert g.n_edges == 2
