"""Shared builders and independent oracles for the test suite.

The oracles here deliberately avoid the code paths they check: costs are
evaluated straight from their defining sums, Laplacians are accumulated
edge by edge, and translation marginalization is done with dense least
squares.
"""

import numpy as np

from slamcert import so3
from slamcert.graph import MeasurementGraph, PoseLandmarkEdge, PosePoseEdge


def random_orthogonal_stack(rng, n, allow_reflections=False):
    R = np.stack([so3.random_rotation(rng) for _ in range(n)])
    if allow_reflections:
        flips = rng.random(n) < 0.5
        R[flips] = R[flips] * np.array([1.0, 1.0, -1.0])
    return R


def make_random_graph(
    rng,
    n_poses=5,
    n_landmarks=8,
    extra_pose_edges=2,
    obs_per_landmark=2,
    bipartite_connected=False,
    unit_weights=False,
):
    """Random connected measurement graph with both edge types.

    With `bipartite_connected` the landmark edges alone connect all
    vertices (landmark j observes poses j%P and (j+1)%P), which the
    landmark-only problem variants require; use n_landmarks >= n_poses
    there.
    """

    def w():
        return 1.0 if unit_weights else float(rng.uniform(0.5, 2.0))

    lm_edges = []
    for j in range(n_landmarks):
        if bipartite_connected:
            obs = {j % n_poses, (j + 1) % n_poses}
        else:
            k = int(rng.integers(1, obs_per_landmark + 1))
            obs = set(rng.choice(n_poses, size=min(k, n_poses), replace=False))
        for i in sorted(obs):
            lm_edges.append(
                PoseLandmarkEdge(
                    pose=int(i), landmark=j, meas=rng.normal(size=3), w=w()
                )
            )
    pose_edges = [
        PosePoseEdge(
            from_pose=i,
            to_pose=i + 1,
            rel_rotation=so3.random_rotation(rng),
            rel_translation=rng.normal(size=3),
            w_r=w(),
            w_t=w(),
        )
        for i in range(n_poses - 1)
    ]
    for _ in range(extra_pose_edges):
        i, k = rng.choice(n_poses, size=2, replace=False)
        pose_edges.append(
            PosePoseEdge(
                from_pose=int(i),
                to_pose=int(k),
                rel_rotation=so3.random_rotation(rng),
                rel_translation=rng.normal(size=3),
                w_r=w(),
                w_t=w(),
            )
        )
    return MeasurementGraph(n_poses, n_landmarks, lm_edges, pose_edges)


def dense_laplacian_oracle(g, ordering):
    """Weighted Laplacian accumulated edge by edge (degree/adjacency)."""
    from slamcert import graph as graphmod

    nv = g.n_vertices
    L = np.zeros((nv, nv))
    tails, heads = graphmod._edge_endpoints(g, ordering)
    w = graphmod.edge_weights(g, ordering)
    for t, h, we in zip(tails, heads, w):
        L[t, t] += we
        L[h, h] += we
        L[t, h] -= we
        L[h, t] -= we
    return L


def rotation_cost_oracle(g, rotations):
    """Sum of weighted squared Frobenius rotation residuals."""
    total = 0.0
    for e in g.pose_edges:
        diff = rotations[e.from_pose] @ e.rel_rotation - rotations[e.to_pose]
        total += e.w_r * float(np.sum(diff * diff))
    return total


def translation_cost_oracle(g, rotations, translations, landmarks):
    total = 0.0
    for e in g.landmark_edges:
        r = rotations[e.pose] @ e.meas - (landmarks[e.landmark] - translations[e.pose])
        total += e.w * float(r @ r)
    for e in g.pose_edges:
        r = rotations[e.from_pose] @ e.rel_translation - (
            translations[e.to_pose] - translations[e.from_pose]
        )
        total += e.w_t * float(r @ r)
    return total


def _variant_dense_pieces(g, ordering, variant):
    from slamcert.datamatrix import _variant_edges

    tails, heads, w, ys, nv = _variant_edges(g, ordering, variant)
    ne = len(tails)
    sq = np.sqrt(w)
    V = np.zeros((nv, ne))
    V[tails, np.arange(ne)] -= sq
    V[heads, np.arange(ne)] += sq
    return tails, sq, ys, V


def min_translation_cost_oracle(g, ordering, rotations, variant):
    """min over translations/landmarks of the selected translation cost,
    via dense least squares on the incidence system."""
    tails, sq, ys, V = _variant_dense_pieces(g, ordering, variant)
    if V.shape[1] == 0:
        return 0.0
    C = np.stack([sq[e] * (rotations[tails[e]] @ ys[e]) for e in range(len(sq))]).T
    M, *_ = np.linalg.lstsq(V.T, C.T, rcond=None)
    resid = M.T @ V - C
    return float(np.sum(resid * resid))


def rigid_transform_state(state, G, d):
    """Apply a global rigid transform to every pose and landmark."""
    out = state.copy()
    out.rotations = np.einsum("ij,pjk->pik", G, state.rotations)
    out.translations = state.translations @ G.T + d
    out.landmarks = state.landmarks @ G.T + d
    return out
