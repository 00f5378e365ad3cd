"""Measurement graph for landmark-based SLAM.

Vertices are robot poses (indices 0..n_poses-1) followed by landmarks
(rows n_poses..n_poses+n_landmarks-1). Edges carry the raw measurements:
pose->landmark edges hold a 3D point in the observing pose frame,
pose->pose edges hold a relative rotation and translation. All incidence
and Laplacian constructions live here; sparse matrices are scipy CSC.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class PoseLandmarkEdge:
    """Directed pose -> landmark observation with scalar weight."""

    pose: int
    landmark: int
    meas: np.ndarray  # 3-vector in the pose frame
    w: float = 1.0


@dataclass(frozen=True)
class PosePoseEdge:
    """Directed relative measurement from the observing pose to another."""

    from_pose: int
    to_pose: int
    rel_rotation: np.ndarray  # 3x3, SO(3)
    rel_translation: np.ndarray  # 3-vector in the observing pose frame
    w_r: float = 1.0  # rotation-residual weight
    w_t: float = 1.0  # translation-residual weight


class MeasurementGraph:
    """Immutable SLAM measurement graph.

    Validates on construction: index ranges, edge weights, rotation
    orthogonality, landmark degree >= 1, and weak connectivity of the
    undirected graph over all vertices (BFS).
    """

    def __init__(self, n_poses, n_landmarks, landmark_edges, pose_edges):
        if n_poses < 1:
            raise ValueError("graph needs at least one pose")
        if n_landmarks < 0:
            raise ValueError("negative landmark count")
        self.n_poses = int(n_poses)
        self.n_landmarks = int(n_landmarks)
        self.landmark_edges = list(landmark_edges)
        self.pose_edges = list(pose_edges)
        self._validate()

    def _validate(self):
        lm_degree = np.zeros(self.n_landmarks, dtype=int)
        for e in self.landmark_edges:
            if not (0 <= e.pose < self.n_poses):
                raise ValueError(f"pose index {e.pose} out of range")
            if not (0 <= e.landmark < self.n_landmarks):
                raise ValueError(f"landmark index {e.landmark} out of range")
            if not (e.w > 0):
                raise ValueError("invalid weight")
            lm_degree[e.landmark] += 1
        for e in self.pose_edges:
            if not (
                0 <= e.from_pose < self.n_poses and 0 <= e.to_pose < self.n_poses
            ):
                raise ValueError("pose index out of range")
            if e.from_pose == e.to_pose:
                raise ValueError("pose-pose self loop")
            if not (e.w_r > 0 and e.w_t > 0):
                raise ValueError("invalid weight")
            R = np.asarray(e.rel_rotation)
            if np.linalg.norm(R @ R.T - np.eye(3)) > ORTHO_TOL:
                raise ValueError("relative rotation is not orthogonal")
            if np.linalg.det(R) < 0:
                raise ValueError("relative rotation has negative determinant")
        if self.n_landmarks and lm_degree.min() < 1:
            j = int(np.argmin(lm_degree))
            raise ValueError(f"landmark {j} has no observations")
        if not self._connected():
            raise ValueError("measurement graph is not weakly connected")

    def _connected(self):
        n = self.n_poses + self.n_landmarks
        adj = [[] for _ in range(n)]
        for e in self.landmark_edges:
            j = self.n_poses + e.landmark
            adj[e.pose].append(j)
            adj[j].append(e.pose)
        for e in self.pose_edges:
            adj[e.from_pose].append(e.to_pose)
            adj[e.to_pose].append(e.from_pose)
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
        return bool(seen.all())

    @property
    def n_vertices(self):
        return self.n_poses + self.n_landmarks

    @property
    def n_edges(self):
        return len(self.landmark_edges) + len(self.pose_edges)


@dataclass(frozen=True)
class EdgeOrdering:
    """Fixed edge order: landmark edges first, grouped by landmark index,
    then all pose-pose edges. Within a group the original insertion order
    is preserved.

    `landmark_perm[c]` is the index into `g.landmark_edges` occupying
    column c; pose edges occupy columns len(landmark_perm).. in their
    stored order.
    """

    landmark_perm: np.ndarray
    n_pose_edges: int
    group_ptr: np.ndarray = field(default=None)  # per-landmark column ranges

    @property
    def n_landmark_edges(self):
        return len(self.landmark_perm)

    def combined(self):
        """Permutation over E_b + E_p positions (landmark edges are
        positions 0..|E_b|-1 in insertion order, pose edges follow)."""
        nb = self.n_landmark_edges
        pose_part = nb + np.arange(self.n_pose_edges)
        return np.concatenate([self.landmark_perm, pose_part]).astype(int)


def canonical_ordering(g):
    """Order edges so the landmark-incidence block is landmark-wise block
    diagonal: all edges of landmark 0, then landmark 1, ..., then pose
    edges. Stable with respect to insertion order; idempotent."""
    keys = np.array([e.landmark for e in g.landmark_edges], dtype=int)
    perm = np.argsort(keys, kind="stable") if keys.size else np.zeros(0, dtype=int)
    counts = np.bincount(keys, minlength=g.n_landmarks) if keys.size else np.zeros(
        g.n_landmarks, dtype=int
    )
    ptr = np.zeros(g.n_landmarks + 1, dtype=int)
    np.cumsum(counts, out=ptr[1:])
    return EdgeOrdering(
        landmark_perm=perm, n_pose_edges=len(g.pose_edges), group_ptr=ptr
    )


def _edge_endpoints(g, ordering):
    """Tails and heads (vertex indices) for every column in edge order."""
    tails, heads = [], []
    for idx in ordering.landmark_perm:
        e = g.landmark_edges[idx]
        tails.append(e.pose)
        heads.append(g.n_poses + e.landmark)
    for e in g.pose_edges:
        tails.append(e.from_pose)
        heads.append(e.to_pose)
    return np.array(tails, dtype=int), np.array(heads, dtype=int)


def edge_weights(g, ordering):
    """Translation-cost weights in edge order (w_b then w_t)."""
    wb = [g.landmark_edges[i].w for i in ordering.landmark_perm]
    wt = [e.w_t for e in g.pose_edges]
    return np.array(wb + wt, dtype=float)


def edge_measurements(g, ordering):
    """Stacked 3-vector measurements in edge order (the diagonal of Y_s)."""
    ys = [g.landmark_edges[i].meas for i in ordering.landmark_perm]
    ts = [e.rel_translation for e in g.pose_edges]
    if not ys and not ts:
        return np.zeros((0, 3))
    return np.asarray(ys + ts, dtype=float).reshape(-1, 3)


def incidence(g, ordering):
    """Signed vertex x edge incidence matrix: +1 at the head of each edge,
    -1 at the tail. Shape (n_poses + n_landmarks, n_edges), CSC."""
    tails, heads = _edge_endpoints(g, ordering)
    ne = len(tails)
    rows = np.concatenate([tails, heads])
    cols = np.concatenate([np.arange(ne), np.arange(ne)])
    vals = np.concatenate([-np.ones(ne), np.ones(ne)])
    return sp.csc_matrix((vals, (rows, cols)), shape=(g.n_vertices, ne))


def restricted_incidence(g, ordering):
    """Outgoing-edge incidence restricted to pose rows: entry +1 at the
    tail pose of each edge (every edge leaves a pose)."""
    tails, _ = _edge_endpoints(g, ordering)
    ne = len(tails)
    return sp.csc_matrix(
        (np.ones(ne), (tails, np.arange(ne))), shape=(g.n_poses, ne)
    )


def weighted_incidences(g, ordering):
    """(V_s, V_s^p): incidence matrices scaled columnwise by sqrt(weight)."""
    w = edge_weights(g, ordering)
    if np.any(w <= 0):
        raise ValueError("invalid weight")
    sqw = sp.diags(np.sqrt(w))
    return incidence(g, ordering) @ sqw, restricted_incidence(g, ordering) @ sqw


def laplacian(V):
    """Weighted graph Laplacian L = V V^T (symmetric, zero row sums)."""
    return (V @ V.T).tocsc()
