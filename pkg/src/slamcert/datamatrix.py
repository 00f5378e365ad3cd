"""Data matrices for the marginalized rotation-only problem.

The joint SLAM cost, after eliminating translations and landmark
positions in closed form, reduces to p(R) = tr(Q R^T R) over the stacked
pose rotations R. Q combines a rotation-measurement term (a connection
Laplacian over pose-pose edges) with a translation term obtained by
projecting the measurement stack onto the cycle space of the graph.

Two constructions of the translation term are provided:

  * `build_qbt_dense` - brute-force oracle via a dense pseudoinverse
    projection; only sensible for small instances.
  * `build_qbt_operator` - the production path. Landmarks are eliminated
    block-by-block (their coupling is a rank-one update per landmark),
    leaving dense-in-poses blocks plus a reduced Schur complement that is
    factored by sparse Cholesky. Assembly cost is linear in the number of
    landmarks; the operator never materializes Q and supports products
    against tall-skinny matrices.
"""

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import graph as graphmod
from . import kernels
from .sparsechol import CholeskyFactor, SingularMatrixError, chol_factor


class SingularReducedSystemError(RuntimeError):
    """Reduced Schur complement is not positive definite (disconnected
    variant subgraph or degenerate weights)."""


class ProblemVariant(enum.Enum):
    """Which cost terms enter the data matrix."""

    RA = "ra"  # rotation measurements only
    PGO = "pgo"  # rotation + relative-translation measurements
    MPCR = "mpcr"  # landmark observations only
    MPCR_RT = "mpcr_rt"  # landmark observations + relative translations
    MPCR_RR = "mpcr_rr"  # landmark observations + rotation measurements
    LANDMARK_SLAM = "slam"  # everything

    @property
    def includes_rotation_term(self):
        return self in (
            ProblemVariant.RA,
            ProblemVariant.PGO,
            ProblemVariant.MPCR_RR,
            ProblemVariant.LANDMARK_SLAM,
        )

    @property
    def uses_landmark_edges(self):
        return self in (
            ProblemVariant.MPCR,
            ProblemVariant.MPCR_RT,
            ProblemVariant.MPCR_RR,
            ProblemVariant.LANDMARK_SLAM,
        )

    @property
    def uses_translation_edges(self):
        return self in (
            ProblemVariant.PGO,
            ProblemVariant.MPCR_RT,
            ProblemVariant.LANDMARK_SLAM,
        )


def rotation_stack(rotations):
    """(N, 3, 3) rotation blocks -> stacked transpose of shape (3N, 3)."""
    rotations = np.asarray(rotations, dtype=float)
    n = rotations.shape[0]
    return rotations.transpose(0, 2, 1).reshape(3 * n, 3)


def check_rotation_blocks(rotations, tol=1e-8):
    rotations = np.asarray(rotations, dtype=float)
    err = rotations @ rotations.transpose(0, 2, 1) - np.eye(3)
    worst = np.abs(err).max() if rotations.size else 0.0
    if worst > tol:
        raise ValueError(f"rotation blocks not orthogonal (residual {worst:.2e})")
    return rotations


def build_qr(g):
    """Rotation-averaging data matrix (3P x 3P sparse).

    Block (i, k) of an edge (i, k) carries -w * R_ik_meas, block (k, i)
    its transpose, and w * I is added to both endpoint diagonal blocks.
    With that convention tr(Qr R^T R) equals the rotation cost exactly
    for orthogonal blocks, and Qr is positive semidefinite.
    """
    n = g.n_poses
    ne = len(g.pose_edges)
    if ne == 0:
        return sp.csr_matrix((3 * n, 3 * n))
    ii = np.array([e.from_pose for e in g.pose_edges])
    kk = np.array([e.to_pose for e in g.pose_edges])
    w = np.array([e.w_r for e in g.pose_edges])
    Rm = np.asarray([e.rel_rotation for e in g.pose_edges], dtype=float)
    rr = np.repeat(np.arange(3), 3)
    cc = np.tile(np.arange(3), 3)
    eye_blocks = np.broadcast_to(np.eye(3).ravel(), (ne, 9))
    blocks = np.concatenate(
        [
            w[:, None] * eye_blocks,  # (i, i)
            w[:, None] * eye_blocks,  # (k, k)
            -w[:, None] * Rm.reshape(ne, 9),  # (i, k)
            -w[:, None] * Rm.transpose(0, 2, 1).reshape(ne, 9),  # (k, i)
        ]
    ).ravel()
    bi = np.concatenate([ii, kk, ii, kk])
    bj = np.concatenate([ii, kk, kk, ii])
    rows = (3 * bi[:, None] + rr[None, :]).ravel()
    cols = (3 * bj[:, None] + cc[None, :]).ravel()
    return sp.csr_matrix((blocks, (rows, cols)), shape=(3 * n, 3 * n))


def _variant_edges(g, ordering, variant):
    """Edge arrays (tail pose, weight, measurement, head vertex) restricted
    to the translation edges of the variant, plus the vertex count of the
    relevant subgraph (poses only when landmark edges are excluded)."""
    tails, heads, ws, ys = [], [], [], []
    if variant.uses_landmark_edges:
        for idx in ordering.landmark_perm:
            e = g.landmark_edges[idx]
            tails.append(e.pose)
            heads.append(g.n_poses + e.landmark)
            ws.append(e.w)
            ys.append(e.meas)
    if variant.uses_translation_edges:
        for e in g.pose_edges:
            tails.append(e.from_pose)
            heads.append(e.to_pose)
            ws.append(e.w_t)
            ys.append(e.rel_translation)
    n_vertices = g.n_poses + (g.n_landmarks if variant.uses_landmark_edges else 0)
    return (
        np.array(tails, dtype=int),
        np.array(heads, dtype=int),
        np.array(ws, dtype=float),
        np.asarray(ys, dtype=float).reshape(-1, 3),
        n_vertices,
    )


def _subgraph_connected(n_vertices, tails, heads):
    adj = [[] for _ in range(n_vertices)]
    for t, h in zip(tails, heads):
        adj[t].append(h)
        adj[h].append(t)
    seen = np.zeros(n_vertices, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        v = stack.pop()
        for u in adj[v]:
            if not seen[u]:
                seen[u] = True
                stack.append(u)
    return bool(seen.all())


def projection_matrix_dense(V, rcond=1e-10):
    """I - pinv(V) V: orthogonal projector onto the nullspace of V."""
    V = np.asarray(V, dtype=float)
    return np.eye(V.shape[1]) - np.linalg.pinv(V, rcond=rcond) @ V


def reduced_projection_matrix_dense(V):
    """Same projector computed from V with its first row deleted, using a
    plain inverse of the reduced Gram matrix (valid for connected graphs)."""
    Vr = np.asarray(V, dtype=float)[1:]
    Lr = Vr @ Vr.T
    return np.eye(Vr.shape[1]) - Vr.T @ np.linalg.solve(Lr, Vr)


def build_qbt_dense(g, ordering=None, variant=ProblemVariant.LANDMARK_SLAM):
    """Brute-force translation data matrix via the dense nullspace
    projector. Oracle for small instances; O((P+M)^3)-ish."""
    if ordering is None:
        ordering = graphmod.canonical_ordering(g)
    n = g.n_poses
    tails, heads, ws, ys, n_vertices = _variant_edges(g, ordering, variant)
    ne = len(tails)
    if ne == 0:
        return np.zeros((3 * n, 3 * n))
    if not _subgraph_connected(n_vertices, tails, heads):
        raise ValueError("variant subgraph disconnected")
    sq = np.sqrt(ws)
    V = np.zeros((n_vertices, ne))
    V[tails, np.arange(ne)] -= sq
    V[heads, np.arange(ne)] += sq
    A = projection_matrix_dense(V)
    # columns of (restricted incidence x I3) Y: sqrt(w) * y at the tail block
    U = np.zeros((3 * n, ne))
    for e in range(ne):
        U[3 * tails[e] : 3 * tails[e] + 3, e] = sq[e] * ys[e]
    Q = U @ A @ U.T
    return (Q + Q.T) / 2.0


@dataclass
class DataMatrixOperator:
    """Implicit Q = Qr + S1 - S2 (C C^T)^{-1} S2^T with sparse pieces.

    All block sizes depend only on the pose count; landmark information is
    folded into S1/S2 and the Cholesky factor of the reduced Schur
    complement. Immutable after construction; `apply` is safe to call
    concurrently.
    """

    variant: ProblemVariant
    n_poses: int
    s1: sp.csr_matrix
    s2: sp.csr_matrix  # 3P x (P-1); None when no translation edges
    s2t: sp.csr_matrix
    chol_factor: CholeskyFactor
    qr_part: sp.csr_matrix  # None unless the variant has a rotation term
    _diag_cache: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self):
        return 3 * self.n_poses

    def apply(self, X):
        """Product Q @ X for X of shape (3P,) or (3P, m)."""
        X = np.asarray(X, dtype=float)
        vec = X.ndim == 1
        if vec:
            X = X[:, None]
        if X.shape[0] != self.dim:
            raise ValueError(
                f"dimension mismatch: expected {self.dim} rows, got {X.shape[0]}"
            )
        out = np.zeros_like(X)
        if self.s1 is not None:
            out += self.s1 @ X
        if self.s2 is not None and self.chol_factor.n:
            out -= self.s2 @ self.chol_factor.solve(self.s2t @ X)
        if self.qr_part is not None:
            out += self.qr_part @ X
        return out[:, 0] if vec else out

    def dense(self):
        """Materialized Q; oracle-comparison and small-instance use only."""
        return self.apply(np.eye(self.dim))

    def diagonal(self):
        if self._diag_cache is None:
            d = np.zeros(self.dim)
            if self.s1 is not None:
                d += self.s1.diagonal()
            if self.qr_part is not None:
                d += self.qr_part.diagonal()
            if self.s2 is not None and self.chol_factor.n:
                S2d = self.s2.toarray()
                W = self.chol_factor.solve(S2d.T)
                d -= np.einsum("ij,ji->i", S2d, W)
            self._diag_cache = d
        return self._diag_cache

    def scale(self):
        """Mean diagonal of Q; used to normalize eigenvalue thresholds."""
        d = float(self.diagonal().mean()) if self.dim else 0.0
        return d if d > 0 else 1.0

    def marginal_cost(self, rotations):
        return evaluate_marginal_cost(self, rotations)


def build_qbt_operator(
    g, ordering=None, variant=ProblemVariant.LANDMARK_SLAM, parallel=False
):
    """Assemble the implicit data-matrix operator.

    Work is one pass over landmark groups (each contributing small dense
    blocks on the poses that observe it), one pass over pose edges, and a
    sparse Cholesky of the reduced (P-1 x P-1) Schur complement.
    """
    if ordering is None:
        ordering = graphmod.canonical_ordering(g)
    n = g.n_poses
    dim = 3 * n
    has_lm = variant.uses_landmark_edges and ordering.n_landmark_edges > 0
    has_tr = variant.uses_translation_edges and len(g.pose_edges) > 0
    s1 = s2 = s2t = None
    factor = CholeskyFactor(
        0, np.zeros(0, dtype=np.int64), np.zeros(1, dtype=np.int64),
        np.zeros(0, dtype=np.int64), np.zeros(0),
    )
    if has_lm or has_tr:
        S1 = np.zeros((dim, dim))
        S2 = np.zeros((dim, n - 1))
        SC = np.zeros((n - 1, n - 1))
        if has_lm:
            perm = ordering.landmark_perm
            edge_pose = np.array([g.landmark_edges[i].pose for i in perm], dtype=int)
            edge_w = np.array([g.landmark_edges[i].w for i in perm], dtype=float)
            edge_y = np.asarray(
                [g.landmark_edges[i].meas for i in perm], dtype=float
            ).reshape(-1, 3)
            kernels.accumulate_landmarks(
                ordering.group_ptr, edge_pose, edge_w, edge_y, n, S1, S2, SC,
                parallel=parallel,
            )
        if has_tr:
            for e in g.pose_edges:
                i, k, w = e.from_pose, e.to_pose, e.w_t
                t = np.asarray(e.rel_translation, dtype=float)
                S1[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] += w * np.outer(t, t)
                if i >= 1:
                    S2[3 * i : 3 * i + 3, i - 1] -= w * t
                    SC[i - 1, i - 1] += w
                if k >= 1:
                    S2[3 * i : 3 * i + 3, k - 1] += w * t
                    SC[k - 1, k - 1] += w
                if i >= 1 and k >= 1:
                    SC[i - 1, k - 1] -= w
                    SC[k - 1, i - 1] -= w
        S1 = (S1 + S1.T) / 2.0
        s1 = sp.csr_matrix(S1)
        if n > 1:
            try:
                factor = chol_factor(SC, pivot_rtol=1e-12)
            except SingularMatrixError as err:
                raise SingularReducedSystemError(
                    "numerically singular reduced system"
                ) from err
            s2 = sp.csr_matrix(S2)
            s2t = sp.csr_matrix(S2.T)
    qr = build_qr(g) if variant.includes_rotation_term else None
    if s1 is None and qr is None:
        s1 = sp.csr_matrix((dim, dim))
    return DataMatrixOperator(
        variant=variant,
        n_poses=n,
        s1=s1,
        s2=s2,
        s2t=s2t,
        chol_factor=factor,
        qr_part=qr,
    )


def evaluate_marginal_cost(op, rotations):
    """p(R) = tr(Q R^T R) evaluated through operator products."""
    rotations = check_rotation_blocks(rotations)
    Rt = rotation_stack(rotations)
    return float(np.sum(Rt * op.apply(Rt)))
