"""Sparse Cholesky factorization with a fill-reducing ordering.

Factors a symmetric positive-definite matrix as P A P^T = L L^T where P
is a greedy minimum-degree permutation. The numeric phase runs in the
active kernel backend (see `slamcert.backend`); solves are two sparse
triangular substitutions.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels


class SingularMatrixError(RuntimeError):
    """A pivot fell below the tolerance during factorization."""


def min_degree_order(A):
    """Greedy minimum-degree ordering of a symmetric sparsity pattern.

    Eliminates the lowest-degree vertex first, connecting its neighbors
    into a clique (the fill the numeric factorization will produce).
    Dense boolean adjacency keeps the bookkeeping vectorized; ties break
    on vertex index, so the ordering is deterministic.
    """
    if sp.issparse(A):
        n = A.shape[0]
        adj = (A != 0).toarray()
    else:
        A = np.asarray(A)
        n = A.shape[0]
        adj = A != 0
    adj = adj | adj.T
    np.fill_diagonal(adj, False)
    alive = np.ones(n, dtype=bool)
    degree = adj.sum(axis=1)
    perm = np.empty(n, dtype=np.int64)
    for k in range(n):
        masked = np.where(alive, degree, n + 1)
        v = int(np.argmin(masked))
        perm[k] = v
        alive[v] = False
        nbrs = np.flatnonzero(adj[v] & alive)
        adj[v, :] = False
        adj[:, v] = False
        degree[nbrs] -= 1
        if len(nbrs) > 1:
            sub = adj[np.ix_(nbrs, nbrs)]  # copy; diagonal is False
            added = ~sub
            added[np.diag_indices_from(added)] = False
            if added.any():
                adj[np.ix_(nbrs, nbrs)] = sub | added
                degree[nbrs] += added.sum(axis=1)
    return perm


@dataclass
class CholeskyFactor:
    """Lower-triangular CSC factor with its fill-reducing permutation."""

    n: int
    perm: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray
    Lx: np.ndarray

    def solve(self, B):
        """Solve A X = B given the factorization of A."""
        B = np.asarray(B, dtype=float)
        vec = B.ndim == 1
        if vec:
            B = B[:, None]
        X = kernels.solve_cholesky(self.n, self.Lp, self.Li, self.Lx, B[self.perm])
        out = np.empty_like(X)
        out[self.perm] = X
        return out[:, 0] if vec else out

    @property
    def nnz(self):
        return len(self.Lx)

    def diag_squared(self):
        """Squared diagonal of L (the elimination pivots)."""
        return self.Lx[self.Lp[:-1]] ** 2 if self.n else np.zeros(0)


def chol_factor(S, pivot_rtol=1e-12):
    """Factor a symmetric positive-definite matrix (sparse or dense);
    raises SingularMatrixError when any pivot drops below pivot_rtol
    times the largest diagonal entry."""
    dense_input = not sp.issparse(S)
    n = S.shape[0]
    if n == 0:
        z = np.zeros(0, dtype=np.int64)
        return CholeskyFactor(0, z, np.zeros(1, dtype=np.int64), z, np.zeros(0))
    diag = np.asarray(S).diagonal() if dense_input else S.diagonal()
    max_diag = float(diag.max())
    if max_diag <= 0:
        raise SingularMatrixError("matrix has non-positive diagonal")
    perm = min_degree_order(S)
    if dense_input:
        Spp = sp.csc_matrix(np.asarray(S)[np.ix_(perm, perm)])
    else:
        Spp = S.tocsc()[perm, :][:, perm].tocsc()
    Spp.sort_indices()
    status, Lp, Li, Lx = kernels.chol_factor_arrays(
        n, Spp.indptr, Spp.indices, Spp.data, pivot_rtol * max_diag
    )
    if status != 0:
        raise SingularMatrixError("pivot below tolerance")
    return CholeskyFactor(n, perm, Lp, Li, Lx)
