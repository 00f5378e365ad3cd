"""Hot numeric kernels, each in a numba-jitted and a pure numpy variant.

Three loops dominate runtime and get the jit treatment:

  * per-landmark accumulation of the marginalized data-matrix blocks
    (the cost term, cross term, and reduced Schur complement),
  * up-looking sparse Cholesky of the reduced Schur complement,
  * sparse triangular substitution against that factor.

`slamcert.backend` decides which variant the public wrappers dispatch to.
"""

import numpy as np

from .backend import USE_NUMBA, njit, prange

if USE_NUMBA:
    import numba


# ---------------------------------------------------------------------------
# Landmark-block accumulation.
#
# For landmark i with observation edges e (tail pose p_e, weight w_e,
# measurement y_e), marginalizing the landmark leaves, with
# d = sum_e w_e, g_a = sum_{e: p_e=a} w_e, z_a = sum_{e: p_e=a} w_e y_e:
#
#   S1[(a,b)]   += sum_e w_e y_e y_e^T [a=b=p_e]  -  z_a z_b^T / d
#   S2[(a), b-1] += g_b z_a / d  -  z_b [a=b]          (b >= 1)
#   SC[a-1, b-1] += g_a [a=b]  -  g_a g_b / d          (a, b >= 1)
#
# S1 is (3P x 3P), S2 is (3P x P-1), SC is (P-1 x P-1); pose row 0 is the
# deleted vertex of the reduced incidence matrix.
# ---------------------------------------------------------------------------


def _accumulate_landmarks_numpy(lm_ptr, edge_pose, edge_w, edge_y, n_poses, S1, S2, SC):
    for i in range(len(lm_ptr) - 1):
        lo, hi = lm_ptr[i], lm_ptr[i + 1]
        if hi <= lo:
            continue
        poses = edge_pose[lo:hi]
        w = edge_w[lo:hi]
        y = edge_y[lo:hi]
        wy = w[:, None] * y
        # per-edge diagonal term w * y y^T at block (p, p)
        blocks = np.einsum("e,er,ec->erc", w, y, y)
        for e in range(len(poses)):
            p3 = 3 * poses[e]
            S1[p3 : p3 + 3, p3 : p3 + 3] += blocks[e]
        sup, inv = np.unique(poses, return_inverse=True)
        g = np.bincount(inv, weights=w)
        z = np.zeros((len(sup), 3))
        np.add.at(z, inv, wy)
        inv_d = 1.0 / w.sum()
        outer = np.einsum("ar,bc->abrc", z, z) * inv_d
        for a, pa in enumerate(sup):
            for b, pb in enumerate(sup):
                S1[3 * pa : 3 * pa + 3, 3 * pb : 3 * pb + 3] -= outer[a, b]
                if pb >= 1:
                    S2[3 * pa : 3 * pa + 3, pb - 1] += g[b] * inv_d * z[a]
                    if pa == pb:
                        S2[3 * pa : 3 * pa + 3, pb - 1] -= z[b]
                    if pa >= 1:
                        SC[pa - 1, pb - 1] -= g[a] * g[b] * inv_d
                        if pa == pb:
                            SC[pa - 1, pb - 1] += g[a]


@njit(cache=True)
def _accumulate_landmarks_numba(lm_ptr, edge_pose, edge_w, edge_y, n_poses, S1, S2, SC):
    stamp = np.full(n_poses, -1, dtype=np.int64)
    slot = np.zeros(n_poses, dtype=np.int64)
    sup = np.zeros(n_poses, dtype=np.int64)
    g = np.zeros(n_poses)
    z = np.zeros((n_poses, 3))
    for i in range(len(lm_ptr) - 1):
        lo, hi = lm_ptr[i], lm_ptr[i + 1]
        if hi <= lo:
            continue
        m = 0
        d = 0.0
        for e in range(lo, hi):
            p = edge_pose[e]
            w = edge_w[e]
            d += w
            if stamp[p] != i:
                stamp[p] = i
                slot[p] = m
                sup[m] = p
                g[m] = 0.0
                z[m, 0] = 0.0
                z[m, 1] = 0.0
                z[m, 2] = 0.0
                m += 1
            s = slot[p]
            g[s] += w
            for r in range(3):
                z[s, r] += w * edge_y[e, r]
            p3 = 3 * p
            for r in range(3):
                wyr = w * edge_y[e, r]
                for c in range(3):
                    S1[p3 + r, p3 + c] += wyr * edge_y[e, c]
        inv_d = 1.0 / d
        for a in range(m):
            pa = sup[a]
            pa3 = 3 * pa
            for b in range(m):
                pb = sup[b]
                pb3 = 3 * pb
                for r in range(3):
                    zar = z[a, r] * inv_d
                    for c in range(3):
                        S1[pa3 + r, pb3 + c] -= zar * z[b, c]
                if pb >= 1:
                    coef = g[b] * inv_d
                    for r in range(3):
                        S2[pa3 + r, pb - 1] += coef * z[a, r]
                    if pa == pb:
                        for r in range(3):
                            S2[pa3 + r, pb - 1] -= z[b, r]
                    if pa >= 1:
                        SC[pa - 1, pb - 1] -= g[a] * g[b] * inv_d
                        if pa == pb:
                            SC[pa - 1, pb - 1] += g[a]


@njit(parallel=True)
def _accumulate_landmarks_numba_parallel(
    lm_ptr, edge_pose, edge_w, edge_y, n_poses, S1, S2, SC
):
    # Thread-local accumulators, merged after the parallel region. The
    # merge order is deterministic but the per-thread partial sums are
    # not, so results match the sequential kernel only to rounding.
    nt = numba.get_num_threads()
    n_lm = len(lm_ptr) - 1
    S1t = np.zeros((nt,) + S1.shape)
    S2t = np.zeros((nt,) + S2.shape)
    SCt = np.zeros((nt,) + SC.shape)
    for chunk in prange(nt):
        lo_lm = chunk * n_lm // nt
        hi_lm = (chunk + 1) * n_lm // nt
        tid = numba.get_thread_id()
        _accumulate_landmarks_numba(
            lm_ptr[lo_lm : hi_lm + 1],
            edge_pose,
            edge_w,
            edge_y,
            n_poses,
            S1t[tid],
            S2t[tid],
            SCt[tid],
        )
    for t in range(nt):
        S1 += S1t[t]
        S2 += S2t[t]
        SC += SCt[t]


def accumulate_landmarks(lm_ptr, edge_pose, edge_w, edge_y, n_poses, S1, S2, SC,
                         parallel=False):
    """Add all landmark-block contributions into dense S1/S2/SC arrays."""
    lm_ptr = np.ascontiguousarray(lm_ptr, dtype=np.int64)
    edge_pose = np.ascontiguousarray(edge_pose, dtype=np.int64)
    edge_w = np.ascontiguousarray(edge_w, dtype=np.float64)
    edge_y = np.ascontiguousarray(edge_y, dtype=np.float64)
    if USE_NUMBA:
        if parallel:
            _accumulate_landmarks_numba_parallel(
                lm_ptr, edge_pose, edge_w, edge_y, n_poses, S1, S2, SC
            )
        else:
            _accumulate_landmarks_numba(
                lm_ptr, edge_pose, edge_w, edge_y, n_poses, S1, S2, SC
            )
    else:
        _accumulate_landmarks_numpy(
            lm_ptr, edge_pose, edge_w, edge_y, n_poses, S1, S2, SC
        )


# ---------------------------------------------------------------------------
# Sparse Cholesky (up-looking, CSC). A must be symmetric positive definite
# with both triangles stored. Returns CSC arrays of the lower factor L with
# column diagonals first. Pivots (squared diagonal entries) below pivot_abs
# abort with status 1.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _etree(n, Ap, Ai):
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            while i != -1 and i < k:
                nxt = ancestor[i]
                ancestor[i] = k
                if nxt == -1:
                    parent[i] = k
                i = nxt
    return parent


@njit(cache=True)
def _ereach(k, Ap, Ai, parent, mark, stack):
    """Row pattern of L[k, :k] via elimination-tree reach; returns `top`
    such that stack[top:n] holds the pattern in topological order."""
    n = len(mark)
    top = n
    mark[k] = k
    for p in range(Ap[k], Ap[k + 1]):
        i = Ai[p]
        if i > k:
            continue
        ln = 0
        while mark[i] != k:
            stack[ln] = i
            ln += 1
            mark[i] = k
            i = parent[i]
        while ln > 0:
            ln -= 1
            top -= 1
            stack[top] = stack[ln]
    return top


@njit(cache=True)
def _chol_uplooking_numba(n, Ap, Ai, Ax, pivot_abs):
    parent = _etree(n, Ap, Ai)
    mark = np.full(n, -1, dtype=np.int64)
    stack = np.zeros(n, dtype=np.int64)
    counts = np.ones(n, dtype=np.int64)  # diagonal entry per column
    for k in range(n):
        top = _ereach(k, Ap, Ai, parent, mark, stack)
        for t in range(top, n):
            counts[stack[t]] += 1
    Lp = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        Lp[j + 1] = Lp[j] + counts[j]
    nnz = Lp[n]
    Li = np.zeros(nnz, dtype=np.int64)
    Lx = np.zeros(nnz)
    fill = Lp[:n].copy()  # next free slot per column
    mark[:] = -1
    x = np.zeros(n)
    for k in range(n):
        top = _ereach(k, Ap, Ai, parent, mark, stack)
        d = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i < k:
                x[i] = Ax[p]
            elif i == k:
                d = Ax[p]
        for t in range(top, n):
            j = stack[t]
            lkj = x[j] / Lx[Lp[j]]
            x[j] = 0.0
            for p in range(Lp[j] + 1, fill[j]):
                x[Li[p]] -= Lx[p] * lkj
            d -= lkj * lkj
            q = fill[j]
            Li[q] = k
            Lx[q] = lkj
            fill[j] = q + 1
        if d <= pivot_abs:
            return 1, Lp, Li, Lx
        q = fill[k]
        Li[q] = k
        Lx[q] = np.sqrt(d)
        fill[k] = q + 1
    return 0, Lp, Li, Lx


def _chol_dense_numpy(n, Ap, Ai, Ax, pivot_abs):
    import scipy.sparse as sp

    A = sp.csc_matrix((Ax, Ai, Ap), shape=(n, n)).toarray()
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return 1, None, None, None
    if n and np.min(np.diag(L)) ** 2 <= pivot_abs:
        return 1, None, None, None
    Ls = sp.csc_matrix(np.tril(L))
    Ls.sort_indices()
    return 0, Ls.indptr.astype(np.int64), Ls.indices.astype(np.int64), Ls.data


def chol_factor_arrays(n, Ap, Ai, Ax, pivot_abs):
    """Factor a symmetric positive-definite CSC matrix into L L^T.

    Returns (status, Lp, Li, Lx) with status 0 on success, 1 on a pivot
    falling below pivot_abs (numerically singular input).
    """
    Ap = np.ascontiguousarray(Ap, dtype=np.int64)
    Ai = np.ascontiguousarray(Ai, dtype=np.int64)
    Ax = np.ascontiguousarray(Ax, dtype=np.float64)
    if USE_NUMBA:
        return _chol_uplooking_numba(n, Ap, Ai, Ax, pivot_abs)
    return _chol_dense_numpy(n, Ap, Ai, Ax, pivot_abs)


# ---------------------------------------------------------------------------
# Triangular substitution with the CSC factor (diagonal first per column).
# B is dense (n x m) and is overwritten with the solution.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _solve_lower_numba(n, Lp, Li, Lx, B):
    m = B.shape[1]
    for j in range(n):
        dj = Lx[Lp[j]]
        for c in range(m):
            B[j, c] /= dj
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(m):
                B[i, c] -= v * B[j, c]


@njit(cache=True)
def _solve_upper_numba(n, Lp, Li, Lx, B):
    m = B.shape[1]
    for j in range(n - 1, -1, -1):
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(m):
                B[j, c] -= v * B[i, c]
        dj = Lx[Lp[j]]
        for c in range(m):
            B[j, c] /= dj


def _solve_lower_numpy(n, Lp, Li, Lx, B):
    for j in range(n):
        B[j] /= Lx[Lp[j]]
        lo, hi = Lp[j] + 1, Lp[j + 1]
        if hi > lo:
            B[Li[lo:hi]] -= np.outer(Lx[lo:hi], B[j])


def _solve_upper_numpy(n, Lp, Li, Lx, B):
    for j in range(n - 1, -1, -1):
        lo, hi = Lp[j] + 1, Lp[j + 1]
        if hi > lo:
            B[j] -= Lx[lo:hi] @ B[Li[lo:hi]]
        B[j] /= Lx[Lp[j]]


def solve_cholesky(n, Lp, Li, Lx, B):
    """Solve (L L^T) X = B for dense B of shape (n, m); returns X."""
    X = np.array(B, dtype=np.float64, copy=True)
    if X.ndim == 1:
        X = X[:, None]
        squeeze = True
    else:
        squeeze = False
    if n:
        if USE_NUMBA:
            _solve_lower_numba(n, Lp, Li, Lx, X)
            _solve_upper_numba(n, Lp, Li, Lx, X)
        else:
            _solve_lower_numpy(n, Lp, Li, Lx, X)
            _solve_upper_numpy(n, Lp, Li, Lx, X)
    return X[:, 0] if squeeze else X
