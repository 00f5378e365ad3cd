"""Global-optimality certificate for candidate rotation solutions.

At a first-order critical point R* of the marginalized problem, the
block-diagonal dual multiplier is available in closed form: block i is
the i-th 3x3 row block of Q R*^T times R*_i. The candidate is a global
optimum whenever H = Q - blockdiag(multipliers) is positive
semidefinite, which is checked by computing the minimum eigenvalue of H
with a spectrum-shifted Lanczos iteration: estimate an upper bound sigma
of the spectrum by power iteration, find the largest eigenvalue of
sigma*I - H, and subtract. Repeated, deflated solves count the
eigenvalues sitting at the bottom of the spectrum, which estimates the
corank of H (3 exactly when strong duality holds at an exact-data
optimum).
"""

from dataclasses import dataclass

import numpy as np

from .datamatrix import check_rotation_blocks, rotation_stack

LANCZOS_KRYLOV_CAP = 200
LANCZOS_RESTART_CAP = 4
CORANK_SEARCH_CAP = 8
DENSE_FALLBACK_DIM = 600


class EigenvalueStallError(RuntimeError):
    """Lanczos failed to converge within its iteration budget."""


@dataclass
class MultiplierBlocks:
    """Symmetrized dual multiplier blocks with diagnostics."""

    blocks: np.ndarray  # (P, 3, 3), symmetric
    asymmetry: float  # max Frobenius asymmetry before symmetrization

    @property
    def trace_sum(self):
        return float(np.trace(self.blocks, axis1=1, axis2=2).sum())


@dataclass
class CertificateReport:
    min_eig: float
    passed: bool
    primal_cost: float
    dual_value: float
    asymmetry: float
    lanczos_iters: int
    corank_estimate: int
    scale: float
    threshold: float


def compute_lambda(op, rotations):
    """Closed-form dual multiplier blocks at a candidate solution."""
    rotations = check_rotation_blocks(rotations)
    Rt = rotation_stack(rotations)
    G = op.apply(Rt).reshape(-1, 3, 3)  # row blocks of Q R^T
    raw = np.einsum("pij,pjk->pik", G, rotations)
    skew = raw - raw.transpose(0, 2, 1)
    asym = float(np.sqrt(np.sum(skew**2, axis=(1, 2))).max()) if len(raw) else 0.0
    return MultiplierBlocks(blocks=(raw + raw.transpose(0, 2, 1)) / 2.0, asymmetry=asym)


def _as_matvec(H):
    if callable(H):
        return H
    H = np.asarray(H, dtype=float)
    return lambda X: H @ X


def _power_upper_bound(matvec, dim, rng, iters=15):
    """sigma >= lambda_max, from a spectral-radius power estimate."""
    v = rng.standard_normal(dim)
    nv = np.linalg.norm(v)
    if nv == 0 or dim == 0:
        return 1e-12
    v /= nv
    rho = 0.0
    for _ in range(iters):
        w = matvec(v)
        rho = float(np.linalg.norm(w))
        if rho <= 1e-300:
            break
        v = w / rho
    return 1.05 * rho + 1e-12


def _lanczos_run(matvec, dim, ortho, tol, rng, max_krylov, v0=None):
    """One Lanczos sweep for the largest eigenvalue orthogonal to `ortho`.

    Full reorthogonalization against both the Krylov basis and the
    deflation set. Returns (theta, vector, iters, status, basis) with
    status one of "converged", "breakdown" (Krylov space became
    invariant), or "maxed" (iteration cap hit). `basis` is the
    orthonormal Krylov basis built.
    """
    max_krylov = min(max_krylov, dim - len(ortho))
    if max_krylov <= 0:
        return None, None, 0, "breakdown", np.zeros((0, dim))
    V = np.zeros((max_krylov, dim))
    alphas = np.zeros(max_krylov)
    betas = np.zeros(max_krylov)
    q = rng.standard_normal(dim) if v0 is None else v0.copy()
    for O in ortho:
        q -= (O @ q) * O
    nq = np.linalg.norm(q)
    if nq < 1e-12:
        return None, None, 0, "breakdown", np.zeros((0, dim))
    q /= nq
    V[0] = q
    beta = 0.0
    q_prev = np.zeros(dim)
    theta = None
    y = None
    k = 0
    for k in range(1, max_krylov + 1):
        u = matvec(q)
        alpha = float(q @ u)
        u = u - alpha * q - beta * q_prev
        # full reorthogonalization (two passes for safety)
        for _ in range(2):
            u -= V[:k].T @ (V[:k] @ u)
            for O in ortho:
                u -= (O @ u) * O
        alphas[k - 1] = alpha
        beta = float(np.linalg.norm(u))
        betas[k - 1] = beta
        T = np.diag(alphas[:k])
        if k > 1:
            T += np.diag(betas[: k - 1], 1) + np.diag(betas[: k - 1], -1)
        evals, evecs = np.linalg.eigh(T)
        theta = float(evals[-1])
        y = evecs[:, -1]
        resid = abs(beta * y[-1])
        vec = V[:k].T @ y
        nv = np.linalg.norm(vec)
        if nv > 0:
            vec = vec / nv
        if resid < tol:
            return theta, vec, k, "converged", V[:k]
        if beta < 1e-13 * max(1.0, abs(theta)):
            # invariant subspace: theta exact there, but the true maximum
            # may live in the orthogonal complement
            return theta, vec, k, "breakdown", V[:k]
        q_prev = q
        q = u / beta
        if k < max_krylov:
            V[k] = q
    return theta, vec, k, "maxed", V[:k]


def _largest_eigenpair(matvec, dim, ortho, tol, rng):
    """Largest eigenpair orthogonal to `ortho`.

    Restarts on the orthogonal complement after a breakdown (sound: the
    exhausted Krylov space is invariant) and warm-restarts from the best
    Ritz vector when the Krylov cap is hit.
    """
    best = (None, None)
    iters = 0
    extra = list(ortho)
    v0 = None
    for _ in range(LANCZOS_RESTART_CAP):
        theta, vec, k, status, basis = _lanczos_run(
            matvec, dim, extra, tol, rng, LANCZOS_KRYLOV_CAP, v0=v0
        )
        iters += k
        if theta is not None and (best[0] is None or theta > best[0]):
            best = (theta, vec)
        if status == "converged":
            return best[0], best[1], iters, True
        if status == "breakdown":
            if theta is None or len(extra) + len(basis) >= dim:
                return best[0], best[1], iters, best[0] is not None
            extra = extra + [row for row in basis]
            v0 = None
        else:  # maxed: continue from the best Ritz vector found so far
            v0 = best[1]
    return best[0], best[1], iters, False


def smallest_eigenvalues(H, dim, count=1, band_edge=None, tol=1e-9, seed=0):
    """Ascending smallest eigenvalues of a symmetric operator.

    Spectrum-shifted, deflated Lanczos; stops early once an eigenvalue
    exceeds `band_edge` (when given). Falls back to a dense
    eigendecomposition for dim <= 600 if the iteration stalls, and raises
    EigenvalueStallError beyond that.
    """
    matvec = _as_matvec(H)
    rng = np.random.Generator(np.random.Philox(seed))
    sigma = _power_upper_bound(matvec, dim, rng)
    shifted = lambda x: sigma * x - matvec(x)
    eigs = []
    vecs = []
    total_iters = 0
    for _ in range(min(count, dim)):
        theta, vec, iters, ok = _largest_eigenpair(shifted, dim, vecs, tol, rng)
        total_iters += iters
        if not ok or theta is None:
            if dim <= DENSE_FALLBACK_DIM:
                dense = matvec(np.eye(dim))
                evals = np.linalg.eigvalsh((dense + dense.T) / 2.0)
                return evals[: min(count, dim)].tolist(), total_iters
            raise EigenvalueStallError("eigenvalue iteration stalled")
        eigs.append(sigma - theta)
        vecs.append(vec)
        if band_edge is not None and eigs[-1] > band_edge:
            break
        if len(vecs) >= dim:
            break
    return eigs, total_iters


def min_eigenvalue(H, dim, tol=1e-9, seed=0):
    """Minimum eigenvalue of a symmetric operator to absolute tolerance
    `tol`, plus the number of Lanczos iterations spent."""
    eigs, iters = smallest_eigenvalues(H, dim, count=1, tol=tol, seed=seed)
    return eigs[0], iters


def certify(op, rotations, threshold=-1e-8):
    """Run the optimality test at a candidate solution.

    The PSD verdict uses `min_eig / scale > threshold`, where scale is
    the mean diagonal of Q, making the test invariant to uniform weight
    scaling. The corank estimate counts eigenvalues in
    [min_eig, 1e-8 * scale].
    """
    rotations = check_rotation_blocks(rotations)
    Rt = rotation_stack(rotations)
    G = op.apply(Rt)
    primal = float(np.sum(Rt * G))
    mult = compute_lambda(op, rotations)
    lam = mult.blocks
    dim = op.dim

    def h_apply(X):
        QX = op.apply(X)
        vec = X.ndim == 1
        Xb = (X[:, None] if vec else X).reshape(op.n_poses, 3, -1)
        LX = np.einsum("pij,pjm->pim", lam, Xb).reshape(dim, -1)
        return QX - (LX[:, 0] if vec else LX)

    scale = op.scale()
    band_edge = 1e-8 * scale
    tol = max(1e-13, 1e-10 * scale)
    eigs, iters = smallest_eigenvalues(
        h_apply, dim, count=CORANK_SEARCH_CAP, band_edge=band_edge, tol=tol
    )
    min_eig = float(eigs[0])
    corank = int(sum(1 for e in eigs if e <= band_edge))
    passed = bool(min_eig / scale > threshold)
    return CertificateReport(
        min_eig=min_eig,
        passed=passed,
        primal_cost=primal,
        dual_value=mult.trace_sum,
        asymmetry=mult.asymmetry,
        lanczos_iters=iters,
        corank_estimate=corank,
        scale=scale,
        threshold=threshold,
    )


def optimality_gap(primal, dual_reference):
    """Relative gap (primal - dual) / dual; requires a positive dual."""
    if dual_reference <= 0:
        raise ValueError("dual reference must be positive")
    return (primal - dual_reference) / dual_reference
