"""Local optimization of the joint SLAM problem.

`gauss_newton` runs damped Gauss-Newton (Levenberg-Marquardt style
accept/reject) over pose rotations, pose translations, and landmark
positions, with one pose locked to fix the gauge. Rotations update
multiplicatively through the exponential map; everything else is
additive. `recover_translations` solves the closed-form optimum of the
translation variables for fixed rotations. `riemannian_refine` descends
the marginalized rotation-only cost through the data-matrix operator.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import graph as graphmod
from . import so3
from .datamatrix import rotation_stack

_E_HAT = np.stack([so3.hat(e) for e in np.eye(3)])  # so(3) basis


class SingularNormalEquationsError(RuntimeError):
    """Normal equations could not be solved (under-constrained problem)."""


@dataclass
class SlamState:
    rotations: np.ndarray  # (P, 3, 3)
    translations: np.ndarray  # (P, 3)
    landmarks: np.ndarray  # (M, 3)

    def copy(self):
        return SlamState(
            self.rotations.copy(), self.translations.copy(), self.landmarks.copy()
        )

    @property
    def n_poses(self):
        return len(self.rotations)

    @property
    def n_landmarks(self):
        return len(self.landmarks)


@dataclass
class SolverConfig:
    max_iters: int = 200
    step_sq_tol: float = 1e-10
    gauge_lock: int = 0
    damping: float = 1e-6


@dataclass
class SolveResult:
    state: SlamState
    final_cost: float
    iterations: int
    converged: bool


def identity_state(g):
    return SlamState(
        rotations=np.tile(np.eye(3), (g.n_poses, 1, 1)),
        translations=np.zeros((g.n_poses, 3)),
        landmarks=np.zeros((g.n_landmarks, 3)),
    )


def _edge_arrays(g):
    B = len(g.landmark_edges)
    T = len(g.pose_edges)
    lp = np.array([e.pose for e in g.landmark_edges], dtype=int)
    lj = np.array([e.landmark for e in g.landmark_edges], dtype=int)
    ly = np.asarray([e.meas for e in g.landmark_edges], dtype=float).reshape(B, 3)
    lw = np.sqrt(np.array([e.w for e in g.landmark_edges], dtype=float))
    pi = np.array([e.from_pose for e in g.pose_edges], dtype=int)
    pk = np.array([e.to_pose for e in g.pose_edges], dtype=int)
    pt = np.asarray(
        [e.rel_translation for e in g.pose_edges], dtype=float
    ).reshape(T, 3)
    pR = np.asarray(
        [e.rel_rotation for e in g.pose_edges], dtype=float
    ).reshape(T, 3, 3)
    swr = np.sqrt(np.array([e.w_r for e in g.pose_edges], dtype=float))
    swt = np.sqrt(np.array([e.w_t for e in g.pose_edges], dtype=float))
    return lp, lj, ly, lw, pi, pk, pt, pR, swr, swt


def _residuals(g, state, arrays):
    lp, lj, ly, lw, pi, pk, pt, pR, swr, swt = arrays
    R, t, m = state.rotations, state.translations, state.landmarks
    parts = []
    if len(lp):
        r = lw[:, None] * (np.einsum("eij,ej->ei", R[lp], ly) + t[lp] - m[lj])
        parts.append(r.ravel())
    if len(pi):
        r = swt[:, None] * (np.einsum("eij,ej->ei", R[pi], pt) + t[pi] - t[pk])
        parts.append(r.ravel())
        rrot = np.einsum("eij,ejk->eik", R[pi], pR) - R[pk]
        parts.append((swr[:, None, None] * rrot).reshape(len(pi), 9).ravel())
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def full_cost(g, state):
    """Exact joint cost: weighted squared residuals of all measurements."""
    r = _residuals(g, state, _edge_arrays(g))
    return float(r @ r)


def _hat_batch(v):
    out = np.zeros((len(v), 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


class _Linearizer:
    """Builds the sparse residual Jacobian over the free variables.

    Variable layout: 6 slots per unlocked pose (rotation tangent, then
    translation), then 3 per landmark. The gauge pose contributes no
    columns and never moves.
    """

    def __init__(self, g, gauge_lock):
        self.g = g
        self.arrays = _edge_arrays(g)
        self.gauge_lock = gauge_lock
        self.pose_col = np.full(g.n_poses, -1, dtype=int)
        col = 0
        for i in range(g.n_poses):
            if i != gauge_lock:
                self.pose_col[i] = col
                col += 6
        self.lm_col = col + 3 * np.arange(g.n_landmarks)
        self.n_vars = col + 3 * g.n_landmarks
        B = len(g.landmark_edges)
        T = len(g.pose_edges)
        self.row_lm = 0
        self.row_pt = 3 * B
        self.row_rot = 3 * B + 3 * T
        self.n_rows = 3 * B + 12 * T

    @staticmethod
    def _shift(col_base, offset):
        """Offset valid column bases, keeping gauge markers (-1) masked."""
        return np.where(col_base >= 0, col_base + offset, -1)

    def _block_coo(self, out, row_base, col_base, blocks):
        """Append COO entries for (E, rows, 3) blocks; col_base -1 skips."""
        rows_list, cols_list, vals_list = out
        e_mask = col_base >= 0
        if not np.any(e_mask):
            return
        blocks = blocks[e_mask]
        rb = row_base[e_mask]
        cb = col_base[e_mask]
        nr = blocks.shape[1]
        rows = rb[:, None, None] + np.arange(nr)[None, :, None]
        cols = cb[:, None, None] + np.arange(3)[None, None, :]
        rows_list.append(np.broadcast_to(rows, blocks.shape).ravel())
        cols_list.append(np.broadcast_to(cols, blocks.shape).ravel())
        vals_list.append(blocks.ravel())

    def jacobian(self, state):
        lp, lj, ly, lw, pi, pk, pt, pR, swr, swt = self.arrays
        R = state.rotations
        out = ([], [], [])
        eye3 = np.eye(3)
        if len(lp):
            rowb = self.row_lm + 3 * np.arange(len(lp))
            hatY = _hat_batch(ly)
            dphi = -lw[:, None, None] * np.einsum("eij,ejk->eik", R[lp], hatY)
            self._block_coo(out, rowb, self.pose_col[lp], dphi)
            dti = lw[:, None, None] * np.broadcast_to(eye3, (len(lp), 3, 3))
            self._block_coo(out, rowb, self._shift(self.pose_col[lp], 3), dti)
            dm = -lw[:, None, None] * np.broadcast_to(eye3, (len(lp), 3, 3))
            self._block_coo(out, rowb, self.lm_col[lj], dm)
        if len(pi):
            rowb = self.row_pt + 3 * np.arange(len(pi))
            hatT = _hat_batch(pt)
            dphi = -swt[:, None, None] * np.einsum("eij,ejk->eik", R[pi], hatT)
            self._block_coo(out, rowb, self.pose_col[pi], dphi)
            dti = swt[:, None, None] * np.broadcast_to(eye3, (len(pi), 3, 3))
            self._block_coo(out, rowb, self._shift(self.pose_col[pi], 3), dti)
            dtk = -swt[:, None, None] * np.broadcast_to(eye3, (len(pi), 3, 3))
            self._block_coo(out, rowb, self._shift(self.pose_col[pk], 3), dtk)
            rowb9 = self.row_rot + 9 * np.arange(len(pi))
            # column a of the 9x3 block is vec(R_i E_a Rmeas) (row-major vec)
            dphi_i = np.einsum("eri,aij,ejc->erca", R[pi], _E_HAT, pR).reshape(
                len(pi), 9, 3
            )
            self._block_coo(out, rowb9, self.pose_col[pi], swr[:, None, None] * dphi_i)
            dphi_k = np.einsum("eri,aic->erca", R[pk], _E_HAT).reshape(len(pi), 9, 3)
            self._block_coo(
                out, rowb9, self.pose_col[pk], -swr[:, None, None] * dphi_k
            )
        if out[0]:
            rows = np.concatenate(out[0])
            cols = np.concatenate(out[1])
            vals = np.concatenate(out[2])
        else:
            rows = cols = np.zeros(0, dtype=int)
            vals = np.zeros(0)
        return sp.csr_matrix(
            (vals, (rows, cols)), shape=(self.n_rows, self.n_vars)
        )

    def residual(self, state):
        return _residuals(self.g, state, self.arrays)

    def retract(self, state, delta):
        new = state.copy()
        for i in range(self.g.n_poses):
            c = self.pose_col[i]
            if c < 0:
                continue
            new.rotations[i] = state.rotations[i] @ so3.exp(delta[c : c + 3])
            new.translations[i] = state.translations[i] + delta[c + 3 : c + 6]
        if self.g.n_landmarks:
            new.landmarks += delta[self.lm_col[0] :].reshape(-1, 3)
        return new


class _NormalEquations:
    """Damped normal equations solved by eliminating the landmark block.

    The landmark diagonal of J^T J is exactly (sum of edge weights) * I3
    per landmark and landmarks do not couple, so the Schur complement
    onto the pose variables is cheap and dense; its size is independent
    of the landmark count.
    """

    def __init__(self, lin, J, r):
        n_pose_vars = lin.n_vars - 3 * lin.g.n_landmarks
        self.np_ = n_pose_vars
        self.nl = 3 * lin.g.n_landmarks
        JtJ = (J.T @ J).tocsc()
        Jtr = J.T @ r
        self.App = JtJ[:n_pose_vars, :n_pose_vars].toarray()
        self.Apl = JtJ[:n_pose_vars, n_pose_vars:].toarray()
        self.bp = -Jtr[:n_pose_vars]
        self.bl = -Jtr[n_pose_vars:]
        self.all_diag = JtJ.diagonal()[n_pose_vars:]

    def solve(self, lam):
        delta = np.empty(self.np_ + self.nl)
        if self.nl:
            inv_all = 1.0 / (self.all_diag + lam)
            W = self.Apl * inv_all[None, :]
            S = self.App - W @ self.Apl.T
            rhs = self.bp - W @ self.bl
        else:
            S = self.App.copy()
            rhs = self.bp
        S[np.diag_indices_from(S)] += lam
        try:
            if self.np_:
                cf = sla.cho_factor(S, check_finite=False)
                dp = sla.cho_solve(cf, rhs, check_finite=False)
            else:
                dp = np.zeros(0)
        except np.linalg.LinAlgError as err:
            raise SingularNormalEquationsError(
                "singular normal equations"
            ) from err
        delta[: self.np_] = dp
        if self.nl:
            delta[self.np_ :] = inv_all * (self.bl - self.Apl.T @ dp)
        return delta


def gauss_newton(g, init, cfg=None):
    """Damped Gauss-Newton with multiplicative rotation updates.

    Accepts a step only when the cost does not increase; the damping
    parameter halves on accept and quadruples on reject. Terminates when
    the squared step norm of an accepted (or hopeless) step falls below
    `cfg.step_sq_tol`, or after `cfg.max_iters` iterations.
    """
    cfg = cfg or SolverConfig()
    if not (0 <= cfg.gauge_lock < g.n_poses):
        raise ValueError("gauge_lock pose does not exist")
    lin = _Linearizer(g, cfg.gauge_lock)
    state = init.copy()
    r = lin.residual(state)
    cost = float(r @ r)
    lam = cfg.damping
    normal = _NormalEquations(lin, lin.jacobian(state), r)
    iterations = 0
    converged = False
    while iterations < cfg.max_iters:
        iterations += 1
        delta = normal.solve(lam)
        if not np.all(np.isfinite(delta)):
            raise SingularNormalEquationsError("singular normal equations")
        step_sq = float(delta @ delta)
        new_state = lin.retract(state, delta)
        new_r = lin.residual(new_state)
        new_cost = float(new_r @ new_r)
        if new_cost <= cost:
            state, cost, r = new_state, new_cost, new_r
            lam = max(lam * 0.5, 1e-15)
            if step_sq < cfg.step_sq_tol:
                converged = True
                break
            normal = _NormalEquations(lin, lin.jacobian(state), r)
        else:
            lam *= 4.0
            if step_sq < cfg.step_sq_tol:
                converged = True
                break
            if lam > 1e15:
                break
    return SolveResult(
        state=state, final_cost=cost, iterations=iterations, converged=converged
    )


def recover_translations(g, ordering, rotations):
    """Optimal translations and landmark positions for fixed rotations.

    Solves the weighted-Laplacian normal equations of the translation
    cost with the first vertex (pose 0) pinned at the origin, which fixes
    the translational gauge. Returns (pose translations, landmarks).
    """
    if ordering is None:
        ordering = graphmod.canonical_ordering(g)
    rotations = np.asarray(rotations, dtype=float)
    nv = g.n_vertices
    w = graphmod.edge_weights(g, ordering)
    meas = graphmod.edge_measurements(g, ordering)
    nb = ordering.n_landmark_edges
    tails = np.array(
        [g.landmark_edges[i].pose for i in ordering.landmark_perm]
        + [e.from_pose for e in g.pose_edges],
        dtype=int,
    )
    heads = np.array(
        [g.n_poses + g.landmark_edges[i].landmark for i in ordering.landmark_perm]
        + [e.to_pose for e in g.pose_edges],
        dtype=int,
    )
    U = w[:, None] * np.einsum("eij,ej->ei", rotations[tails], meas)
    F = np.zeros((nv, 3))
    np.add.at(F, heads, U)
    np.subtract.at(F, tails, U)
    V, _ = graphmod.weighted_incidences(g, ordering)
    L = graphmod.laplacian(V)
    Lr = L[1:, :][:, 1:].tocsc()
    M = np.zeros((nv, 3))
    if nv > 1:
        try:
            lu = spla.splu(Lr)
        except RuntimeError as err:
            raise ValueError("graph Laplacian is singular (disconnected)") from err
        M[1:] = lu.solve(F[1:])
        if not np.all(np.isfinite(M)):
            raise ValueError("graph Laplacian is singular (disconnected)")
    return M[: g.n_poses], M[g.n_poses :]


def _tangent_project(rotations, grad):
    """Project a Euclidean gradient onto the tangent space of O(3)^P."""
    RtG = np.einsum("pji,pjk->pik", rotations, grad)
    sym = (RtG + RtG.transpose(0, 2, 1)) / 2.0
    return grad - np.einsum("pij,pjk->pik", rotations, sym)


def _polar_batch(M):
    U, _, Vt = np.linalg.svd(M)
    return U @ Vt


def riemannian_refine(op, rotations, cfg=None, grad_tol=1e-9, cost_trace=None):
    """Projected-gradient descent on the marginalized cost p(R).

    Backtracking line search with a polar retraction; the cost sequence is
    non-increasing (appended to `cost_trace` when given). Returns the
    refined rotation blocks.
    """
    cfg = cfg or SolverConfig()
    R = _polar_batch(np.asarray(rotations, dtype=float).copy())
    Rt = rotation_stack(R)
    QRt = op.apply(Rt)
    cost = float(np.sum(Rt * QRt))
    if cost_trace is not None:
        cost_trace.append(cost)
    alpha = 1.0
    for _ in range(cfg.max_iters):
        grad = 2.0 * QRt.reshape(-1, 3, 3).transpose(0, 2, 1)
        T = _tangent_project(R, grad)
        gnorm_sq = float(np.sum(T * T))
        if np.sqrt(gnorm_sq) < grad_tol:
            break
        alpha = min(alpha * 2.0, 1e8)
        accepted = False
        while alpha > 1e-18:
            R_new = _polar_batch(R - alpha * T)
            Rt_new = rotation_stack(R_new)
            QRt_new = op.apply(Rt_new)
            cost_new = float(np.sum(Rt_new * QRt_new))
            if cost_new <= cost - 1e-4 * alpha * gnorm_sq:
                R, Rt, QRt, cost = R_new, Rt_new, QRt_new, cost_new
                if cost_trace is not None:
                    cost_trace.append(cost)
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
    return R
