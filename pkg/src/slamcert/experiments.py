"""Experiment orchestration: initialization strategies, multistart
solves, certificate sweeps, and scaling benchmarks.

Cells of sweeps and benchmarks are independent tasks executed in a
process pool; the pool size is capped by the SLAMCERT_THREADS
environment variable. Every randomized routine takes an explicit seed.
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import backend, graph as graphmod
from . import sim, so3
from .certificate import certify
from .datamatrix import ProblemVariant, build_qbt_operator
from .solver import SlamState, SolverConfig, gauss_newton, riemannian_refine

GLOBAL_COST_RTOL = 1e-6  # solutions within this of the best are "global"


def pool_size(n_items):
    env = os.environ.get("SLAMCERT_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_items, os.cpu_count() or 1))


def _worker_init():
    backend.limit_blas_threads()


def pool_map(fn, items):
    items = list(items)
    size = pool_size(len(items))
    if size <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=size, initializer=_worker_init) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# Initialization strategies
# ---------------------------------------------------------------------------


def scene_bounds(state, pad=1.0):
    pts = np.vstack([state.translations, state.landmarks.reshape(-1, 3)])
    return pts.min(axis=0) - pad, pts.max(axis=0) + pad


def random_state(g, rng, lo, hi):
    """Uniform random rotations; positions uniform in the given box."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    rot = np.stack([so3.random_rotation(rng) for _ in range(g.n_poses)])
    t = lo + (hi - lo) * rng.random((g.n_poses, 3))
    m = lo + (hi - lo) * rng.random((g.n_landmarks, 3))
    return SlamState(rot, t, m.reshape(g.n_landmarks, 3))


def back_project_landmarks(g, rotations, translations):
    """Landmark guesses from the first observation of each landmark."""
    m = np.zeros((g.n_landmarks, 3))
    seen = np.zeros(g.n_landmarks, dtype=bool)
    for e in g.landmark_edges:
        if not seen[e.landmark]:
            seen[e.landmark] = True
            m[e.landmark] = translations[e.pose] + rotations[e.pose] @ np.asarray(
                e.meas, dtype=float
            )
    return m


def odometry_state(g, anchor_rotation=None, anchor_translation=None):
    """Chain relative pose measurements along the pose index sequence;
    landmarks are back-projected from their first observation."""
    R = np.tile(np.eye(3), (g.n_poses, 1, 1))
    t = np.zeros((g.n_poses, 3))
    if anchor_rotation is not None:
        R[0] = anchor_rotation
    if anchor_translation is not None:
        t[0] = anchor_translation
    chain = {}
    for e in g.pose_edges:
        if e.to_pose == e.from_pose + 1 and e.from_pose not in chain:
            chain[e.from_pose] = e
    for i in range(g.n_poses - 1):
        e = chain.get(i)
        if e is None:
            R[i + 1] = R[i]
            t[i + 1] = t[i]
        else:
            R[i + 1] = R[i] @ np.asarray(e.rel_rotation, dtype=float)
            t[i + 1] = t[i] + R[i] @ np.asarray(e.rel_translation, dtype=float)
    m = back_project_landmarks(g, R, t)
    return SlamState(R, t, m)


# ---------------------------------------------------------------------------
# Multistart solves
# ---------------------------------------------------------------------------


@dataclass
class MultistartOutcome:
    label: str
    cost: float
    iterations: int
    converged: bool
    state: SlamState
    certificate: object = None


def multistart(g, starts, cfg=None):
    """Run Gauss-Newton from each (label, state) pair."""
    cfg = cfg or SolverConfig()
    out = []
    for label, init in starts:
        res = gauss_newton(g, init, cfg)
        out.append(
            MultistartOutcome(
                label=label,
                cost=res.final_cost,
                iterations=res.iterations,
                converged=res.converged,
                state=res.state,
            )
        )
    return out


def label_global(outcomes, rtol=GLOBAL_COST_RTOL):
    """Mark outcomes whose cost is within rtol of the best cost found."""
    best = min(o.cost for o in outcomes)
    return [o.cost <= best + rtol * max(1.0, best) for o in outcomes]


# ---------------------------------------------------------------------------
# Certified multistart trial (one simulated instance)
# ---------------------------------------------------------------------------


@dataclass
class TrialResult:
    costs: list
    labels: list  # start labels
    is_global: list
    cert_pass: list
    min_eigs: list
    coranks: list
    best_cost: float


def run_certified_trial(
    cfg,
    n_random_starts=10,
    include_gt=True,
    include_odometry=False,
    solver_cfg=None,
    variant=ProblemVariant.LANDMARK_SLAM,
    start_seed=None,
):
    """Generate an instance, solve from several starts, certify each
    converged solution against the marginalized data matrix."""
    g, gt = sim.generate(cfg)
    ordering = graphmod.canonical_ordering(g)
    op = build_qbt_operator(g, ordering, variant)
    rng = np.random.Generator(
        np.random.Philox(cfg.seed if start_seed is None else start_seed)
    )
    lo, hi = scene_bounds(gt.state)
    starts = []
    if include_gt:
        starts.append(("gt", gt.state.copy()))
    if include_odometry:
        starts.append(
            ("odometry", odometry_state(g, gt.state.rotations[0],
                                        gt.state.translations[0]))
        )
    for s in range(n_random_starts):
        starts.append((f"random{s}", random_state(g, rng, lo, hi)))
    outcomes = multistart(g, starts, solver_cfg)
    for o in outcomes:
        o.certificate = certify(op, o.state.rotations)
    flags = label_global(outcomes)
    return TrialResult(
        costs=[o.cost for o in outcomes],
        labels=[o.label for o in outcomes],
        is_global=flags,
        cert_pass=[o.certificate.passed for o in outcomes],
        min_eigs=[o.certificate.min_eig for o in outcomes],
        coranks=[o.certificate.corank_estimate for o in outcomes],
        best_cost=min(o.cost for o in outcomes),
    )


# ---------------------------------------------------------------------------
# Noise-robustness sweep (certificate-based proxy for the duality bound)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    n_poses: int
    n_landmarks: int
    alpha: float
    loop_closures: int
    noise_scale: float
    trials: int
    starts: int
    seed: int


def run_sweep_cell(cell):
    """One sweep cell: several seeded trials at a fixed noise scale.

    A trial passes when the certificate accepts the best multistart
    solution; the corank of the certificate matrix at that solution is
    recorded as the strong-duality indicator."""
    passes = []
    coranks = []
    best_costs = []
    min_eigs = []
    for t in range(cell.trials):
        cfg = sim.SimConfig(
            n_poses=cell.n_poses,
            n_landmarks=cell.n_landmarks,
            trajectory=sim.BoxTrajectory(),
            sensing_range=np.inf,
            trans_noise_std=cell.noise_scale * sim.NDB_BASELINE_TRANS_STD,
            rot_noise_std=cell.noise_scale * sim.NDB_BASELINE_ROT_STD,
            landmark_fraction=cell.alpha,
            n_loop_closures=cell.loop_closures,
            seed=cell.seed + 7919 * t,
        )
        res = run_certified_trial(
            cfg,
            n_random_starts=max(0, cell.starts - 2),
            include_gt=True,
            include_odometry=True,
        )
        best = int(np.argmin(res.costs))
        passes.append(res.cert_pass[best])
        coranks.append(res.coranks[best])
        min_eigs.append(res.min_eigs[best])
        best_costs.append(res.best_cost)
    return {
        "n_poses": cell.n_poses,
        "n_landmarks": cell.n_landmarks,
        "alpha": cell.alpha,
        "loop_closures": cell.loop_closures,
        "noise_scale": cell.noise_scale,
        "trials": cell.trials,
        "starts": cell.starts,
        "pass_rate": float(np.mean(passes)),
        "corank_mean": float(np.mean(coranks)),
        "corank_max": int(np.max(coranks)),
        "mean_best_cost": float(np.mean(best_costs)),
        "mean_min_eig": float(np.mean(min_eigs)),
    }


def smooth3(values):
    """3-point moving average with clamped ends."""
    v = np.asarray(values, dtype=float)
    if len(v) < 3:
        return v.copy()
    out = v.copy()
    out[1:-1] = (v[:-2] + v[1:-1] + v[2:]) / 3.0
    out[0] = (v[0] + v[1]) / 2.0
    out[-1] = (v[-2] + v[-1]) / 2.0
    return out


def failure_onset_scale(scales, pass_rates):
    """Smallest scale at which the smoothed pass rate drops below 1."""
    sm = smooth3(pass_rates)
    for s, p in zip(scales, sm):
        if p < 1.0 - 1e-12:
            return s
    return float("inf")


# ---------------------------------------------------------------------------
# Scaling benchmark
# ---------------------------------------------------------------------------


def bench_instance(n_poses, n_landmarks, seed):
    """A simulated-benchmark style instance sized for timing runs."""
    cfg = sim.SimConfig(
        n_poses=n_poses,
        n_landmarks=n_landmarks,
        trajectory=sim.EllipseTrajectory(),
        seed=seed,
    )
    return sim.generate(cfg)


def run_bench_point(n_poses, n_landmarks, seed, refine_iters=20, repeats=3):
    """Time operator assembly, rotation refinement, and certification.

    Assembly is timed over `repeats` runs (minimum taken) since small
    sizes are fast enough to be noisy.
    """
    g, gt = bench_instance(n_poses, n_landmarks, seed)
    ordering = graphmod.canonical_ordering(g)
    t_asm = np.inf
    op = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        op = build_qbt_operator(g, ordering)
        t_asm = min(t_asm, time.perf_counter() - t0)
    init = odometry_state(g, gt.state.rotations[0], gt.state.translations[0])
    t0 = time.perf_counter()
    refined = riemannian_refine(
        op, init.rotations, SolverConfig(max_iters=refine_iters)
    )
    t_solve = time.perf_counter() - t0
    t_cert = np.inf
    report = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        report = certify(op, refined)
        t_cert = min(t_cert, time.perf_counter() - t0)
    return {
        "n_poses": n_poses,
        "n_landmarks": n_landmarks,
        "assembly_s": t_asm,
        "solve_s": t_solve,
        "certify_s": t_cert,
        "pass": report.passed,
    }


def _bench_worker(args):
    return run_bench_point(*args)


def run_bench_sweep(axis, sizes, fixed, seed, refine_iters=20):
    """Bench across `sizes` of one axis ("landmarks" or "poses")."""
    items = []
    for idx, s in enumerate(sizes):
        if axis == "landmarks":
            items.append((fixed, int(s), seed + idx, refine_iters))
        else:
            items.append((int(s), fixed, seed + idx, refine_iters))
    return pool_map(_bench_worker, items)


def loglog_slope(x, y):
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.maximum(np.asarray(y, dtype=float), 1e-12))
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(coef[0])
