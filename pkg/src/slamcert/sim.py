"""Seeded synthetic landmark-SLAM instances.

Two scene presets: poses on an ellipse with landmarks scattered around
the trajectory and range-limited visibility (the simulated-benchmark
protocol), and random waypoints in a box with all-pairs visibility
(the noise-robustness study protocol). Measurements are generated from
ground truth and corrupted with isotropic Gaussian noise: additive for
translations, through the exponential map for rotations.

The RNG is numpy's counter-based Philox generator, so streams are
reproducible across platforms for a given 64-bit seed.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import so3
from .graph import MeasurementGraph, PoseLandmarkEdge, PosePoseEdge
from .solver import SlamState

# Baseline noise levels of the noise-robustness protocol; the sweep
# scales these to find where the certificate starts failing.
NDB_BASELINE_TRANS_STD = 0.866  # meters
NDB_BASELINE_ROT_STD = math.radians(0.573)


@dataclass(frozen=True)
class EllipseTrajectory:
    """Closed elliptical path in the z=0 plane (full axis lengths)."""

    major: float = 15.0
    minor: float = 10.0


@dataclass(frozen=True)
class BoxTrajectory:
    """Random waypoints inside [0, extent]^3."""

    extent: float = 50.0


@dataclass
class SimConfig:
    n_poses: int = 30
    n_landmarks: int = 200
    trajectory: object = field(default_factory=EllipseTrajectory)
    sensing_range: float = 4.5  # np.inf connects every pose to every landmark
    trans_noise_std: float = 0.05  # meters
    rot_noise_std: float = math.radians(10.0)
    landmark_fraction: float = 1.0  # fraction of candidate edges kept
    n_loop_closures: int = 1  # total closures; the first is the ring edge
    seed: int = 0
    inverse_variance_weights: bool = False

    def validate(self):
        if not (0 < self.landmark_fraction <= 1):
            raise ValueError("landmark_fraction must be in (0, 1]")
        if self.trans_noise_std < 0 or self.rot_noise_std < 0:
            raise ValueError("noise std must be non-negative")
        if self.n_poses < 2:
            raise ValueError("need at least two poses")


@dataclass
class GroundTruth:
    state: SlamState


def corrupt_rotation(R, std, rng):
    """Left-multiply by the exponential of a Gaussian tangent vector."""
    phi = std * rng.standard_normal(3)
    return so3.exp(phi) @ R


def corrupt_translation(t, std, rng):
    return np.asarray(t, dtype=float) + std * rng.standard_normal(3)


def _frame_from_heading(x_dir, up=np.array([0.0, 0.0, 1.0])):
    """Rotation with x along `x_dir` and z as close to `up` as possible."""
    x = x_dir / np.linalg.norm(x_dir)
    z = up - (up @ x) * x
    nz = np.linalg.norm(z)
    if nz < 1e-9:
        alt = np.array([1.0, 0.0, 0.0])
        z = alt - (alt @ x) * x
        nz = np.linalg.norm(z)
    z = z / nz
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def _place_poses(cfg, rng):
    traj = cfg.trajectory
    n = cfg.n_poses
    if isinstance(traj, EllipseTrajectory):
        a, b = traj.major / 2.0, traj.minor / 2.0
        th = 2 * np.pi * np.arange(n) / n
        pos = np.column_stack([a * np.cos(th), b * np.sin(th), np.zeros(n)])
        rot = np.stack(
            [
                _frame_from_heading(np.array([-a * np.sin(t), b * np.cos(t), 0.0]))
                for t in th
            ]
        )
        return pos, rot
    if isinstance(traj, BoxTrajectory):
        pos = traj.extent * rng.random((n, 3))
        rot = np.empty((n, 3, 3))
        for i in range(n):
            nxt = pos[(i + 1) % n]
            d = nxt - pos[i]
            if np.linalg.norm(d) < 1e-9:
                d = np.array([1.0, 0.0, 0.0])
            rot[i] = _frame_from_heading(d)
        return pos, rot
    raise ValueError(f"unknown trajectory preset: {traj!r}")


def _landmark_region(cfg, pose_pos):
    traj = cfg.trajectory
    if isinstance(traj, BoxTrajectory):
        lo = np.zeros(3)
        hi = np.full(3, traj.extent)
        return lo, hi
    pad = cfg.sensing_range if np.isfinite(cfg.sensing_range) else 1.0
    lo = pose_pos.min(axis=0) - pad
    hi = pose_pos.max(axis=0) + pad
    zext = min(1.0, pad / 2.0)
    lo[2], hi[2] = -zext, zext
    return lo, hi


def _place_landmarks(cfg, pose_pos, rng):
    lo, hi = _landmark_region(cfg, pose_pos)
    pts = np.empty((cfg.n_landmarks, 3))
    for j in range(cfg.n_landmarks):
        placed = False
        for _ in range(1000):
            p = lo + (hi - lo) * rng.random(3)
            if not np.isfinite(cfg.sensing_range):
                placed = True
            else:
                d = np.linalg.norm(pose_pos - p, axis=1)
                placed = bool(d.min() <= cfg.sensing_range)
            if placed:
                pts[j] = p
                break
        if not placed:
            # fall back to a point guaranteed visible from a random pose
            i = int(rng.integers(cfg.n_poses))
            off = rng.standard_normal(3)
            off *= 0.5 * cfg.sensing_range / max(np.linalg.norm(off), 1e-12)
            pts[j] = pose_pos[i] + off
    return pts


def _pose_edge_pairs(cfg, rng):
    """Chained pairs plus loop closures (ring first, then random)."""
    n = cfg.n_poses
    pairs = [(i, i + 1) for i in range(n - 1)]
    n_closures = cfg.n_loop_closures
    if n_closures >= 1:
        pairs.append((n - 1, 0))
    if n_closures > 1:
        chain = {(i, i + 1) for i in range(n - 1)}
        candidates = [
            (i, k)
            for i in range(n)
            for k in range(i + 1, n)
            if (i, k) not in chain and (i, k) != (0, n - 1)
        ]
        m = min(n_closures - 1, len(candidates))
        chosen = rng.choice(len(candidates), size=m, replace=False)
        pairs.extend(candidates[int(c)] for c in sorted(chosen))
    return pairs


def generate(cfg):
    """Build a seeded (MeasurementGraph, GroundTruth) pair.

    Retries landmark placement a few times if the resulting graph fails
    validation (every landmark must be observed at least once and the
    graph must be connected).
    """
    cfg.validate()
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    last_err = None
    for _ in range(10):
        try:
            return _generate_once(cfg, rng)
        except ValueError as err:
            last_err = err
    raise ValueError(f"could not generate a valid instance: {last_err}")


def _generate_once(cfg, rng):
    pose_pos, pose_rot = _place_poses(cfg, rng)
    lm_pos = _place_landmarks(cfg, pose_pos, rng)

    # candidate pose->landmark edges within sensing range
    candidates = []
    for j in range(cfg.n_landmarks):
        d = np.linalg.norm(pose_pos - lm_pos[j], axis=1)
        for i in np.flatnonzero(d <= cfg.sensing_range):
            candidates.append((int(i), j))
    alpha = cfg.landmark_fraction
    if alpha < 1.0 and candidates:
        m = max(1, int(round(alpha * len(candidates))))
        keep_idx = rng.choice(len(candidates), size=m, replace=False)
        kept = [candidates[int(i)] for i in sorted(keep_idx)]
        seen = {j for _, j in kept}
        for j in range(cfg.n_landmarks):
            if j not in seen:
                # restore one observation so the landmark stays estimable
                cand_j = [c for c in candidates if c[1] == j]
                if cand_j:
                    kept.append(cand_j[int(rng.integers(len(cand_j)))])
        kept.sort(key=lambda c: (c[1], c[0]))
        candidates = kept

    w_b = 1.0
    w_t = 1.0
    w_r = 1.0
    if cfg.inverse_variance_weights:
        if cfg.trans_noise_std > 0:
            w_b = w_t = 1.0 / cfg.trans_noise_std**2
        if cfg.rot_noise_std > 0:
            w_r = 1.0 / cfg.rot_noise_std**2

    lm_edges = []
    for i, j in candidates:
        y = pose_rot[i].T @ (lm_pos[j] - pose_pos[i])
        y = corrupt_translation(y, cfg.trans_noise_std, rng)
        lm_edges.append(PoseLandmarkEdge(pose=i, landmark=j, meas=y, w=w_b))

    pose_edges = []
    for i, k in _pose_edge_pairs(cfg, rng):
        R_rel = pose_rot[i].T @ pose_rot[k]
        R_rel = corrupt_rotation(R_rel, cfg.rot_noise_std, rng)
        t_rel = pose_rot[i].T @ (pose_pos[k] - pose_pos[i])
        t_rel = corrupt_translation(t_rel, cfg.trans_noise_std, rng)
        pose_edges.append(
            PosePoseEdge(
                from_pose=i,
                to_pose=k,
                rel_rotation=R_rel,
                rel_translation=t_rel,
                w_r=w_r,
                w_t=w_t,
            )
        )

    g = MeasurementGraph(cfg.n_poses, cfg.n_landmarks, lm_edges, pose_edges)
    gt = GroundTruth(
        state=SlamState(
            rotations=pose_rot, translations=pose_pos, landmarks=lm_pos
        )
    )
    return g, gt
