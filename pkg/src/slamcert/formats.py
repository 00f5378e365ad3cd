"""Line-oriented problem/solution files and JSON reports.

Record types (whitespace separated, `#` starts a comment):

    VERTEX_SE3:QUAT id tx ty tz qx qy qz qw      pose (initial guess)
    VERTEX_XYZ id mx my mz                       landmark (initial guess)
    EDGE_SE3:QUAT i k tx ty tz qx qy qz qw w_r w_t
    EDGE_LM i j yx yy yz w_b

Pose ids and landmark ids are independent namespaces; both are remapped
to contiguous 0-based indices on read (sorted by file id). Vertices
referenced only by edges are auto-created with identity/zero initial
guesses. Quaternions are Hamilton, scalar-last (qx, qy, qz, qw), and are
normalized on read. Floats are written with round-trip precision.
"""

import json

import numpy as np

from . import so3
from .graph import MeasurementGraph, PoseLandmarkEdge, PosePoseEdge
from .solver import SlamState

REPORT_SCHEMA_VERSION = 1


def _fmt(x):
    return repr(float(x))


def _parse_floats(parts, expected, path, lineno):
    if len(parts) != expected:
        raise ValueError(
            f"{path}:{lineno}: expected {expected} numeric fields, got {len(parts)}"
        )
    try:
        return [float(p) for p in parts]
    except ValueError as err:
        raise ValueError(f"{path}:{lineno}: bad numeric field ({err})") from err


def _read_quat(vals, path, lineno):
    q = np.array(vals, dtype=float)
    n = np.linalg.norm(q)
    if n <= 0:
        raise ValueError(f"{path}:{lineno}: zero quaternion")
    return q / n


def parse_problem(path):
    """Read a problem file; returns (MeasurementGraph, initial SlamState)."""
    pose_guess = {}
    lm_guess = {}
    lm_records = []  # (pose_id, lm_id, meas, w)
    pp_records = []  # (i, k, t, R, w_r, w_t)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "VERTEX_SE3:QUAT":
                vals = _parse_floats(parts[1:], 8, path, lineno)
                pid = int(vals[0])
                q = _read_quat(vals[4:8], path, lineno)
                pose_guess[pid] = (so3.quat_to_matrix(q), np.array(vals[1:4]))
            elif tag == "VERTEX_XYZ":
                vals = _parse_floats(parts[1:], 4, path, lineno)
                lm_guess[int(vals[0])] = np.array(vals[1:4])
            elif tag == "EDGE_SE3:QUAT":
                vals = _parse_floats(parts[1:], 11, path, lineno)
                i, k = int(vals[0]), int(vals[1])
                q = _read_quat(vals[5:9], path, lineno)
                pp_records.append(
                    (i, k, np.array(vals[2:5]), so3.quat_to_matrix(q),
                     vals[9], vals[10])
                )
            elif tag == "EDGE_LM":
                vals = _parse_floats(parts[1:], 6, path, lineno)
                lm_records.append(
                    (int(vals[0]), int(vals[1]), np.array(vals[2:5]), vals[5])
                )
            else:
                raise ValueError(f"{path}:{lineno}: unknown record type {tag!r}")
    pose_ids = set(pose_guess)
    lm_ids = set(lm_guess)
    for i, k, *_ in pp_records:
        pose_ids.update((i, k))
    for i, j, *_ in lm_records:
        pose_ids.add(i)
        lm_ids.add(j)
    pose_map = {pid: n for n, pid in enumerate(sorted(pose_ids))}
    lm_map = {lid: n for n, lid in enumerate(sorted(lm_ids))}
    n_poses, n_lms = len(pose_map), len(lm_map)
    rotations = np.tile(np.eye(3), (n_poses, 1, 1))
    translations = np.zeros((n_poses, 3))
    landmarks = np.zeros((n_lms, 3))
    for pid, (R, t) in pose_guess.items():
        rotations[pose_map[pid]] = R
        translations[pose_map[pid]] = t
    for lid, m in lm_guess.items():
        landmarks[lm_map[lid]] = m
    lm_edges = [
        PoseLandmarkEdge(pose=pose_map[i], landmark=lm_map[j], meas=y, w=w)
        for i, j, y, w in lm_records
    ]
    pp_edges = [
        PosePoseEdge(
            from_pose=pose_map[i], to_pose=pose_map[k],
            rel_rotation=R, rel_translation=t, w_r=wr, w_t=wt,
        )
        for i, k, t, R, wr, wt in pp_records
    ]
    g = MeasurementGraph(n_poses, n_lms, lm_edges, pp_edges)
    init = SlamState(rotations, translations, landmarks)
    return g, init


def _vertex_lines(state):
    lines = []
    for i in range(state.n_poses):
        q = so3.matrix_to_quat(state.rotations[i])
        t = state.translations[i]
        lines.append(
            "VERTEX_SE3:QUAT "
            + " ".join([str(i)] + [_fmt(v) for v in t] + [_fmt(v) for v in q])
        )
    for j in range(state.n_landmarks):
        lines.append(
            "VERTEX_XYZ " + " ".join([str(j)] + [_fmt(v) for v in state.landmarks[j]])
        )
    return lines


def write_problem(path, g, init_state, header=None):
    lines = [f"# {header}"] if header else []
    lines += _vertex_lines(init_state)
    for e in g.pose_edges:
        q = so3.matrix_to_quat(e.rel_rotation)
        lines.append(
            "EDGE_SE3:QUAT "
            + " ".join(
                [str(e.from_pose), str(e.to_pose)]
                + [_fmt(v) for v in e.rel_translation]
                + [_fmt(v) for v in q]
                + [_fmt(e.w_r), _fmt(e.w_t)]
            )
        )
    for e in g.landmark_edges:
        lines.append(
            "EDGE_LM "
            + " ".join(
                [str(e.pose), str(e.landmark)]
                + [_fmt(v) for v in e.meas]
                + [_fmt(e.w)]
            )
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_solution(path, state, header=None):
    lines = [f"# {header}"] if header else []
    lines += _vertex_lines(state)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_solution(path, n_poses, n_landmarks):
    """Read a solution file; every vertex must appear exactly once."""
    rotations = np.tile(np.eye(3), (n_poses, 1, 1))
    translations = np.zeros((n_poses, 3))
    landmarks = np.zeros((n_landmarks, 3))
    seen_p = np.zeros(n_poses, dtype=bool)
    seen_l = np.zeros(n_landmarks, dtype=bool)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "VERTEX_SE3:QUAT":
                vals = _parse_floats(parts[1:], 8, path, lineno)
                i = int(vals[0])
                if not (0 <= i < n_poses):
                    raise ValueError(f"{path}:{lineno}: pose id {i} out of range")
                if seen_p[i]:
                    raise ValueError(f"{path}:{lineno}: duplicate pose {i}")
                seen_p[i] = True
                q = _read_quat(vals[4:8], path, lineno)
                rotations[i] = so3.quat_to_matrix(q)
                translations[i] = vals[1:4]
            elif tag == "VERTEX_XYZ":
                vals = _parse_floats(parts[1:], 4, path, lineno)
                j = int(vals[0])
                if not (0 <= j < n_landmarks):
                    raise ValueError(f"{path}:{lineno}: landmark id {j} out of range")
                if seen_l[j]:
                    raise ValueError(f"{path}:{lineno}: duplicate landmark {j}")
                seen_l[j] = True
                landmarks[j] = vals[1:4]
            else:
                raise ValueError(f"{path}:{lineno}: unknown record type {tag!r}")
    if not seen_p.all() or not seen_l.all():
        raise ValueError(f"{path}: solution is missing vertices")
    return SlamState(rotations, translations, landmarks)


def write_report(path, report):
    payload = dict(report)
    payload.setdefault("schema_version", REPORT_SCHEMA_VERSION)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
