"""Command-line interface.

Subcommands: simulate, solve, certify, bench, sweep. Exit codes follow a
stable contract: 0 for success (certify: PASS), 2 for a certificate
FAIL, 1 for any operational error. All randomized commands take --seed.
"""

import argparse
import csv
import math
import sys
import time

import numpy as np

from . import __version__
from . import backend, experiments, formats, graph as graphmod, sim
from .certificate import certify
from .datamatrix import ProblemVariant, build_qbt_operator
from .solver import (
    SolverConfig,
    full_cost,
    gauss_newton,
    recover_translations,
    riemannian_refine,
)

VARIANT_CHOICES = {v.value: v for v in ProblemVariant}


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="generate a synthetic problem")
    p.add_argument("--poses", type=int, default=30)
    p.add_argument("--landmarks", type=int, default=200)
    p.add_argument("--alpha", type=float, default=1.0,
                   help="fraction of candidate pose-landmark edges kept")
    p.add_argument("--loop-closures", type=int, default=1)
    p.add_argument("--trans-noise", type=float, default=0.05, metavar="METERS")
    p.add_argument("--rot-noise-deg", type=float, default=10.0)
    p.add_argument("--sensing-range", type=float, default=4.5,
                   help="visibility radius; 'inf' connects all pairs")
    p.add_argument("--trajectory", choices=["ellipse", "box"], default="ellipse")
    p.add_argument("--box-extent", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="problem file")
    p.add_argument("--gt", help="ground-truth solution file")
    p.set_defaults(func=cmd_simulate)


def cmd_simulate(args):
    traj = (
        sim.EllipseTrajectory()
        if args.trajectory == "ellipse"
        else sim.BoxTrajectory(extent=args.box_extent)
    )
    cfg = sim.SimConfig(
        n_poses=args.poses,
        n_landmarks=args.landmarks,
        trajectory=traj,
        sensing_range=args.sensing_range,
        trans_noise_std=args.trans_noise,
        rot_noise_std=math.radians(args.rot_noise_deg),
        landmark_fraction=args.alpha,
        n_loop_closures=args.loop_closures,
        seed=args.seed,
    )
    g, gt = sim.generate(cfg)
    init = experiments.odometry_state(
        g, gt.state.rotations[0], gt.state.translations[0]
    )
    formats.write_problem(
        args.output, g, init, header=f"slamcert simulate seed={args.seed}"
    )
    if args.gt:
        formats.write_solution(args.gt, gt.state, header="ground truth")
    print(
        f"wrote {args.output}: {g.n_poses} poses, {g.n_landmarks} landmarks, "
        f"{len(g.landmark_edges)} landmark edges, {len(g.pose_edges)} pose edges"
    )
    return 0


def _add_solve(sub):
    p = sub.add_parser("solve", help="solve a problem with Gauss-Newton")
    p.add_argument("problem")
    p.add_argument("--init", default="file", choices=["file", "odometry", "random"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--marginalized", action="store_true",
                   help="refine rotations on the marginalized cost first")
    p.add_argument("--certify", action="store_true")
    p.add_argument("--threshold", type=float, default=-1e-8)
    p.add_argument("--variant", default="slam", choices=sorted(VARIANT_CHOICES))
    p.add_argument("-o", "--output", required=True, help="solution file")
    p.add_argument("--report", help="JSON report file")
    p.set_defaults(func=cmd_solve)


def _base_report(variant, g, seed):
    return {
        "variant": variant.value,
        "n_poses": g.n_poses,
        "n_landmarks": g.n_landmarks,
        "final_cost": None,
        "trace_lambda": None,
        "min_eig": None,
        "corank_estimate": None,
        "pass": None,
        "iterations": None,
        "timings": {"assembly_s": 0.0, "solve_s": 0.0, "certify_s": 0.0},
        "seed": seed,
        "tool_version": __version__,
    }


def cmd_solve(args):
    variant = VARIANT_CHOICES[args.variant]
    g, init = formats.parse_problem(args.problem)
    if args.init == "odometry":
        init = experiments.odometry_state(
            g, init.rotations[0], init.translations[0]
        )
    elif args.init == "random":
        rng = np.random.Generator(np.random.Philox(args.seed))
        lo, hi = experiments.scene_bounds(init)
        if np.allclose(lo, hi):
            lo, hi = lo - 10.0, hi + 10.0
        init = experiments.random_state(g, rng, lo, hi)
    report = _base_report(variant, g, args.seed)
    cfg = SolverConfig(max_iters=args.max_iters)
    op = None
    ordering = graphmod.canonical_ordering(g)
    if args.marginalized or args.certify:
        t0 = time.perf_counter()
        op = build_qbt_operator(g, ordering, variant)
        report["timings"]["assembly_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    if args.marginalized:
        refined = riemannian_refine(op, init.rotations, cfg)
        t, m = recover_translations(g, ordering, refined)
        init.rotations, init.translations, init.landmarks = refined, t, m
    res = gauss_newton(g, init, cfg)
    report["timings"]["solve_s"] = time.perf_counter() - t0
    report["final_cost"] = res.final_cost
    report["iterations"] = res.iterations
    formats.write_solution(args.output, res.state, header="slamcert solve")
    if args.certify:
        t0 = time.perf_counter()
        cert = certify(op, res.state.rotations, threshold=args.threshold)
        report["timings"]["certify_s"] = time.perf_counter() - t0
        report["trace_lambda"] = cert.dual_value
        report["min_eig"] = cert.min_eig
        report["corank_estimate"] = cert.corank_estimate
        report["pass"] = cert.passed
    if args.report:
        formats.write_report(args.report, report)
    print(
        f"solved {args.problem}: cost {res.final_cost:.6e} "
        f"in {res.iterations} iterations (converged={res.converged})"
    )
    return 0


def _add_certify(sub):
    p = sub.add_parser("certify", help="test global optimality of a solution")
    p.add_argument("problem")
    p.add_argument("solution")
    p.add_argument("--threshold", type=float, default=-1e-8)
    p.add_argument("--variant", default="slam", choices=sorted(VARIANT_CHOICES))
    p.add_argument("--report", help="JSON report file")
    p.set_defaults(func=cmd_certify)


def cmd_certify(args):
    variant = VARIANT_CHOICES[args.variant]
    g, _ = formats.parse_problem(args.problem)
    state = formats.parse_solution(args.solution, g.n_poses, g.n_landmarks)
    report = _base_report(variant, g, None)
    ordering = graphmod.canonical_ordering(g)
    t0 = time.perf_counter()
    op = build_qbt_operator(g, ordering, variant)
    report["timings"]["assembly_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    cert = certify(op, state.rotations, threshold=args.threshold)
    report["timings"]["certify_s"] = time.perf_counter() - t0
    report["final_cost"] = full_cost(g, state)
    report["trace_lambda"] = cert.dual_value
    report["min_eig"] = cert.min_eig
    report["corank_estimate"] = cert.corank_estimate
    report["pass"] = cert.passed
    report["iterations"] = cert.lanczos_iters
    if args.report:
        formats.write_report(args.report, report)
    verdict = "PASS" if cert.passed else "FAIL"
    print(
        f"certificate {verdict}: min_eig {cert.min_eig:.3e} "
        f"(scale {cert.scale:.3e}, corank {cert.corank_estimate})"
    )
    return 0 if cert.passed else 2


def _add_bench(sub):
    p = sub.add_parser("bench", help="scaling benchmark of the pipeline")
    p.add_argument("--sweep", choices=["landmarks", "poses"], default="landmarks")
    p.add_argument("--poses", type=int, default=100,
                   help="fixed pose count for a landmark sweep")
    p.add_argument("--landmarks", type=int, default=100,
                   help="fixed landmark count for a pose sweep")
    p.add_argument("--min", type=int, default=100)
    p.add_argument("--max", type=int, default=5000)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--refine-iters", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="CSV file")
    p.set_defaults(func=cmd_bench)


def cmd_bench(args):
    sizes = np.unique(
        np.round(np.geomspace(args.min, args.max, args.steps)).astype(int)
    )
    fixed = args.poses if args.sweep == "landmarks" else args.landmarks
    # warm up jitted kernels so the first timed point is not compiling
    experiments.run_bench_point(5, 10, args.seed, refine_iters=2, repeats=1)
    rows = experiments.run_bench_sweep(
        args.sweep, sizes, fixed, args.seed, refine_iters=args.refine_iters
    )
    with open(args.output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["size", "assembly_s", "solve_s", "certify_s", "pass"])
        for size, row in zip(sizes, rows):
            writer.writerow(
                [size, row["assembly_s"], row["solve_s"], row["certify_s"],
                 int(row["pass"])]
            )
    print(f"wrote {args.output} ({len(rows)} sizes, sweep={args.sweep})")
    return 0


def _parse_list(text, cast):
    return [cast(tok) for tok in text.split(",") if tok]


def _add_sweep(sub):
    p = sub.add_parser(
        "sweep", help="noise sweep with certificate pass-rate and corank stats"
    )
    p.add_argument("--poses", type=int, default=20)
    p.add_argument("--landmarks", default="50")
    p.add_argument("--alpha", default="0.5")
    p.add_argument("--loop-closures", default="1")
    p.add_argument("--noise-scales", default="0.25,0.5,1,2,4,8,16,32")
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--starts", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="CSV file")
    p.set_defaults(func=cmd_sweep)


def cmd_sweep(args):
    cells = []
    idx = 0
    for n_lm in _parse_list(args.landmarks, int):
        for alpha in _parse_list(args.alpha, float):
            for closures in _parse_list(args.loop_closures, int):
                for scale in _parse_list(args.noise_scales, float):
                    cells.append(
                        experiments.SweepCell(
                            n_poses=args.poses,
                            n_landmarks=n_lm,
                            alpha=alpha,
                            loop_closures=closures,
                            noise_scale=scale,
                            trials=args.trials,
                            starts=args.starts,
                            seed=args.seed + 104729 * idx,
                        )
                    )
                    idx += 1
    rows = experiments.pool_map(experiments.run_sweep_cell, cells)
    fields = [
        "n_poses", "n_landmarks", "alpha", "loop_closures", "noise_scale",
        "trials", "starts", "pass_rate", "corank_mean", "corank_max",
        "mean_best_cost", "mean_min_eig",
    ]
    with open(args.output, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {args.output} ({len(rows)} cells)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="slamcert",
        description="Landmark-based SLAM with a global-optimality certificate",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_simulate(sub)
    _add_solve(sub)
    _add_certify(sub)
    _add_bench(sub)
    _add_sweep(sub)
    return parser


def main(argv=None):
    backend.limit_blas_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help/--version, 2 for usage errors; fold
        # usage errors into the operational-error code
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
