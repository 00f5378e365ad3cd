import numpy as np
import pytest

from slamcert import graph as G
from slamcert import sim, so3
from slamcert.datamatrix import build_qbt_operator, evaluate_marginal_cost
from slamcert.graph import MeasurementGraph, PoseLandmarkEdge
from slamcert.solver import (
    SingularNormalEquationsError,
    SlamState,
    SolverConfig,
    _Linearizer,
    full_cost,
    gauss_newton,
    recover_translations,
    riemannian_refine,
)

from helpers import (
    make_random_graph,
    random_orthogonal_stack,
    rigid_transform_state,
    rotation_cost_oracle,
    translation_cost_oracle,
)


def _zero_noise_instance(seed=4, n_poses=8, n_landmarks=14):
    cfg = sim.SimConfig(
        n_poses=n_poses, n_landmarks=n_landmarks,
        trajectory=sim.EllipseTrajectory(9, 6),
        trans_noise_std=0.0, rot_noise_std=0.0, seed=seed,
    )
    return sim.generate(cfg)


def _noisy_instance(seed=4, n_poses=8, n_landmarks=14):
    cfg = sim.SimConfig(
        n_poses=n_poses, n_landmarks=n_landmarks,
        trajectory=sim.EllipseTrajectory(9, 6),
        trans_noise_std=0.05, rot_noise_std=np.radians(8), seed=seed,
    )
    return sim.generate(cfg)


def _random_state_like(g, gt_state, rng, rot_scale=0.3, pos_scale=1.0):
    st = gt_state.copy()
    for i in range(g.n_poses):
        st.rotations[i] = st.rotations[i] @ so3.exp(rot_scale * rng.normal(size=3))
    st.translations += pos_scale * rng.normal(size=st.translations.shape)
    st.landmarks += pos_scale * rng.normal(size=st.landmarks.shape)
    return st


class TestFullCost:
    def test_zero_noise_at_ground_truth(self):
        g, gt = _zero_noise_instance()
        assert full_cost(g, gt.state) < 1e-20

    def test_single_landmark_residual_identity(self):
        y = np.array([0.3, -0.2, 1.1])
        g = MeasurementGraph(
            1, 1, [PoseLandmarkEdge(pose=0, landmark=0, meas=y, w=2.0)], []
        )
        st = SlamState(np.eye(3)[None], np.zeros((1, 3)), y[None])
        assert full_cost(g, st) == 0.0

    def test_matches_cost_oracles(self, rng):
        g, gt = _noisy_instance()
        st = _random_state_like(g, gt.state, rng)
        expected = rotation_cost_oracle(g, st.rotations) + translation_cost_oracle(
            g, st.rotations, st.translations, st.landmarks
        )
        assert abs(full_cost(g, st) - expected) <= 1e-9 * max(1.0, expected)

    def test_gauge_invariance(self, rng):
        g, gt = _noisy_instance(seed=6)
        st = _random_state_like(g, gt.state, rng)
        c0 = full_cost(g, st)
        moved = rigid_transform_state(st, so3.random_rotation(rng), rng.normal(size=3))
        assert abs(full_cost(g, moved) - c0) <= 1e-9 * max(1.0, c0)

    def test_decomposes_into_marginal_cost(self, rng):
        g, _ = _noisy_instance(seed=12)
        ordering = G.canonical_ordering(g)
        op = build_qbt_operator(g, ordering)
        R = random_orthogonal_stack(rng, g.n_poses)
        t, m = recover_translations(g, ordering, R)
        st = SlamState(R, t, m)
        p = evaluate_marginal_cost(op, R)
        assert abs(full_cost(g, st) - p) <= 1e-8 * max(1.0, p)


class TestJacobian:
    def test_matches_central_differences(self, rng):
        g = make_random_graph(rng, n_poses=4, n_landmarks=3, extra_pose_edges=1)
        lin = _Linearizer(g, gauge_lock=0)
        st = SlamState(
            random_orthogonal_stack(rng, g.n_poses),
            rng.normal(size=(g.n_poses, 3)),
            rng.normal(size=(g.n_landmarks, 3)),
        )
        J = lin.jacobian(st).toarray()
        h = 1e-6
        for c in range(lin.n_vars):
            e = np.zeros(lin.n_vars)
            e[c] = h
            rp = lin.residual(lin.retract(st, e))
            rm = lin.residual(lin.retract(st, -e))
            fd = (rp - rm) / (2 * h)
            err = np.abs(J[:, c] - fd).max()
            assert err <= 1e-5 * max(1.0, np.abs(fd).max())


class TestGaussNewton:
    def test_zero_noise_from_ground_truth(self):
        g, gt = _zero_noise_instance()
        res = gauss_newton(g, gt.state, SolverConfig())
        assert res.converged
        assert res.iterations <= 2
        assert res.final_cost <= 1e-16

    def test_noisy_from_ground_truth_certifies(self):
        g, gt = _noisy_instance(seed=21)
        op = build_qbt_operator(g)
        res = gauss_newton(g, gt.state, SolverConfig())
        assert res.converged
        from slamcert.certificate import certify

        assert certify(op, res.state.rotations).passed

    def test_multistart_finds_distinct_minima(self, rng):
        cfg = sim.SimConfig(seed=31)  # paper-scale defaults
        g, gt = sim.generate(cfg)
        from slamcert.experiments import random_state, scene_bounds

        lo, hi = scene_bounds(gt.state)
        costs = []
        for _ in range(6):
            init = random_state(g, rng, lo, hi)
            costs.append(gauss_newton(g, init).final_cost)
        best = min(costs)
        distinct = {round(c / max(best, 1e-12), 3) for c in costs}
        assert len(distinct) >= 2  # local minima exist alongside the global one

    def test_deterministic(self, rng):
        g, gt = _noisy_instance(seed=8)
        init = _random_state_like(g, gt.state, rng)
        r1 = gauss_newton(g, init, SolverConfig())
        r2 = gauss_newton(g, init, SolverConfig())
        assert r1.final_cost == r2.final_cost
        assert np.array_equal(r1.state.rotations, r2.state.rotations)
        assert np.array_equal(r1.state.translations, r2.state.translations)
        assert np.array_equal(r1.state.landmarks, r2.state.landmarks)

    def test_gauge_pose_stays_fixed(self, rng):
        g, gt = _noisy_instance(seed=14)
        init = _random_state_like(g, gt.state, rng, rot_scale=0.1, pos_scale=0.3)
        res = gauss_newton(g, init, SolverConfig(gauge_lock=0))
        assert np.array_equal(res.state.rotations[0], init.rotations[0])
        assert np.array_equal(res.state.translations[0], init.translations[0])

    def test_cost_not_above_initial(self, rng):
        g, gt = _noisy_instance(seed=15)
        init = _random_state_like(g, gt.state, rng)
        res = gauss_newton(g, init, SolverConfig(max_iters=30))
        assert res.final_cost <= full_cost(g, init)

    def test_bad_gauge_pose_rejected(self):
        g, gt = _zero_noise_instance()
        with pytest.raises(ValueError, match="gauge_lock"):
            gauss_newton(g, gt.state, SolverConfig(gauge_lock=99))

    def test_underconstrained_without_damping(self):
        # two poses see one landmark, no pose-pose edges: pose 1 has a
        # 3-parameter family of optima, so undamped normal equations are
        # singular
        g = MeasurementGraph(
            2, 1,
            [
                PoseLandmarkEdge(pose=0, landmark=0, meas=np.array([1.0, 0, 0])),
                PoseLandmarkEdge(pose=1, landmark=0, meas=np.array([0, 1.0, 0])),
            ],
            [],
        )
        st = SlamState(
            np.tile(np.eye(3), (2, 1, 1)), np.zeros((2, 3)), np.zeros((1, 3))
        )
        with pytest.raises(SingularNormalEquationsError):
            gauss_newton(g, st, SolverConfig(damping=0.0))


class TestRecoverTranslations:
    def test_zero_noise_recovery_up_to_translation(self):
        g, gt = _zero_noise_instance(seed=17)
        ordering = G.canonical_ordering(g)
        t, m = recover_translations(g, ordering, gt.state.rotations)
        offset = gt.state.translations[0] - t[0]
        assert np.abs(t + offset - gt.state.translations).max() < 1e-8
        assert np.abs(m + offset - gt.state.landmarks).max() < 1e-8

    def test_single_pose_landmark_exact(self):
        y = np.array([0.5, 1.5, -0.25])
        g = MeasurementGraph(
            1, 1, [PoseLandmarkEdge(pose=0, landmark=0, meas=y)], []
        )
        R = so3.exp(np.array([0.1, -0.2, 0.3]))[None]
        t, m = recover_translations(g, None, R)
        assert np.allclose(m[0] - t[0], R[0] @ y, atol=1e-12)

    def test_first_order_condition(self, rng):
        g, _ = _noisy_instance(seed=19, n_poses=4, n_landmarks=5)
        ordering = G.canonical_ordering(g)
        R = random_orthogonal_stack(rng, g.n_poses)
        t, m = recover_translations(g, ordering, R)

        def cost(tv, mv):
            return translation_cost_oracle(g, R, tv, mv)

        base_t, base_m = t.copy(), m.copy()
        # the cost is quadratic, so central differences at the minimum
        # are exact up to rounding noise of order eps * cost / h
        h = 1e-5
        scale = max(1.0, cost(t, m))
        for arr in (base_t, base_m):
            for idx in np.ndindex(arr.shape):
                arr[idx] += h
                up = cost(base_t, base_m)
                arr[idx] -= 2 * h
                dn = cost(base_t, base_m)
                arr[idx] += h
                grad = (up - dn) / (2 * h)
                assert abs(grad) <= 1e-9 * scale

    def test_projection_is_optimal(self, rng):
        g, _ = _noisy_instance(seed=23, n_poses=5, n_landmarks=6)
        ordering = G.canonical_ordering(g)
        R = random_orthogonal_stack(rng, g.n_poses)
        t, m = recover_translations(g, ordering, R)
        best = translation_cost_oracle(g, R, t, m)
        for _ in range(100):
            tr = t + rng.normal(size=t.shape)
            mr = m + rng.normal(size=m.shape)
            assert best <= translation_cost_oracle(g, R, tr, mr) + 1e-12


class TestRiemannianRefine:
    def test_fixed_point_at_optimum(self):
        g, gt = _zero_noise_instance(seed=25)
        op = build_qbt_operator(g)
        out = riemannian_refine(op, gt.state.rotations)
        assert np.abs(out - gt.state.rotations).max() < 1e-6

    def test_converges_from_perturbation(self, rng):
        g, gt = _zero_noise_instance(seed=27)
        op = build_qbt_operator(g)
        R0 = gt.state.rotations.copy()
        for i in range(g.n_poses):
            R0[i] = R0[i] @ so3.exp(0.05 * rng.normal(size=3))
        out = riemannian_refine(op, R0, SolverConfig(max_iters=2000))
        assert evaluate_marginal_cost(op, out) <= 1e-12

    def test_cost_trace_monotone(self, rng):
        g, _ = _noisy_instance(seed=29)
        op = build_qbt_operator(g)
        R0 = random_orthogonal_stack(rng, g.n_poses)
        trace = []
        riemannian_refine(op, R0, SolverConfig(max_iters=50), cost_trace=trace)
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
        assert trace[-1] <= trace[0]
