import numpy as np
import pytest

from slamcert.backend import limit_blas_threads

limit_blas_threads()


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile/load the jitted kernels once so timed tests measure the
    algorithms rather than the JIT."""
    from slamcert import certificate, datamatrix, graph, sim, solver

    cfg = sim.SimConfig(
        n_poses=4, n_landmarks=6, trajectory=sim.EllipseTrajectory(6, 4),
        trans_noise_std=0.0, rot_noise_std=0.0, seed=1,
    )
    g, gt = sim.generate(cfg)
    op = datamatrix.build_qbt_operator(g, graph.canonical_ordering(g))
    solver.gauss_newton(g, gt.state, solver.SolverConfig(max_iters=3))
    certificate.certify(op, gt.state.rotations)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
