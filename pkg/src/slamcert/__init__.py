"""slamcert: landmark-based SLAM with a fast global-optimality certificate.

Solve 3D landmark SLAM locally, build the landmark-marginalized data
matrix with cost linear in the number of landmarks, and certify
candidate solutions through a closed-form dual multiplier and a
minimum-eigenvalue test.
"""

__version__ = "0.1.0"

from .certificate import (
    CertificateReport,
    MultiplierBlocks,
    certify,
    compute_lambda,
    min_eigenvalue,
    optimality_gap,
)
from .datamatrix import (
    DataMatrixOperator,
    ProblemVariant,
    build_qbt_dense,
    build_qbt_operator,
    build_qr,
    evaluate_marginal_cost,
)
from .graph import (
    EdgeOrdering,
    MeasurementGraph,
    PoseLandmarkEdge,
    PosePoseEdge,
    canonical_ordering,
    incidence,
    laplacian,
    restricted_incidence,
    weighted_incidences,
)
from .sim import BoxTrajectory, EllipseTrajectory, GroundTruth, SimConfig, generate
from .solver import (
    SlamState,
    SolveResult,
    SolverConfig,
    full_cost,
    gauss_newton,
    recover_translations,
    riemannian_refine,
)

__all__ = [
    "CertificateReport",
    "MultiplierBlocks",
    "certify",
    "compute_lambda",
    "min_eigenvalue",
    "optimality_gap",
    "DataMatrixOperator",
    "ProblemVariant",
    "build_qbt_dense",
    "build_qbt_operator",
    "build_qr",
    "evaluate_marginal_cost",
    "EdgeOrdering",
    "MeasurementGraph",
    "PoseLandmarkEdge",
    "PosePoseEdge",
    "canonical_ordering",
    "incidence",
    "laplacian",
    "restricted_incidence",
    "weighted_incidences",
    "BoxTrajectory",
    "EllipseTrajectory",
    "GroundTruth",
    "SimConfig",
    "generate",
    "SlamState",
    "SolveResult",
    "SolverConfig",
    "full_cost",
    "gauss_newton",
    "recover_translations",
    "riemannian_refine",
    "__version__",
]
