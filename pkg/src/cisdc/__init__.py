"""Multi-implicit and concurrent-implicit spectral deferred correction sweeps.

Modules
-------
quadrature
    Gauss-Lobatto nodes and integration matrices.
linalg
    Dense and banded LU, Hessenberg QR eigenvalues, scalar Newton.
integrators
    MISDC, MISDCQ, CISDCQ-nu and IMEXQ sweeps and the time-stepping driver.
pipeline
    Task-graph execution of a CISDCQ sweep on a thread pool.
analysis
    Iteration matrices, spectral-radius scans and the cost model.
problems
    Scalar linear model and the 1-D advection-diffusion-reaction PDE.
cli
    Command-line experiments.
"""

from .errors import (
    CapabilityError,
    CisdcError,
    FactorizationError,
    InvalidArgumentError,
    NumericError,
    SingularStageError,
    SolveError,
    StageError,
)
from .integrators import Scheme, integrate, sweep
from .problems import LinearScalarProblem, ReactionDiffusionGrid, ReactionDiffusionProblem, StiffnessTriple
from .quadrature import EulerConvention, build_tables

__version__ = "0.1.0"

__all__ = [
    "CapabilityError",
    "CisdcError",
    "EulerConvention",
    "FactorizationError",
    "InvalidArgumentError",
    "LinearScalarProblem",
    "NumericError",
    "ReactionDiffusionGrid",
    "ReactionDiffusionProblem",
    "Scheme",
    "SingularStageError",
    "SolveError",
    "StageError",
    "StiffnessTriple",
    "build_tables",
    "integrate",
    "sweep",
]
