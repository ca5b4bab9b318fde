"""Iteration matrices, spectral-radius scans and the cost model.

For the scalar test equation ``phi' = (a + d + r) phi`` every sweep is an
affine map of the previous sweep's node vector ``X`` (nodes ``1..M``) and of
the initial value ``p``::

    Y = offset * p + G @ X

:func:`affine_iteration_matrix` assembles that map from the update equations
written in matrix form.  Strictly lower-triangular coupling makes each scheme
a (block) triangular linear system for the new node values.
:func:`probe_iteration_matrix` recovers the same ``G`` numerically by running
the sweep engines on unit vectors and serves as an independent check.
"""

import csv
from dataclasses import dataclass
from enum import Enum
import math
import warnings

import numpy as np

from .errors import InvalidArgumentError, SingularStageError
from .integrators import Scheme, custom_state, initial_state, parse_scheme, scheme_label, sweep
from .linalg import spectral_radius
from .problems import LinearScalarProblem, StiffnessTriple
from .quadrature import EulerConvention, build_tables

__all__ = [
    "AffineMap",
    "IterationMatrixResult",
    "CostInputs",
    "DRule",
    "SweepCapWarning",
    "affine_iteration_matrix",
    "probe_iteration_matrix",
    "spectral_radius_scan",
    "log_r_grid",
    "cost_ratio",
    "cost_ratio_imex",
    "sweeps_to_tolerance",
    "write_scan_csv",
    "write_cost_csv",
    "SWEEP_CAP",
]

SWEEP_CAP = 1000


class SweepCapWarning(RuntimeWarning):
    """The sweep cap was reached before the increment dropped below tolerance."""


@dataclass
class AffineMap:
    """``Y = offset * phi0 + W @ X`` for node vectors of length ``M``."""

    W: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        M = self.W.shape[0]
        if self.W.shape != (M, M) or self.offset.shape != (M,):
            raise InvalidArgumentError("AffineMap needs an M x M matrix and a length-M offset")

    def __call__(self, X, phi0):
        return self.offset * phi0 + self.W @ np.asarray(X, dtype=float)

    @classmethod
    def from_columns(cls, C):
        """Split an ``M x (M + 1)`` coefficient block ``[offset | W]``."""
        return cls(W=C[:, 1:], offset=C[:, 0])


@dataclass
class IterationMatrixResult:
    G: np.ndarray
    gamma: float
    scheme: Scheme
    M: int
    nu: int
    dt: float
    triple: StiffnessTriple
    offset: np.ndarray = None


def _stage_check(kappa, c_diag, what):
    pivots = 1.0 - kappa * c_diag
    bad = np.flatnonzero(np.abs(pivots) < 1e-14)
    if bad.size:
        raise SingularStageError(f"{what} stage singular at node {bad[0] + 1}")


def _split_lower(A):
    """Diagonal, sub-diagonal and remaining strictly lower parts of ``A``."""
    diag = np.diag(np.diag(A))
    sub = np.diag(np.diag(A, -1), -1)
    rest = np.tril(A, -2)
    return diag, sub, rest


def _affine_misdc(t, tr, dt):
    a, d, r, s = tr.a, tr.d, tr.r, tr.s
    M = t.M
    I = np.eye(M)
    E = dt * np.diag(t.nodes.dtau)
    shift = np.eye(M, k=-1)
    e1 = I[:, 0]
    _stage_check(d, np.diag(E), "diffusion")
    _stage_check(r, np.diag(E), "reaction")
    lhs = (I - d * E) @ (I - r * E) - (I + a * E) @ shift
    off = e1 + dt * s * t.S[:, 0]
    X = -a * E @ shift - d * E + dt * s * t.S[:, 1:] - (I - d * E) @ (r * E)
    return np.linalg.solve(lhs, np.column_stack([off, X]))


def _base(t, tr, dt):
    # columns [p | X] of p*1 + dt*s*(q p + Qt X)
    return np.column_stack([np.ones(t.M) + dt * tr.s * t.q, dt * tr.s * t.Qt])


def _affine_misdcq(t, tr, dt):
    a, d, r = tr.a, tr.d, tr.r
    M = t.M
    I = np.eye(M)
    QI, QE = dt * t.QtI, dt * t.QtE
    Dg = np.diag(np.diag(QI))
    _stage_check(d, np.diag(Dg), "diffusion")
    _stage_check(r, np.diag(Dg), "reaction")
    Lq = QI - Dg
    lhs = (I - d * Dg) @ (I - r * QI) - a * QE - d * Lq
    rhs = _base(t, tr, dt)
    rhs[:, 1:] += -a * QE - d * QI - (I - d * Dg) @ (r * QI)
    return np.linalg.solve(lhs, rhs)


def _affine_imexq(t, tr, dt):
    a, k = tr.a, tr.d + tr.r
    QI, QE = dt * t.QtI, dt * t.QtE
    _stage_check(k, np.diag(QI), "coupled")
    lhs = np.eye(t.M) - a * QE - k * QI
    rhs = _base(t, tr, dt)
    rhs[:, 1:] += -a * QE - k * QI
    return np.linalg.solve(lhs, rhs)


def _affine_cisdcq(t, tr, dt, nu):
    """Nested iterations as ``2M x 2M`` block systems in ``[phi_AD; phi]``."""
    a, d, r = tr.a, tr.d, tr.r
    M = t.M
    I = np.eye(M)
    QI, QE = dt * t.QtI, dt * t.QtE
    Dg, QI1, QI2 = _split_lower(QI)
    _, QE1, QE2 = _split_lower(QE)
    _stage_check(d, np.diag(Dg), "diffusion")
    _stage_check(r, np.diag(Dg), "reaction")
    Xc = np.column_stack([np.zeros(M), I])  # X as [p | X] coefficients
    near = a * QE1 + d * QI1
    far = a * QE2 + (d + r) * QI2
    base = _base(t, tr, dt)
    Z_prev = Xc
    for l in range(1, nu + 1):
        rhs1 = base - far @ Xc - d * Dg @ Xc + r * (QI1 + Dg) @ (Z_prev - Xc)
        if l == 1:
            rhs1 = rhs1 - near @ Xc
            top_left = I - d * Dg - near
        else:
            rhs1 = rhs1 + near @ (Z_prev - Xc)
            top_left = I - d * Dg
        rhs2 = -r * (QI1 + Dg) @ Z_prev
        lhs = np.block([[top_left, -far], [-I, I - r * Dg - r * QI1]])
        sol = np.linalg.solve(lhs, np.vstack([rhs1, rhs2]))
        Z_prev = sol[M:]
    return Z_prev


def affine_iteration_matrix(
    scheme, triple, dt, M, nu=None, convention=EulerConvention.CUMULATIVE
):
    """Sweep map of ``scheme`` on the scalar test equation.

    Returns
    -------
    IterationMatrixResult
        ``G`` is the coefficient of the previous node vector, ``offset`` the
        coefficient of the initial value.

    Raises
    ------
    SingularStageError
        If an implicit stage ``1 - kappa * dt * QtI[m, m]`` vanishes.
    """
    scheme, nu = parse_scheme(scheme, nu)
    tables = build_tables(M, convention)
    if scheme is Scheme.MISDC:
        C = _affine_misdc(tables, triple, dt)
    elif scheme is Scheme.MISDCQ:
        C = _affine_misdcq(tables, triple, dt)
    elif scheme is Scheme.IMEXQ:
        C = _affine_imexq(tables, triple, dt)
    else:
        if nu is None or nu < 1:
            raise InvalidArgumentError("cisdcq needs nu >= 1")
        C = _affine_cisdcq(tables, triple, dt, int(nu))
    amap = AffineMap.from_columns(C)
    return IterationMatrixResult(
        G=amap.W,
        gamma=spectral_radius(amap.W),
        scheme=scheme,
        M=M,
        nu=nu,
        dt=dt,
        triple=triple,
        offset=amap.offset,
    )


def probe_iteration_matrix(
    scheme, triple, dt, M, nu=None, convention=EulerConvention.CUMULATIVE, phi0=1.0
):
    """``G`` from the sweep engine: column ``j`` is ``sweep(e_j) - sweep(0)``."""
    scheme, nu = parse_scheme(scheme, nu)
    tables = build_tables(M, convention)
    problem = LinearScalarProblem(triple, phi0=phi0)
    p = np.array([float(phi0)])

    def run(X):
        nodes = [p] + [np.array([x]) for x in X]
        out = sweep(scheme, custom_state(problem, nodes), tables, problem, dt, nu)
        return np.array([v[0] for v in out.phi[1:]])

    zero = run(np.zeros(M))
    G = np.empty((M, M))
    for j in range(M):
        G[:, j] = run(np.eye(M)[j]) - zero
    return G


class DRule(str, Enum):
    HALF_OF_R = "half_of_r"
    FIXED = "fixed"


def log_r_grid(lo=1e-2, hi=1e6, per_decade=40):
    """Negative reaction coefficients, log-uniform in magnitude."""
    n = int(round(math.log10(hi / lo) * per_decade)) + 1
    return -np.logspace(math.log10(lo), math.log10(hi), n)


def spectral_radius_scan(
    schemes,
    r_grid,
    d_rule=DRule.HALF_OF_R,
    a=1.0,
    dt=1.0,
    M=4,
    nu_list=(1,),
    d_fixed=None,
    convention=EulerConvention.CUMULATIVE,
):
    """Spectral radius for every scheme, nested-iteration count and ``r``.

    ``d_rule`` is ``half_of_r`` (``d = r / 2``) or ``fixed`` (``d = d_fixed``).

    Returns
    -------
    list of dict
        Rows with keys ``scheme, M, nu, a, d, r, dt, gamma``.
    """
    r_grid = list(r_grid)
    if not r_grid:
        raise InvalidArgumentError("r_grid must be nonempty")
    d_rule = DRule(d_rule)
    if d_rule is DRule.FIXED and d_fixed is None:
        raise InvalidArgumentError("fixed d rule needs d_fixed")
    rows = []
    for name in schemes:
        scheme, nu_given = parse_scheme(name)
        nus = [nu_given] if nu_given is not None else (
            list(nu_list) if scheme is Scheme.CISDCQ else [None]
        )
        for nu in nus:
            for r in r_grid:
                r = float(r)
                d = r / 2 if d_rule is DRule.HALF_OF_R else float(d_fixed)
                res = affine_iteration_matrix(
                    scheme, StiffnessTriple(a, d, r), dt, M, nu, convention
                )
                rows.append(dict(
                    scheme=scheme_label(scheme, nu), M=M, nu=nu or 0,
                    a=a, d=d, r=float(r), dt=dt, gamma=res.gamma,
                ))
    return rows


@dataclass(frozen=True)
class CostInputs:
    """Stage costs, nested-iteration count and measured sweep counts.

    ``n_misdcq``, ``n_cisdcq`` and ``n_imexq`` are the sweep counts of the
    respective schemes; ``cost_adr`` is only needed for the IMEXQ comparison.
    """

    cost_ad: float
    cost_r: float
    nu: int
    M: int
    n_misdcq: int = 1
    n_cisdcq: int = 1
    n_imexq: int = 1
    cost_adr: float = None

    def __post_init__(self):
        if self.cost_ad <= 0 or self.cost_r <= 0:
            raise InvalidArgumentError("stage costs must be positive")
        if self.cost_adr is not None and self.cost_adr <= 0:
            raise InvalidArgumentError("coupled stage cost must be positive")
        if min(self.n_misdcq, self.n_cisdcq, self.n_imexq) < 1:
            raise InvalidArgumentError("sweep counts must be >= 1")
        if self.nu < 1 or self.M < 1:
            raise InvalidArgumentError("nu and M must be >= 1")

    @property
    def alpha(self):
        return (self.cost_ad + self.cost_r) / max(self.cost_ad, self.cost_r)

    @property
    def beta(self):
        if self.cost_adr is None:
            raise InvalidArgumentError("beta needs cost_adr")
        return self.cost_adr / max(self.cost_ad, self.cost_r)


def _pipeline_ratio(n_ref, n_c, w, nu, M):
    return (n_ref / n_c) * (w * M) / (w * nu + M - 1)


def cost_ratio(inputs):
    """Cost of MISDCQ relative to pipelined CISDCQ-nu."""
    return _pipeline_ratio(inputs.n_misdcq, inputs.n_cisdcq, inputs.alpha, inputs.nu, inputs.M)


def cost_ratio_imex(inputs):
    """Cost of IMEXQ relative to pipelined CISDCQ-nu."""
    return _pipeline_ratio(inputs.n_imexq, inputs.n_cisdcq, inputs.beta, inputs.nu, inputs.M)


def sweeps_to_tolerance(
    scheme, triple, dt=1.0, M=4, nu=None, tol=1e-14, phi0=1.0,
    convention=EulerConvention.CUMULATIVE, cap=SWEEP_CAP,
):
    """Smallest sweep count whose final-node increment is ``<= tol``.

    Returns ``cap`` and emits :class:`SweepCapWarning` when the tolerance is
    never met.
    """
    scheme, nu = parse_scheme(scheme, nu)
    tables = build_tables(M, convention)
    problem = LinearScalarProblem(triple, phi0=phi0)
    state = initial_state(problem, np.array([float(phi0)]), M)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, cap + 1):
            state = sweep(scheme, state, tables, problem, dt, nu)
            inc = state.increment()
            if inc <= tol:
                return k
    warnings.warn(
        f"{scheme_label(scheme, nu)} did not reach {tol:g} within {cap} sweeps",
        SweepCapWarning,
        stacklevel=2,
    )
    return cap


def write_scan_csv(path, rows):
    fields = ["scheme", "M", "nu", "a", "d", "r", "dt", "gamma"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in fields})


def write_cost_csv(path, rows):
    fields = ["scheme", "nu", "N_sweeps", "R"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in fields})
