"""Benchmark problems written against the operator-split contract.

A problem exposes the three right-hand sides ``eval_A`` (explicit
advection), ``eval_D`` (diffusion) and ``eval_R`` (reaction), together with
the stage solves

    solve_D(coef, rhs):  phi - coef * F_D(phi) = rhs
    solve_R(coef, rhs):  phi - coef * F_R(phi) = rhs
    solve_DR(coef, rhs): phi - coef * (F_D + F_R)(phi) = rhs   (optional)

States are 1-D float arrays.  The scalar linear problem uses arrays of
length one so that the same sweep code serves both problems.
"""

from dataclasses import dataclass
import math
from pathlib import Path
import struct
import threading

import numpy as np

from .errors import InvalidArgumentError, SolveError
from .integrators import (
    cisdcq_sweep,
    initial_state,
    integrate,
    misdcq_sweep,
    parse_scheme,
    scheme_label,
)
from .linalg import BandedMatrix, banded_factor, newton_elementwise
from .quadrature import build_tables

__all__ = [
    "OperatorSplitProblem",
    "StiffnessTriple",
    "LinearScalarProblem",
    "ReactionDiffusionGrid",
    "ReactionDiffusionProblem",
    "initial_condition",
    "advection_operator",
    "laplacian_operator",
    "laplacian_matrix",
    "reaction_term",
    "reaction_derivative",
    "solve_diffusion_implicit",
    "solve_reaction_implicit",
    "l1_error",
    "write_field",
    "read_field",
    "check_contract",
    "fit_slope",
    "reference_solution",
    "refinement_study",
    "RefinementResult",
    "nonlinear_sweep_study",
    "SweepStudyRow",
]


class OperatorSplitProblem:
    """Base class documenting the operator-split contract.

    Subclasses override the ``eval_*`` and ``solve_*`` methods.  ``solve_DR``
    is only needed by the coupled IMEXQ scheme.
    """

    def initial_value(self):
        raise NotImplementedError

    def eval_A(self, phi):
        raise NotImplementedError

    def eval_D(self, phi):
        raise NotImplementedError

    def eval_R(self, phi):
        raise NotImplementedError

    def solve_D(self, coef, rhs):
        raise NotImplementedError

    def solve_R(self, coef, rhs):
        raise NotImplementedError

    @property
    def has_coupled_solve(self):
        return type(self).solve_DR is not OperatorSplitProblem.solve_DR

    def solve_DR(self, coef, rhs):
        raise NotImplementedError


def check_contract(problem, phi, coef, tol=1e-11):
    """Largest relative residual of the stage solves of ``problem`` at ``phi``.

    Each solve is applied to ``rhs = phi`` and substituted back into its
    defining equation.
    """
    rhs = np.asarray(phi, dtype=float)
    scale = max(1.0, float(np.max(np.abs(rhs))))
    worst = 0.0
    pairs = [(problem.solve_D, problem.eval_D), (problem.solve_R, problem.eval_R)]
    if problem.has_coupled_solve:
        pairs.append((problem.solve_DR, lambda x: problem.eval_D(x) + problem.eval_R(x)))
    for solve, evaluate in pairs:
        x = solve(coef, rhs)
        res = x - coef * evaluate(x) - rhs
        worst = max(worst, float(np.max(np.abs(res))) / scale)
    return worst


# ---------------------------------------------------------------------------
# Scalar linear model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StiffnessTriple:
    a: float
    d: float
    r: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.d, self.r)):
            raise InvalidArgumentError("stiffness coefficients must be finite")

    @property
    def s(self):
        return self.a + self.d + self.r


class LinearScalarProblem(OperatorSplitProblem):
    """``phi' = a phi + d phi + r phi`` with each term treated as its own process."""

    def __init__(self, triple, phi0=1.0):
        if not isinstance(triple, StiffnessTriple):
            triple = StiffnessTriple(*triple)
        if not math.isfinite(phi0):
            raise InvalidArgumentError("phi0 must be finite")
        self.triple = triple
        self.phi0 = float(phi0)

    def initial_value(self):
        return np.array([self.phi0])

    def eval_A(self, phi):
        return self.triple.a * phi

    def eval_D(self, phi):
        return self.triple.d * phi

    def eval_R(self, phi):
        return self.triple.r * phi

    @staticmethod
    def _divide(rhs, denom, what):
        if denom == 0.0:
            raise SolveError(f"singular {what} solve (1 - coef*k = 0)")
        return rhs / denom

    def solve_D(self, coef, rhs):
        return self._divide(rhs, 1.0 - coef * self.triple.d, "diffusion")

    def solve_R(self, coef, rhs):
        return self._divide(rhs, 1.0 - coef * self.triple.r, "reaction")

    def solve_DR(self, coef, rhs):
        return self._divide(rhs, 1.0 - coef * (self.triple.d + self.triple.r), "coupled")


# ---------------------------------------------------------------------------
# 1-D advection-diffusion-reaction PDE
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReactionDiffusionGrid:
    """Uniform cell-centred grid on ``[0, length]`` with Dirichlet faces."""

    n_x: int
    a: float = 1.0
    d: float = 2.0
    r: float = 4.0
    length: float = 20.0
    phi_left: float = 1.0
    phi_right: float = 0.0

    def __post_init__(self):
        if int(self.n_x) != self.n_x or self.n_x < 8:
            raise InvalidArgumentError(f"invalid grid: n_x must be an integer >= 8, got {self.n_x}")

    @property
    def dx(self):
        return self.length / self.n_x

    @property
    def x(self):
        return (np.arange(self.n_x) + 0.5) * self.dx


# Cubic through the face value and the three nearest cell centres, evaluated
# at the two ghost centres.  Positions are in units of dx from the face.
def _ghost_weights():
    pts = np.array([0.0, 0.5, 1.5, 2.5])
    out = []
    for g in (-0.5, -1.5):
        w = np.ones(4)
        for k in range(4):
            for j in range(4):
                if j != k:
                    w[k] *= (g - pts[j]) / (pts[k] - pts[j])
        out.append(w)
    return np.array(out)


_GHOST = _ghost_weights()  # rows: ghost at -dx/2, ghost at -3dx/2


def _check_field(phi, grid):
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (grid.n_x,):
        raise InvalidArgumentError(f"field length {phi.shape} does not match n_x={grid.n_x}")
    return phi


def fill_ghosts(phi, grid):
    """Field padded with two ghost cells per side."""
    phi = _check_field(phi, grid)
    left = np.array([grid.phi_left, phi[0], phi[1], phi[2]])
    right = np.array([grid.phi_right, phi[-1], phi[-2], phi[-3]])
    g1l, g2l = _GHOST @ left
    g1r, g2r = _GHOST @ right
    return np.concatenate(([g2l, g1l], phi, [g1r, g2r]))


def initial_condition(grid):
    """``(1 + tanh(20 - 2x)) / 2`` sampled at the cell centres."""
    return 0.5 * (1.0 + np.tanh(20.0 - 2.0 * grid.x))


def advection_operator(phi, grid):
    """``a * d(phi)/dx`` with the fourth-order centred stencil."""
    p = fill_ghosts(phi, grid)
    return grid.a * (p[:-4] - 8.0 * p[1:-3] + 8.0 * p[3:-1] - p[4:]) / (12.0 * grid.dx)


def laplacian_operator(phi, grid):
    """``d * d2(phi)/dx2`` with the fourth-order centred stencil."""
    p = fill_ghosts(phi, grid)
    return grid.d * (-p[:-4] + 16.0 * p[1:-3] - 30.0 * p[2:-2] + 16.0 * p[3:-1] - p[4:]) / (
        12.0 * grid.dx**2
    )


def laplacian_matrix(grid):
    """Unscaled fourth-order Laplacian as an affine map ``phi -> L @ phi + b``.

    Returns ``(L, b)`` with ``L`` a pentadiagonal :class:`BandedMatrix`; the
    ghost-cell dependence on the boundary values is folded into ``b``.
    """
    n = grid.n_x
    h2 = 12.0 * grid.dx**2
    A = {-2: -1.0 / h2, -1: 16.0 / h2, 0: -30.0 / h2, 1: 16.0 / h2, 2: -1.0 / h2}
    L = BandedMatrix.from_diagonals(A, n)
    b = np.zeros(n)
    g1, g2 = _GHOST
    # row 0 sees ghost -1 (coef 16) and ghost -2 (coef -1); row 1 sees ghost -1 (coef -1)
    for row, c1, c2 in ((0, 16.0, -1.0), (1, -1.0, 0.0)):
        w = (c1 * g1 + c2 * g2) / h2
        b[row] += w[0] * grid.phi_left
        for k in range(3):
            L.bands[row, L.lower + k - row] += w[k + 1]
        rrow = n - 1 - row
        b[rrow] += w[0] * grid.phi_right
        for k in range(3):
            L.bands[rrow, L.lower + (n - 1 - k) - rrow] += w[k + 1]
    return L, b


def reaction_term(phi, r):
    return r * phi * (phi - 1.0) * (phi - 0.5)


def reaction_derivative(phi, r):
    return r * (3.0 * phi * phi - 3.0 * phi + 0.5)


def _diffusion_system(grid, coef):
    L, b = laplacian_matrix(grid)
    scale = coef * grid.d
    A = BandedMatrix(-scale * L.bands, L.lower, L.upper)
    A.bands[:, A.lower] += 1.0
    return A, scale * b


def solve_diffusion_implicit(coef, rhs, grid):
    """Solve ``(I - coef d Lap) phi = rhs`` including the boundary data."""
    rhs = _check_field(rhs, grid)
    if coef == 0.0:
        return rhs.copy()
    A, shift = _diffusion_system(grid, coef)
    return banded_factor(A).solve(rhs + shift)


def solve_reaction_implicit(coef, rhs, grid):
    """Cell-local Newton solve of ``phi - coef R(phi) = rhs``, started at ``rhs``."""
    rhs = _check_field(rhs, grid)
    if coef == 0.0:
        return rhs.copy()
    r = grid.r
    return newton_elementwise(
        lambda x: x - coef * reaction_term(x, r) - rhs,
        lambda x: 1.0 - coef * reaction_derivative(x, r),
        rhs,
    )


class ReactionDiffusionProblem(OperatorSplitProblem):
    """``phi_t = a phi_x + d phi_xx + r phi (phi - 1)(phi - 1/2)`` on a fixed grid.

    Factorizations of the implicit diffusion matrix are cached per
    coefficient; a sweep only ever needs ``M`` distinct ones.
    """

    def __init__(self, grid):
        self.grid = grid
        self._lap, self._lap_b = laplacian_matrix(grid)
        self._factors = {}
        self._lock = threading.Lock()

    def initial_value(self):
        return initial_condition(self.grid)

    def eval_A(self, phi):
        return advection_operator(phi, self.grid)

    def eval_D(self, phi):
        return laplacian_operator(phi, self.grid)

    def eval_R(self, phi):
        return reaction_term(phi, self.grid.r)

    def _diffusion_factor(self, coef):
        with self._lock:
            entry = self._factors.get(coef)
        if entry is None:
            A, shift = _diffusion_system(self.grid, coef)
            entry = (banded_factor(A), shift)
            with self._lock:
                self._factors[coef] = entry
        return entry

    def solve_D(self, coef, rhs):
        rhs = _check_field(rhs, self.grid)
        if coef == 0.0:
            return rhs.copy()
        lu, shift = self._diffusion_factor(coef)
        return lu.solve(rhs + shift)

    def solve_R(self, coef, rhs):
        return solve_reaction_implicit(coef, rhs, self.grid)

    def solve_DR(self, coef, rhs, tol=1e-14, max_iter=50):
        """Newton iteration on the coupled diffusion-reaction stage."""
        rhs = _check_field(rhs, self.grid)
        grid = self.grid
        phi = self.solve_D(coef, rhs)
        base = -coef * grid.d * self._lap.bands
        for _ in range(max_iter):
            res = phi - coef * (self.eval_D(phi) + self.eval_R(phi)) - rhs
            bands = base.copy()
            bands[:, self._lap.lower] += 1.0 - coef * reaction_derivative(phi, grid.r)
            step = banded_factor(BandedMatrix(bands, self._lap.lower, self._lap.upper)).solve(res)
            phi = phi - step
            if np.max(np.abs(step)) <= tol * (1.0 + np.max(np.abs(phi))):
                return phi
        raise SolveError(f"coupled Newton solve did not converge in {max_iter} iterations")

    def boundary_flux(self, phi):
        """Advective flux through the right face minus the left face, ``a*(F_R - F_L)``.

        The centred advection stencil is in conservation form, so
        ``dx * sum(eval_A(phi))`` equals this quantity.
        """
        p = fill_ghosts(phi, self.grid)
        n = self.grid.n_x

        def face(i):  # flux at face i - 1/2, padded index i + 2 is cell i
            k = i + 2
            return (-p[k + 1] + 7.0 * p[k] + 7.0 * p[k - 1] - p[k - 2]) / 12.0

        return self.grid.a * (face(n) - face(0))


def l1_error(phi, reference):
    """Mean absolute difference ``(1/n) sum |phi - ref|``."""
    phi = np.asarray(phi, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if phi.shape != reference.shape:
        raise InvalidArgumentError(f"length mismatch: {phi.shape} vs {reference.shape}")
    return float(np.mean(np.abs(phi - reference)))


# ---------------------------------------------------------------------------
# Field snapshots
# ---------------------------------------------------------------------------

_MAGIC = b"SDC1"
_HEADER = struct.Struct("<4sId")


def write_field(path, phi, dx):
    """Write ``magic, u32 n_x, f64 dx`` followed by ``n_x`` little-endian doubles."""
    phi = np.asarray(phi, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, phi.size, float(dx)))
        fh.write(phi.tobytes())


def read_field(path):
    """Inverse of :func:`write_field`; returns ``(phi, dx)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise InvalidArgumentError(f"{path}: truncated field header")
    magic, n_x, dx = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise InvalidArgumentError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size:]
    if len(body) != 8 * n_x:
        raise InvalidArgumentError(f"{path}: expected {n_x} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").astype(float), dx


# ---------------------------------------------------------------------------
# Studies on the nonlinear PDE
# ---------------------------------------------------------------------------

REFERENCE_SWEEPS = 8


@dataclass
class RefinementResult:
    """Errors against the reference at each step size, plus the fitted slope."""

    scheme: str
    sweeps: int
    dts: list
    errors: list
    slope: float = None


def fit_slope(dts, errors):
    """Least-squares slope of ``log(error)`` against ``log(dt)``; ``None`` if unfittable."""
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if dts.size < 2 or np.any(errors <= 0) or np.unique(dts).size < 2:
        return None
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


def _steps(t_final, dt):
    n = int(round(t_final / dt))
    if n < 1 or abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise InvalidArgumentError(f"dt={dt} does not divide t_final={t_final}")
    return n


def reference_solution(grid, t_final, dt=None, M=4, sweeps=REFERENCE_SWEEPS, cache_dir=None):
    """MISDCQ solution at ``t_final``.

    The default step is the largest ``dt <= dx / 32`` dividing ``t_final``.

    With ``cache_dir`` the field is stored in a snapshot file keyed by
    ``(n_x, dt, scheme, sweeps)`` and reused by later calls.
    """
    if dt is None:
        dt = t_final / math.ceil(t_final / (grid.dx / 32) - 1e-9)
    path = None
    if cache_dir is not None:
        key = f"ref_nx{grid.n_x}_dt{dt:.6e}_misdcq_k{sweeps}_a{grid.a:g}_d{grid.d:g}_r{grid.r:g}_T{t_final:g}.sdc"
        path = Path(cache_dir) / key
        if path.exists():
            return read_field(path)[0]
    problem = ReactionDiffusionProblem(grid)
    phi = integrate("misdcq", problem, dt, _steps(t_final, dt), M, sweeps).phi
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_field(path, phi, grid.dx)
    return phi


def refinement_study(
    scheme, sweeps, dt_list, grid, t_final=1.0, nu=None, M=4, reference=None, cache_dir=None
):
    """Errors of ``scheme`` with ``sweeps`` sweeps over ``dt_list``.

    Returns
    -------
    RefinementResult
        L1 errors against the fine-step MISDCQ reference and the fitted
        log-log slope (``None`` for fewer than two step sizes).
    """
    kind, nu = parse_scheme(scheme, nu)
    if reference is None:
        reference = reference_solution(grid, t_final, M=M, cache_dir=cache_dir)
    problem = ReactionDiffusionProblem(grid)
    errors = []
    for dt in dt_list:
        phi = integrate(kind, problem, dt, _steps(t_final, dt), M, sweeps, nu=nu).phi
        errors.append(l1_error(phi, reference))
    return RefinementResult(
        scheme=scheme_label(kind, nu),
        sweeps=sweeps,
        dts=list(dt_list),
        errors=errors,
        slope=fit_slope(dt_list, errors),
    )


@dataclass
class SweepStudyRow:
    scheme: str
    nu: int
    n_sweeps: int
    ratio: float


def nonlinear_sweep_study(grid, dt=0.05, M=4, nu_list=(1, 3, 6), reference_sweeps=15, cap=200):
    """Sweep counts of CISDCQ-nu needed to match the MISDCQ increment after
    ``reference_sweeps`` sweeps on the first time step.

    Returns
    -------
    epsilon : float
        MISDCQ increment after ``reference_sweeps`` sweeps.
    rows : list of SweepStudyRow
        The MISDCQ row first, then one row per ``nu`` with the cost ratio
        ``(reference_sweeps / N_C) * 2M / (2 nu + M - 1)``.
    """
    tables = build_tables(M)
    problem = ReactionDiffusionProblem(grid)
    phi0 = problem.initial_value()
    state = initial_state(problem, phi0, M)
    for _ in range(reference_sweeps):
        state = misdcq_sweep(state, tables, problem, dt)
    eps = state.increment()
    rows = [SweepStudyRow("misdcq", 0, reference_sweeps, 1.0)]
    for nu in nu_list:
        state = initial_state(problem, phi0, M)
        count = cap
        for k in range(1, cap + 1):
            state = cisdcq_sweep(state, tables, problem, dt, nu)
            if state.increment() <= eps:
                count = k
                break
        ratio = (reference_sweeps / count) * 2 * M / (2 * nu + M - 1)
        rows.append(SweepStudyRow(f"cisdcq-{nu}", nu, count, ratio))
    return eps, rows
