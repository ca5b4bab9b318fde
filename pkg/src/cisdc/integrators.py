"""Sweep engines for the multi-implicit SDC family and the time-stepping driver.

One sweep maps the node values of sweep ``k`` to those of sweep ``k + 1``.
Four schemes share the state layout:

``misdc``
    node-to-node marching with forward-Euler advection, backward-Euler
    diffusion then backward-Euler reaction, and the ``S`` quadrature.
``misdcq``
    zero-to-node form with the LU-based implicit weights ``QtI``.
``cisdcq``
    ``misdcq`` with the node-``m`` couplings of the diffusion stage lagged over
    ``nu`` nested iterations, so the diffusion solve at node ``m + 1`` and the
    reaction solve at node ``m`` are independent.
``imexq``
    one coupled diffusion-reaction solve per node with the ``QtI`` weights.

Sweep functions never modify their input; arrays stored in a
:class:`SweepState` are treated as immutable.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import CapabilityError, CisdcError, InvalidArgumentError, StageError
from .quadrature import EulerConvention, build_tables

__all__ = [
    "Scheme",
    "parse_scheme",
    "scheme_label",
    "SweepState",
    "SweepReport",
    "IntegrationResult",
    "initial_state",
    "custom_state",
    "misdc_sweep",
    "misdcq_sweep",
    "cisdcq_sweep",
    "imexq_sweep",
    "CisdcqSweep",
    "sweep",
    "integrate",
    "discrete_norm",
]


class Scheme(str, Enum):
    MISDC = "misdc"
    MISDCQ = "misdcq"
    CISDCQ = "cisdcq"
    IMEXQ = "imexq"


def parse_scheme(name, nu=None):
    """Split labels such as ``"cisdcq-3"`` into ``(Scheme.CISDCQ, 3)``."""
    if isinstance(name, Scheme):
        return name, nu
    text = str(name).strip().lower()
    if "-" in text:
        base, _, count = text.partition("-")
        try:
            nu = int(count)
        except ValueError:
            raise InvalidArgumentError(f"bad scheme label {name!r}") from None
        text = base
    try:
        return Scheme(text), nu
    except ValueError:
        raise InvalidArgumentError(f"unknown scheme {name!r}") from None


def scheme_label(scheme, nu=None):
    scheme = Scheme(scheme)
    if scheme is Scheme.CISDCQ:
        return f"cisdcq-{nu}"
    return scheme.value


def discrete_norm(v):
    """Mean absolute value; equals ``|v|`` for the scalar problem."""
    return float(np.mean(np.abs(v)))


@dataclass
class SweepState:
    """Node values and stored operator evaluations of the current sweep.

    ``phi[m]`` is the value at node ``m``; ``fa``/``fd``/``fr`` hold the
    advection, diffusion and reaction evaluations at those values.  The
    ``*_prev`` lists keep sweep ``k`` after a sweep produced ``k + 1``; the
    ``lag_*`` lists hold the last nested-iteration values a CISDCQ sweep
    lagged against.
    """

    phi: list
    fa: list
    fd: list
    fr: list
    phi_ad: list = None
    phi_prev: list = None
    fa_prev: list = None
    fd_prev: list = None
    fr_prev: list = None
    lag_phi: list = None
    lag_fa: list = None
    lag_fd: list = None
    lag_fr: list = None

    @property
    def M(self):
        return len(self.phi) - 1

    def increment(self):
        """Norm of the change at the final node relative to the previous sweep."""
        if self.phi_prev is None:
            raise InvalidArgumentError("no previous sweep to compare against")
        return discrete_norm(self.phi[-1] - self.phi_prev[-1])

    def node_matrix(self):
        return np.array([np.asarray(p, dtype=float) for p in self.phi])


@dataclass
class SweepReport:
    increments: list = field(default_factory=list)
    diffusion_solves: int = 0
    reaction_solves: int = 0
    coupled_solves: int = 0

    @property
    def sweeps(self):
        return len(self.increments)


@dataclass
class IntegrationResult:
    phi: np.ndarray
    state: SweepState
    reports: list


def initial_state(problem, phi0, M):
    """Sweep-0 state: ``phi0`` copied to every node."""
    phi0 = np.array(phi0, dtype=float)
    fa, fd, fr = problem.eval_A(phi0), problem.eval_D(phi0), problem.eval_R(phi0)
    n = M + 1
    return SweepState(phi=[phi0] * n, fa=[fa] * n, fd=[fd] * n, fr=[fr] * n)


def custom_state(problem, node_values):
    """State with given node values and consistent stored evaluations."""
    phi = [np.array(v, dtype=float) for v in node_values]
    return SweepState(
        phi=phi,
        fa=[problem.eval_A(p) for p in phi],
        fd=[problem.eval_D(p) for p in phi],
        fr=[problem.eval_R(p) for p in phi],
    )


def _solve(kind, solver, coef, rhs, node):
    try:
        return solver(coef, rhs)
    except StageError:
        raise
    except CisdcError as exc:
        raise StageError(f"{kind} solve failed at node {node}: {exc}", node=node) from exc


def _advance(old, phi, fa, fd, fr, **extra):
    return SweepState(
        phi=phi, fa=fa, fd=fd, fr=fr,
        phi_prev=old.phi, fa_prev=old.fa, fd_prev=old.fd, fr_prev=old.fr,
        **extra,
    )


def _check(state, tables):
    if state.M != tables.M:
        raise InvalidArgumentError(f"state has {state.M} subintervals, tables have {tables.M}")


def _quadrature(weights, F, dt):
    acc = weights[0] * F[0]
    for j in range(1, len(F)):
        acc = acc + weights[j] * F[j]
    return dt * acc


def _evaluate(problem, phi):
    return problem.eval_A(phi), problem.eval_D(phi), problem.eval_R(phi)


def misdc_sweep(state, tables, problem, dt):
    """One MISDC sweep in node-to-node form with the ``S`` quadrature."""
    _check(state, tables)
    M = tables.M
    phi_k, fa_k, fd_k, fr_k = state.phi, state.fa, state.fd, state.fr
    F_k = [fa_k[j] + fd_k[j] + fr_k[j] for j in range(M + 1)]
    phi, fa, fd, fr = [phi_k[0]], [fa_k[0]], [fd_k[0]], [fr_k[0]]
    phi_ad = [phi_k[0]]
    for m in range(M):
        h = dt * tables.nodes.dtau[m]
        rhs = phi[m] + h * (fa[m] - fa_k[m]) - h * fd_k[m + 1] + _quadrature(tables.S[m], F_k, dt)
        ad = _solve("diffusion", problem.solve_D, h, rhs, m + 1)
        new = _solve("reaction", problem.solve_R, h, ad - h * fr_k[m + 1], m + 1)
        phi_ad.append(ad)
        phi.append(new)
        for store, value in zip((fa, fd, fr), _evaluate(problem, new)):
            store.append(value)
    return _advance(state, phi, fa, fd, fr, phi_ad=phi_ad)


def misdcq_sweep(state, tables, problem, dt):
    """One MISDCQ sweep (zero-to-node form, ``QtI``/``QtE`` correction weights)."""
    _check(state, tables)
    M = tables.M
    QtI, QtE = tables.QtI, tables.QtE
    phi_k, fa_k, fd_k, fr_k = state.phi, state.fa, state.fd, state.fr
    F_k = [fa_k[j] + fd_k[j] + fr_k[j] for j in range(M + 1)]
    phi0 = phi_k[0]
    phi, fa, fd, fr = [phi0], [fa_k[0]], [fd_k[0]], [fr_k[0]]
    phi_ad = [phi0]
    for m in range(M):
        c = dt * QtI[m, m]
        rhs = phi0 + _quadrature(tables.Q[m], F_k, dt)
        react = 0.0 * phi0
        for j in range(1, m + 1):
            rhs = rhs + dt * (QtE[m, j - 1] * (fa[j] - fa_k[j]) + QtI[m, j - 1] * (fd[j] - fd_k[j]))
            react = react + dt * QtI[m, j - 1] * (fr[j] - fr_k[j])
        rhs = rhs - c * fd_k[m + 1]
        ad = _solve("diffusion", problem.solve_D, c, rhs, m + 1)
        new = _solve("reaction", problem.solve_R, c, ad + react - c * fr_k[m + 1], m + 1)
        phi_ad.append(ad)
        phi.append(new)
        for store, value in zip((fa, fd, fr), _evaluate(problem, new)):
            store.append(value)
    return _advance(state, phi, fa, fd, fr, phi_ad=phi_ad)


def imexq_sweep(state, tables, problem, dt):
    """One IMEXQ sweep: a single coupled diffusion-reaction solve per node."""
    _check(state, tables)
    if not getattr(problem, "has_coupled_solve", hasattr(problem, "solve_DR")):
        raise CapabilityError("IMEXQ needs a problem providing solve_DR")
    M = tables.M
    QtI, QtE = tables.QtI, tables.QtE
    phi_k, fa_k, fd_k, fr_k = state.phi, state.fa, state.fd, state.fr
    F_k = [fa_k[j] + fd_k[j] + fr_k[j] for j in range(M + 1)]
    phi0 = phi_k[0]
    phi, fa, fd, fr = [phi0], [fa_k[0]], [fd_k[0]], [fr_k[0]]
    for m in range(M):
        c = dt * QtI[m, m]
        rhs = phi0 + _quadrature(tables.Q[m], F_k, dt)
        for j in range(1, m + 1):
            rhs = rhs + dt * (
                QtE[m, j - 1] * (fa[j] - fa_k[j])
                + QtI[m, j - 1] * ((fd[j] - fd_k[j]) + (fr[j] - fr_k[j]))
            )
        rhs = rhs - c * (fd_k[m + 1] + fr_k[m + 1])
        new = _solve("coupled", problem.solve_DR, c, rhs, m + 1)
        phi.append(new)
        for store, value in zip((fa, fd, fr), _evaluate(problem, new)):
            store.append(value)
    return _advance(state, phi, fa, fd, fr)


class CisdcqSweep:
    """Slot storage and cell kernels of one CISDCQ sweep.

    The sweep is a grid of cells ``D(n, l)`` (diffusion stage at node ``n``,
    nested iteration ``l``) and ``R(n, l)`` (reaction stage), with
    ``1 <= n <= M`` and ``1 <= l <= nu``.  Every cell reads only slots written
    by cells it depends on and writes its own slot exactly once, so any
    topological execution order produces bit-identical results.  Slot
    ``l = 0`` holds the sweep-``k`` data.
    """

    def __init__(self, state, tables, problem, dt, nu):
        if int(nu) != nu or nu < 1:
            raise InvalidArgumentError(f"nu must be a positive integer, got {nu!r}")
        _check(state, tables)
        self.state = state
        self.tables = tables
        self.problem = problem
        self.dt = dt
        self.nu = nu = int(nu)
        M = self.M = tables.M
        self.fa_k, self.fd_k, self.fr_k = state.fa, state.fd, state.fr
        phi0 = state.phi[0]
        F_k = [state.fa[j] + state.fd[j] + state.fr[j] for j in range(M + 1)]
        self.base = [None] + [phi0 + _quadrature(tables.Q[m], F_k, dt) for m in range(M)]

        def slots(first):
            rows = [list(first)]
            for _ in range(nu):
                rows.append([first[0]] + [None] * M)
            return rows

        self.ph = slots(state.phi)
        self.ph_fa = slots(state.fa)
        self.ph_fd = slots(state.fd)
        self.ph_fr = slots(state.fr)
        self.ad = slots(state.phi)
        # advection/diffusion evaluations of the first-iteration diffusion outputs
        self.ad_fa = [None] * (M + 1)
        self.ad_fd = [None] * (M + 1)

    def coef(self, n):
        return self.dt * self.tables.QtI[n - 1, n - 1]

    def _node_lag(self, n, l):
        """Lagged (advection, diffusion, reaction) terms at node ``n - 1`` for ``D(n, l)``."""
        m = n - 1
        if l == 1:
            lag_a, lag_d = self.ad_fa[m], self.ad_fd[m]
        else:
            lag_a, lag_d = self.ph_fa[l - 1][m], self.ph_fd[l - 1][m]
        return lag_a, lag_d, self.ph_fr[l - 1][m]

    def diffusion_cell(self, n, l):
        dt, i = self.dt, n - 1
        QtI, QtE = self.tables.QtI, self.tables.QtE
        fa_k, fd_k, fr_k = self.fa_k, self.fd_k, self.fr_k
        fa, fd, fr = self.ph_fa[l], self.ph_fd[l], self.ph_fr[l]
        rhs = self.base[n]
        for j in range(1, n - 1):
            rhs = rhs + dt * (
                QtE[i, j - 1] * (fa[j] - fa_k[j])
                + QtI[i, j - 1] * ((fd[j] - fd_k[j]) + (fr[j] - fr_k[j]))
            )
        if n >= 2:
            m = n - 1
            lag_a, lag_d, lag_r = self._node_lag(n, l)
            rhs = rhs + dt * (
                QtE[i, m - 1] * (lag_a - fa_k[m])
                + QtI[i, m - 1] * ((lag_d - fd_k[m]) + (lag_r - fr_k[m]))
            )
        c = self.coef(n)
        rhs = rhs + c * ((self.ph_fr[l - 1][n] - fr_k[n]) - fd_k[n])
        out = _solve("diffusion", self.problem.solve_D, c, rhs, n)
        self.ad[l][n] = out
        if l == 1 and n < self.M:
            self.ad_fa[n] = self.problem.eval_A(out)
            self.ad_fd[n] = self.problem.eval_D(out)
        return out

    def reaction_cell(self, n, l):
        c = self.coef(n)
        rhs = self.ad[l][n]
        if n >= 2:
            w = self.dt * self.tables.QtI[n - 1, n - 2]
            rhs = rhs + w * (self.ph_fr[l][n - 1] - self.ph_fr[l - 1][n - 1])
        rhs = rhs - c * self.ph_fr[l - 1][n]
        out = _solve("reaction", self.problem.solve_R, c, rhs, n)
        self.ph[l][n] = out
        self.ph_fa[l][n], self.ph_fd[l][n], self.ph_fr[l][n] = _evaluate(self.problem, out)
        return out

    def run_cell(self, kind, n, l):
        if kind == "D":
            return self.diffusion_cell(n, l)
        if kind == "R":
            return self.reaction_cell(n, l)
        raise InvalidArgumentError(f"unknown cell kind {kind!r}")

    def serial_order(self):
        for l in range(1, self.nu + 1):
            for n in range(1, self.M + 1):
                yield ("D", n, l)
                yield ("R", n, l)

    def result(self):
        nu = self.nu
        return _advance(
            self.state,
            list(self.ph[nu]), list(self.ph_fa[nu]), list(self.ph_fd[nu]), list(self.ph_fr[nu]),
            phi_ad=list(self.ad[nu]),
            lag_phi=list(self.ph[nu - 1]),
            lag_fa=list(self.ph_fa[nu - 1]),
            lag_fd=list(self.ph_fd[nu - 1]),
            lag_fr=list(self.ph_fr[nu - 1]),
        )


def cisdcq_sweep(state, tables, problem, dt, nu):
    """One CISDCQ sweep with ``nu`` nested iterations, executed serially."""
    work = CisdcqSweep(state, tables, problem, dt, nu)
    for kind, n, l in work.serial_order():
        work.run_cell(kind, n, l)
    return work.result()


def sweep(scheme, state, tables, problem, dt, nu=None):
    scheme, parsed_nu = parse_scheme(scheme, nu)
    if scheme is Scheme.MISDC:
        return misdc_sweep(state, tables, problem, dt)
    if scheme is Scheme.MISDCQ:
        return misdcq_sweep(state, tables, problem, dt)
    if scheme is Scheme.IMEXQ:
        return imexq_sweep(state, tables, problem, dt)
    if parsed_nu is None:
        raise InvalidArgumentError("cisdcq needs a nested iteration count nu")
    return cisdcq_sweep(state, tables, problem, dt, parsed_nu)


def _count_solves(report, scheme, M, nu):
    if scheme is Scheme.IMEXQ:
        report.coupled_solves += M
    else:
        k = nu if scheme is Scheme.CISDCQ else 1
        report.diffusion_solves += k * M
        report.reaction_solves += k * M


def integrate(
    scheme,
    problem,
    dt,
    n_steps,
    M,
    n_sweeps,
    nu=None,
    stop_tol=None,
    phi0=None,
    convention=EulerConvention.CUMULATIVE,
    sweeper=None,
):
    """Advance ``n_steps`` time steps of size ``dt``.

    Each step starts from ``phi0`` spread over the nodes and runs ``n_sweeps``
    sweeps, stopping early once the final-node increment drops to
    ``stop_tol``.  ``sweeper`` may replace the sweep function (the pipelined
    executor plugs in here); it receives ``(state, tables, problem, dt)``.

    Returns
    -------
    IntegrationResult
        Final node value, the last step's state and one :class:`SweepReport`
        per step.
    """
    scheme, nu = parse_scheme(scheme, nu)
    if n_sweeps < 1:
        raise InvalidArgumentError("n_sweeps must be >= 1")
    if n_steps < 0:
        raise InvalidArgumentError("n_steps must be >= 0")
    if scheme is Scheme.CISDCQ and (nu is None or nu < 1):
        raise InvalidArgumentError("cisdcq needs nu >= 1")
    tables = build_tables(M, convention)
    phi = np.array(problem.initial_value() if phi0 is None else phi0, dtype=float)
    if sweeper is None:
        def sweeper(st, tb, pb, h):
            return sweep(scheme, st, tb, pb, h, nu)

    reports = []
    state = initial_state(problem, phi, M)
    for step in range(n_steps):
        state = initial_state(problem, phi, M)
        report = SweepReport()
        for k in range(n_sweeps):
            try:
                state = sweeper(state, tables, problem, dt)
            except StageError as exc:
                exc.step, exc.sweep = step, k + 1
                raise
            _count_solves(report, scheme, M, nu)
            inc = state.increment()
            report.increments.append(inc)
            if stop_tol is not None and inc <= stop_tol:
                break
        reports.append(report)
        phi = state.phi[M]
    return IntegrationResult(phi=phi, state=state, reports=reports)
