"""Gauss-Lobatto nodes and the SDC integration matrices.

All matrices are normalized by the step size, i.e. they integrate over the
unit interval ``[0, 1]``.  Row ``m`` (0-based) of every ``M x .`` matrix
belongs to node ``m + 1``; column ``j`` of ``Q``/``S`` belongs to node ``j``,
while column ``j`` of the ``M x M`` blocks belongs to node ``j + 1``.
"""

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as L

from .errors import FactorizationError, InvalidArgumentError
from .linalg import lu_factor_dense

__all__ = [
    "EulerConvention",
    "NodeSet",
    "QuadratureTables",
    "gauss_lobatto_nodes",
    "build_Q",
    "build_S",
    "build_QtI",
    "build_QtE",
    "build_tables",
]


class EulerConvention(str, Enum):
    """How the explicit forward-Euler matrix is populated.

    ``CUMULATIVE`` (default) writes composite forward Euler from node 0, so
    row ``m + 1`` holds ``dtau[1..m]`` in columns ``1..m``; this is the
    zero-to-node form of node-to-node forward Euler.  ``LITERAL`` keeps only
    the sub-diagonal entry ``dtau[m]`` in row ``m + 1``.
    """

    LITERAL = "literal"
    CUMULATIVE = "cumulative"


@dataclass(frozen=True)
class NodeSet:
    M: int
    tau: np.ndarray
    dtau: np.ndarray


@dataclass(frozen=True)
class QuadratureTables:
    """Node set plus the integration matrices shared by every sweep scheme."""

    nodes: NodeSet
    Q: np.ndarray
    q: np.ndarray
    Qt: np.ndarray
    S: np.ndarray
    QtI: np.ndarray
    QtE: np.ndarray
    euler_convention: EulerConvention

    @property
    def M(self):
        return self.nodes.M


def gauss_lobatto_nodes(M):
    """Gauss-Lobatto points on ``[0, 1]`` splitting the step into ``M`` subintervals.

    The interior points are the roots of ``P_M'``, polished with a few Newton
    steps and symmetrized so that ``tau[j] + tau[M - j] == 1`` holds exactly.
    """
    if int(M) != M or M < 1:
        raise InvalidArgumentError(f"M must be a positive integer, got {M!r}")
    M = int(M)
    x = np.empty(M + 1)
    x[0], x[-1] = -1.0, 1.0
    if M > 1:
        dP = L.legder(np.eye(M + 1)[M])
        d2P = L.legder(dP)
        roots = np.sort(L.legroots(dP).real)
        for _ in range(3):
            roots = roots - L.legval(roots, dP) / L.legval(roots, d2P)
        x[1:-1] = roots
    tau = 0.5 * (x + 1.0)
    tau = 0.5 * (tau + (1.0 - tau[::-1]))
    tau[0], tau[-1] = 0.0, 1.0
    return NodeSet(M=M, tau=tau, dtau=np.diff(tau))


def _lagrange_values(tau, x):
    """``V[i, j] = L_j(x[i])`` via the barycentric formula."""
    w = np.array([1.0 / np.prod(tau[j] - np.delete(tau, j)) for j in range(len(tau))])
    V = np.empty((len(x), len(tau)))
    for i, xi in enumerate(x):
        diff = xi - tau
        hit = diff == 0
        if hit.any():
            V[i] = hit.astype(float)
        else:
            t = w / diff
            V[i] = t / t.sum()
    return V


def _subinterval_weights(nodes):
    # Gauss-Legendre with M + 1 points is exact on the degree-M basis and
    # far better conditioned than integrating monomial expansions.
    g, gw = L.leggauss(nodes.M + 1)
    S = np.empty((nodes.M, nodes.M + 1))
    for m in range(nodes.M):
        lo, hi = nodes.tau[m], nodes.tau[m + 1]
        x = lo + 0.5 * (hi - lo) * (g + 1.0)
        S[m] = 0.5 * (hi - lo) * (gw @ _lagrange_values(nodes.tau, x))
    return S


def build_Q(nodes):
    """Zero-to-node weights ``q[m, j] = int_0^{tau[m+1]} L_j``.

    Returns
    -------
    Q : ndarray, shape (M, M + 1)
    q : ndarray, shape (M,)
        First column of ``Q``.
    """
    Q = np.cumsum(_subinterval_weights(nodes), axis=0)
    return Q, Q[:, 0].copy()


def build_S(nodes):
    """Node-to-node weights ``s[m, j] = int_{tau[m]}^{tau[m+1]} L_j``."""
    return _subinterval_weights(nodes)


def build_QtI(Qt):
    """Implicit matrix: transpose of ``U`` in the unpivoted LU of ``Qt.T``."""
    try:
        factors = lu_factor_dense(np.asarray(Qt, dtype=float).T, pivoting=False)
    except FactorizationError as exc:
        raise FactorizationError(
            f"LU of the quadrature block failed: {exc}", pivot_index=exc.pivot_index
        ) from exc
    return factors.U.T.copy()


def build_QtE(nodes, convention=EulerConvention.CUMULATIVE):
    """Strictly lower-triangular forward-Euler matrix."""
    convention = EulerConvention(convention)
    M = nodes.M
    QtE = np.zeros((M, M))
    for m in range(1, M):
        if convention is EulerConvention.LITERAL:
            QtE[m, m - 1] = nodes.dtau[m]
        else:
            QtE[m, :m] = nodes.dtau[1:m + 1]
    return QtE


@lru_cache(maxsize=64)
def _cached_tables(M, convention):
    nodes = gauss_lobatto_nodes(M)
    Q, q = build_Q(nodes)
    Qt = Q[:, 1:].copy()
    S = build_S(nodes)
    QtI = build_QtI(Qt)
    QtE = build_QtE(nodes, convention)
    for arr in (nodes.tau, nodes.dtau, Q, q, Qt, S, QtI, QtE):
        arr.setflags(write=False)
    return QuadratureTables(nodes, Q, q, Qt, S, QtI, QtE, convention)


def build_tables(M, convention=EulerConvention.CUMULATIVE):
    """All integration matrices for ``M`` subintervals (cached, read-only)."""
    return _cached_tables(int(M), EulerConvention(convention))
