"""Small dense and banded linear algebra used by the sweep schemes.

Everything here works on plain numpy arrays.  The matrices involved are tiny
(quadrature blocks of size ``M <= 8``) or narrow banded (implicit diffusion),
so the routines favour robustness and transparent arithmetic over speed.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import (
    FactorizationError,
    InvalidArgumentError,
    NoConvergenceError,
    NumericError,
    SingularJacobianError,
    SolveError,
)

__all__ = [
    "LUFactors",
    "lu_factor_dense",
    "lu_solve_dense",
    "BandedMatrix",
    "BandedLU",
    "banded_factor",
    "banded_solve",
    "hessenberg",
    "eigenvalues",
    "spectral_radius",
    "newton_scalar",
    "newton_elementwise",
    "bisection",
]


def _as_square(A):
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
        raise InvalidArgumentError(f"expected a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidArgumentError("matrix has non-finite entries")
    return A


# ---------------------------------------------------------------------------
# Dense LU
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LUFactors:
    """Doolittle factors ``P A = L U`` with unit-diagonal ``L``.

    ``perm[i]`` is the row of ``A`` that ended up in row ``i``; it is the
    identity permutation when the factorization was computed without pivoting.
    """

    L: np.ndarray
    U: np.ndarray
    perm: np.ndarray

    @property
    def P(self):
        n = len(self.perm)
        P = np.zeros((n, n))
        P[np.arange(n), self.perm] = 1.0
        return P


def lu_factor_dense(A, pivoting=False):
    """LU-factorize a square matrix by Doolittle elimination.

    Parameters
    ----------
    A : array_like, shape (n, n)
    pivoting : bool
        Use partial (row) pivoting.  Without pivoting a zero pivot raises
        :class:`FactorizationError` rather than silently permuting rows.

    Returns
    -------
    LUFactors
    """
    U = _as_square(A)
    n = U.shape[0]
    L = np.eye(n)
    perm = np.arange(n)
    for k in range(n):
        if pivoting:
            p = k + int(np.argmax(np.abs(U[k:, k])))
            if p != k:
                U[[k, p], :] = U[[p, k], :]
                L[[k, p], :k] = L[[p, k], :k]
                perm[[k, p]] = perm[[p, k]]
        pivot = U[k, k]
        if pivot == 0.0:
            raise FactorizationError(f"zero pivot at index {k}", pivot_index=k)
        for i in range(k + 1, n):
            factor = U[i, k] / pivot
            L[i, k] = factor
            U[i, k:] -= factor * U[k, k:]
            U[i, k] = 0.0
    return LUFactors(L=L, U=U, perm=perm)


def lu_solve_dense(factors, b):
    """Solve ``A x = b`` given :func:`lu_factor_dense` output."""
    L, U = factors.L, factors.U
    n = L.shape[0]
    y = np.array(b, dtype=float)[factors.perm]
    for i in range(n):
        y[i] -= L[i, :i] @ y[:i]
    for i in range(n - 1, -1, -1):
        y[i] = (y[i] - U[i, i + 1:] @ y[i + 1:]) / U[i, i]
    return y


# ---------------------------------------------------------------------------
# Banded systems
# ---------------------------------------------------------------------------


class BandedMatrix:
    """Square matrix stored by diagonals.

    ``bands[i, lower + (j - i)]`` holds ``A[i, j]`` for ``-lower <= j - i <= upper``;
    slots falling outside the matrix are kept at zero.
    """

    def __init__(self, bands, lower, upper):
        bands = np.array(bands, dtype=float)
        n = bands.shape[0]
        if bands.ndim != 2 or bands.shape[1] != lower + upper + 1:
            raise InvalidArgumentError("band storage must have shape (n, lower + upper + 1)")
        if lower < 0 or upper < 0 or (n > 1 and (lower >= n or upper >= n)):
            raise InvalidArgumentError(f"bandwidths ({lower}, {upper}) invalid for n={n}")
        self.bands = bands
        self.lower = lower
        self.upper = upper
        self.n = n

    @classmethod
    def from_dense(cls, A, lower, upper):
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        bands = np.zeros((n, lower + upper + 1))
        for i in range(n):
            for j in range(max(0, i - lower), min(n, i + upper + 1)):
                bands[i, lower + j - i] = A[i, j]
        return cls(bands, lower, upper)

    @classmethod
    def from_diagonals(cls, diagonals, n):
        """Build from ``{offset: value-or-array}``; arrays are indexed by row."""
        lower = max(0, -min(diagonals))
        upper = max(0, max(diagonals))
        bands = np.zeros((n, lower + upper + 1))
        rows = np.arange(n)
        for offset, values in diagonals.items():
            values = np.broadcast_to(np.asarray(values, dtype=float), (n,))
            valid = (rows + offset >= 0) & (rows + offset < n)
            bands[valid, lower + offset] = values[valid]
        return cls(bands, lower, upper)

    def to_dense(self):
        n = self.n
        A = np.zeros((n, n))
        for i in range(n):
            for j in range(max(0, i - self.lower), min(n, i + self.upper + 1)):
                A[i, j] = self.bands[i, self.lower + j - i]
        return A

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        y = np.zeros(self.n)
        for offset in range(-self.lower, self.upper + 1):
            col = self.bands[:, self.lower + offset]
            lo, hi = max(0, -offset), min(self.n, self.n - offset)
            y[lo:hi] += col[lo:hi] * x[lo + offset:hi + offset]
        return y


class BandedLU:
    """LU factors of a :class:`BandedMatrix` (no pivoting), reusable across solves."""

    def __init__(self, lower_rows, upper_rows, lower, upper):
        self._L = lower_rows
        self._U = upper_rows
        self.lower = lower
        self.upper = upper
        self.n = len(upper_rows)

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape != (self.n,):
            raise InvalidArgumentError(f"right-hand side must have shape ({self.n},)")
        n = self.n
        y = b.tolist()
        L, U = self._L, self._U
        for i in range(n):
            acc = y[i]
            row = L[i]
            for t, lij in enumerate(row):
                acc -= lij * y[i - len(row) + t]
            y[i] = acc
        x = [0.0] * n
        for i in range(n - 1, -1, -1):
            row = U[i]
            acc = y[i]
            for t in range(1, len(row)):
                acc -= row[t] * x[i + t]
            x[i] = acc / row[0]
        return np.array(x)


def banded_factor(A):
    """Factor a banded matrix without pivoting.

    The implicit-diffusion matrices are diagonally dominant, for which
    elimination without row exchanges is stable and keeps the band width.

    Raises
    ------
    SolveError
        On a zero (or non-finite) pivot.
    """
    n, kl, ku = A.n, A.lower, A.upper
    # Work row by row on a copy of the band: row i holds columns i-kl .. i+ku.
    rows = [dict() for _ in range(n)]
    for i in range(n):
        for j in range(max(0, i - kl), min(n, i + ku + 1)):
            rows[i][j] = float(A.bands[i, kl + j - i])
    lower_rows = []
    for k in range(n):
        pivot = rows[k][k]
        if pivot == 0.0 or not math.isfinite(pivot):
            raise SolveError(f"singular banded system: zero pivot at row {k}", index=k)
        for i in range(k + 1, min(n, k + kl + 1)):
            factor = rows[i].get(k, 0.0) / pivot
            rows[i][k] = factor
            if factor != 0.0:
                for j in range(k + 1, min(n, k + ku + 1)):
                    rows[i][j] = rows[i].get(j, 0.0) - factor * rows[k][j]
    upper_rows = []
    for i in range(n):
        lower_rows.append([rows[i][j] for j in range(max(0, i - kl), i)])
        upper_rows.append([rows[i][j] for j in range(i, min(n, i + ku + 1))])
    return BandedLU(lower_rows, upper_rows, kl, ku)


def banded_solve(A, b):
    """Solve ``A x = b`` for a :class:`BandedMatrix` ``A``."""
    return banded_factor(A).solve(b)


# ---------------------------------------------------------------------------
# Eigenvalues
# ---------------------------------------------------------------------------


def hessenberg(A):
    """Reduce ``A`` to upper Hessenberg form by Householder similarity transforms."""
    H = _as_square(A)
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1:, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x
        v[0] += math.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        H[k + 1:, :] -= 2.0 * np.outer(v, v @ H[k + 1:, :])
        H[:, k + 1:] -= 2.0 * np.outer(H[:, k + 1:] @ v, v)
        H[k + 2:, k] = 0.0
    return H


def eigenvalues(A, max_iter=None):
    """All eigenvalues of a real square matrix.

    Hessenberg reduction followed by the Francis double-shift QR iteration
    with exceptional shifts every ten iterations.  The iteration cap counts
    QR steps over the whole matrix and defaults to ``10_000 * n``.

    Raises
    ------
    NumericError
        If the QR iteration does not deflate within the cap; ``residual``
        carries the magnitude of the last undeflated subdiagonal entry.
    """
    H = hessenberg(A)
    n = H.shape[0]
    if max_iter is None:
        max_iter = 10_000 * n
    # 1-based working copy keeps the index arithmetic of the classic algorithm.
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = H
    wr = np.zeros(n + 1)
    wi = np.zeros(n + 1)
    anorm = 0.0
    for i in range(1, n + 1):
        for j in range(max(i - 1, 1), n + 1):
            anorm += abs(a[i, j])
    nn = n
    t = 0.0
    total = 0
    x = y = w = 0.0
    while nn >= 1:
        its = 0
        while True:
            l = nn
            while l >= 2:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) + s == s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
            else:
                y = a[nn - 1, nn - 1]
                w = a[nn, nn - 1] * a[nn - 1, nn]
                if l == nn - 1:
                    p = 0.5 * (y - x)
                    q = p * p + w
                    z = math.sqrt(abs(q))
                    x += t
                    if q >= 0.0:
                        z = p + math.copysign(z, p)
                        wr[nn - 1] = wr[nn] = x + z
                        if z != 0.0:
                            wr[nn] = x - w / z
                        wi[nn - 1] = wi[nn] = 0.0
                    else:
                        wr[nn - 1] = wr[nn] = x + p
                        wi[nn - 1] = -z
                        wi[nn] = z
                    nn -= 2
                else:
                    if total >= max_iter:
                        raise NumericError(
                            f"QR iteration did not converge in {max_iter} steps",
                            residual=abs(a[nn, nn - 1]),
                        )
                    if its > 0 and its % 10 == 0:
                        t += x
                        for i in range(1, nn + 1):
                            a[i, i] -= x
                        s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                        y = x = 0.75 * s
                        w = -0.4375 * s * s
                    its += 1
                    total += 1
                    m = nn - 2
                    while m >= l:
                        z = a[m, m]
                        r = x - z
                        s = y - z
                        p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                        q = a[m + 1, m + 1] - z - r - s
                        r = a[m + 2, m + 1]
                        s = abs(p) + abs(q) + abs(r)
                        p /= s
                        q /= s
                        r /= s
                        if m == l:
                            break
                        u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                        v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                        if u + v == v:
                            break
                        m -= 1
                    for i in range(m + 2, nn + 1):
                        a[i, i - 2] = 0.0
                        if i != m + 2:
                            a[i, i - 3] = 0.0
                    for k in range(m, nn):
                        if k != m:
                            p = a[k, k - 1]
                            q = a[k + 1, k - 1]
                            r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                            x = abs(p) + abs(q) + abs(r)
                            if x != 0.0:
                                p /= x
                                q /= x
                                r /= x
                        s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                        if s != 0.0:
                            if k == m:
                                if l != m:
                                    a[k, k - 1] = -a[k, k - 1]
                            else:
                                a[k, k - 1] = -s * x
                            p += s
                            x = p / s
                            y = q / s
                            z = r / s
                            q /= p
                            r /= p
                            for j in range(k, nn + 1):
                                p = a[k, j] + q * a[k + 1, j]
                                if k != nn - 1:
                                    p += r * a[k + 2, j]
                                    a[k + 2, j] -= p * z
                                a[k + 1, j] -= p * y
                                a[k, j] -= p * x
                            mmin = min(nn, k + 3)
                            for i in range(l, mmin + 1):
                                p = x * a[i, k] + y * a[i, k + 1]
                                if k != nn - 1:
                                    p += z * a[i, k + 2]
                                    a[i, k + 2] -= p * r
                                a[i, k + 1] -= p * q
                                a[i, k] -= p
            if not l < nn - 1:
                break
    return wr[1:] + 1j * wi[1:]


def spectral_radius(A):
    """Largest eigenvalue magnitude of a real square matrix (``n <= 64``)."""
    A = _as_square(A)
    if A.shape[0] > 64:
        raise InvalidArgumentError("spectral_radius is intended for matrices with n <= 64")
    return float(np.max(np.abs(eigenvalues(A))))


# ---------------------------------------------------------------------------
# Scalar root finding
# ---------------------------------------------------------------------------


def newton_scalar(f, df, guess, tol=1e-14, max_iter=50):
    """Newton's method for a scalar equation ``f(x) = 0``.

    Stops when ``|f(x)| <= tol`` or the step satisfies ``|dx| <= tol * (1 + |x|)``.
    """
    x = float(guess)
    for _ in range(max_iter):
        fx = f(x)
        if abs(fx) <= tol:
            return x
        dfx = df(x)
        if abs(dfx) < 1e-300:
            raise SingularJacobianError(f"derivative vanished at x={x!r}", residual=abs(fx))
        step = fx / dfx
        x -= step
        if abs(step) <= tol * (1.0 + abs(x)):
            return x
    raise NoConvergenceError(f"Newton did not converge in {max_iter} iterations", residual=abs(f(x)))


def newton_elementwise(f, df, guess, tol=1e-14, max_iter=50):
    """Apply :func:`newton_scalar` independently to every entry of an array.

    ``f`` and ``df`` act entrywise; each entry uses the same stopping rule as the
    scalar routine and is frozen once it has converged.

    Raises
    ------
    SolveError
        With ``index`` set to the first entry that failed.
    """
    x = np.array(guess, dtype=float)
    active = np.ones(x.shape, dtype=bool)
    for _ in range(max_iter):
        fx = f(x)
        done = np.abs(fx) <= tol
        active &= ~done
        if not active.any():
            return x
        dfx = df(x)
        singular = active & (np.abs(dfx) < 1e-300)
        if singular.any():
            idx = int(np.flatnonzero(singular)[0])
            raise SolveError(f"singular Newton derivative in cell {idx}", index=idx)
        step = np.where(active, fx / np.where(active, dfx, 1.0), 0.0)
        x = x - step
        active &= ~(np.abs(step) <= tol * (1.0 + np.abs(x)))
        if not active.any():
            return x
    idx = int(np.flatnonzero(active)[0])
    raise SolveError(f"Newton did not converge in cell {idx}", index=idx)


def bisection(f, lo, hi, tol=1e-15, max_iter=200):
    """Plain bisection on a sign-changing bracket ``[lo, hi]``."""
    flo = f(lo)
    if flo == 0.0:
        return lo
    fhi = f(hi)
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise InvalidArgumentError("bisection bracket does not change sign")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0 or hi - lo <= tol * (1.0 + abs(mid)):
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)
