"""Factor-once, solve-many backends for the Newton iteration matrix ``I - gamma J``.

Jacobian formats by structure:

* ``dense``: ``(d, d)`` ndarray.
* ``banded(l, u)``: ``(l + u + 1, d)`` array in :func:`scipy.linalg.solve_banded`
  layout, ``ab[u + i - j, j] == J[i, j]``.
* ``sparse``: any scipy sparse matrix whose nonzeros lie inside ``pattern``.
"""

from dataclasses import dataclass
import warnings

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from ._accel import USE_NUMBA, jit


class FactorizationError(ArithmeticError):
    """The iteration matrix is numerically singular."""


@dataclass(frozen=True, eq=False)
class Structure:
    kind: str = "dense"
    lower: int = 0
    upper: int = 0
    pattern: object = None

    def __post_init__(self):
        if self.kind not in ("dense", "banded", "sparse"):
            raise ValueError(f"unknown Jacobian structure {self.kind!r}")
        if self.kind == "sparse" and self.pattern is None:
            raise ValueError("sparse structure needs a sparsity pattern")
        if self.kind == "sparse":
            pat = scipy.sparse.csc_matrix(self.pattern, dtype=float)
            pat.data[:] = 1.0
            object.__setattr__(self, "pattern", pat)

    def __repr__(self):
        if self.kind == "banded":
            return f"banded({self.lower},{self.upper})"
        return self.kind


DENSE = Structure("dense")


def banded(lower, upper):
    return Structure("banded", int(lower), int(upper))


def sparse(pattern):
    return Structure("sparse", pattern=pattern)


def banded_to_dense(ab, lower, upper):
    """Expand ``solve_banded`` layout to a full matrix."""
    n = ab.shape[1]
    out = np.zeros((n, n), dtype=ab.dtype)
    for k in range(-lower, upper + 1):
        row = upper - k
        if k >= 0:
            out[np.arange(n - k), np.arange(k, n)] = ab[row, k:]
        else:
            out[np.arange(-k, n), np.arange(n + k)] = ab[row, : n + k]
    return out


def to_dense(J, structure):
    if structure.kind == "banded":
        return banded_to_dense(np.asarray(J), structure.lower, structure.upper)
    if scipy.sparse.issparse(J):
        return J.toarray()
    return np.asarray(J)


# Banded LU with partial pivoting (LAPACK gbtrf/gbtrs storage: 2*kl + ku + 1 rows)

@jit
def _gbtrf_kernel(ab, kl, ku):
    n = ab.shape[1]
    kv = kl + ku
    ipiv = np.empty(n, np.int64)
    for j in range(n):
        km = min(kl, n - 1 - j)
        p = j
        best = abs(ab[kv, j])
        for i in range(1, km + 1):
            v = abs(ab[kv + i, j])
            if v > best:
                best = v
                p = j + i
        ipiv[j] = p
        if best == 0.0:
            return ipiv, j + 1
        ju = min(j + kv, n - 1)
        if p != j:
            for c in range(j, ju + 1):
                tmp = ab[kv + j - c, c]
                ab[kv + j - c, c] = ab[kv + p - c, c]
                ab[kv + p - c, c] = tmp
        piv = ab[kv, j]
        for i in range(1, km + 1):
            ab[kv + i, j] /= piv
        for c in range(j + 1, ju + 1):
            t = ab[kv + j - c, c]
            if t != 0.0:
                for i in range(1, km + 1):
                    ab[kv + j + i - c, c] -= ab[kv + i, j] * t
    return ipiv, 0


@jit
def _gbtrs_kernel(ab, kl, ku, ipiv, b):
    n = ab.shape[1]
    kv = kl + ku
    x = b.copy()
    for j in range(n):
        p = ipiv[j]
        if p != j:
            tmp = x[j]
            x[j] = x[p]
            x[p] = tmp
        km = min(kl, n - 1 - j)
        for i in range(1, km + 1):
            x[j + i] -= ab[kv + i, j] * x[j]
    for j in range(n - 1, -1, -1):
        x[j] /= ab[kv, j]
        for i in range(max(0, j - kv), j):
            x[i] -= ab[kv + i - j, j] * x[j]
    return x


class DenseBackend:
    """LU with partial pivoting (LAPACK getrf)."""

    def factor(self, J, gamma):
        J = np.asarray(J)
        mat = np.eye(J.shape[0], dtype=np.result_type(J, gamma, float)) - gamma * J
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(mat, check_finite=False)
        diag = np.abs(np.diag(lu))
        if not np.all(np.isfinite(diag)) or diag.min() <= np.finfo(float).eps * max(diag.max(), 1.0):
            raise FactorizationError("iteration matrix is numerically singular")
        self._lu = (lu, piv)

    def solve(self, b):
        return scipy.linalg.lu_solve(self._lu, b, check_finite=False)


class BandedBackend:
    """Banded LU with partial pivoting; numba kernel or LAPACK gbtrf/gbtrs."""

    def __init__(self, lower, upper, use_numba=None):
        self.kl, self.ku = lower, upper
        self.use_numba = USE_NUMBA if use_numba is None else use_numba

    def factor(self, J, gamma):
        kl, ku = self.kl, self.ku
        J = np.asarray(J)
        n = J.shape[1]
        dtype = np.result_type(J, gamma, float)
        lab = np.zeros((2 * kl + ku + 1, n), dtype=dtype)
        lab[kl:] = -gamma * J
        lab[kl + ku] += 1.0
        if self.use_numba and dtype == np.float64:
            ipiv, info = _gbtrf_kernel(lab, kl, ku)
            self._solver = "kernel"
        else:
            gbtrf, gbtrs = scipy.linalg.get_lapack_funcs(("gbtrf", "gbtrs"), (lab,))
            lab, ipiv, info = gbtrf(lab, kl, ku)
            self._lapack = gbtrs
            self._solver = "lapack"
        if info > 0:
            raise FactorizationError(f"zero pivot in column {info}")
        diag = np.abs(lab[kl + ku])
        if not np.all(np.isfinite(diag)) or diag.min() <= np.finfo(float).eps * max(diag.max(), 1.0):
            raise FactorizationError("iteration matrix is numerically singular")
        self._lab, self._ipiv = lab, ipiv

    def solve(self, b):
        if self._solver == "kernel":
            return _gbtrs_kernel(self._lab, self.kl, self.ku, self._ipiv, np.asarray(b, dtype=float))
        x, info = self._lapack(self._lab, self.kl, self.ku, b, self._ipiv)
        return x


class SparseBackend:
    """SuperLU on ``I - gamma J``; the assembled pattern stays fixed across refactorizations."""

    def __init__(self, pattern):
        self.pattern = pattern
        n = pattern.shape[0]
        self._eye = scipy.sparse.identity(n, format="csc")
        # fixed union pattern of I and J so every refactorization sees the same structure
        self._template = (self._eye + pattern).tocsc()
        self._template.sort_indices()

    def factor(self, J, gamma):
        J = scipy.sparse.csc_matrix(J)
        mat = (self._eye - gamma * J).tocsc()
        mat = mat + 0.0 * self._template
        try:
            self._lu = scipy.sparse.linalg.splu(mat.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise FactorizationError(str(exc)) from exc
        diag = np.abs(self._lu.U.diagonal())
        if not np.all(np.isfinite(diag)) or diag.min() <= np.finfo(float).eps * max(diag.max(), 1.0):
            raise FactorizationError("iteration matrix is numerically singular")

    def solve(self, b):
        return self._lu.solve(np.asarray(b))


def linear_backend(structure, use_numba=None):
    """Return a fresh factor/solve handle for ``I - gamma J`` of the given structure."""
    if structure.kind == "dense":
        return DenseBackend()
    if structure.kind == "banded":
        return BandedBackend(structure.lower, structure.upper, use_numba=use_numba)
    return SparseBackend(structure.pattern)
