"""Symmetric indefinite LDL^T factorization with inertia.

Two interchangeable engines sit behind :func:`factorize`:

* ``"bk"`` is an in-repo Bunch-Kaufman factorization with 1x1 and 2x2
  symmetric pivots, written against a full dense matrix with vectorized
  trailing updates.  It is the default for small systems and the only piece
  of linear algebra in the stack we own end to end.
* ``"lapack"`` wraps dsytrf/dsytrs and takes over automatically for larger
  systems; in the test suite it doubles as the independent oracle for the
  in-repo engine.

Both report the inertia (positive, negative, zero eigenvalue counts), which
drives the solver's regularization loop.  Zero pivots are tolerated during
factorization and surface as zero inertia; attempting to solve with a
singular factorization raises.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import lapack as _lapack

_ALPHA = (1.0 + np.sqrt(17.0)) / 8.0
DENSE_DEFAULT_THRESHOLD = 500


class FactorizationError(RuntimeError):
    pass


@dataclass
class Factorization:
    n: int
    inertia: tuple[int, int, int]  # (positive, negative, zero)
    _solve_impl: object

    @property
    def singular(self) -> bool:
        return self.inertia[2] > 0

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Apply the factors to one or several right-hand sides."""
        if self.singular:
            raise FactorizationError("factorization is singular")
        return self._solve_impl(np.asarray(b, dtype=np.float64))


def _as_dense(matrix) -> np.ndarray:
    if sp.issparse(matrix):
        return np.asarray(matrix.todense(), dtype=np.float64)
    return np.array(matrix, dtype=np.float64, copy=True)


def _block_inertia(d_main, d_sub) -> tuple[int, int, int]:
    """Eigenvalue signs of a symmetric block-diagonal (1x1 / 2x2) matrix.

    Pivot signs give the exact inertia (Sylvester); a pivot counts as zero
    only when the factorization actually broke down on it, never by
    comparison against the matrix norm, which would misclassify the small
    pivots every ill-conditioned barrier system legitimately produces.
    """
    n = len(d_main)
    pos = neg = zero = 0
    k = 0
    while k < n:
        if k + 1 < n and d_sub[k] != 0.0:
            a, b, c = d_main[k], d_sub[k], d_main[k + 1]
            det = a * c - b * b
            tr = a + c
            if det == 0.0:
                zero += 1
                pos += 1 if tr > 0 else 0
                neg += 1 if tr < 0 else 0
                zero += 1 if tr == 0 else 0
            elif det < 0:
                pos += 1
                neg += 1
            elif tr > 0:
                pos += 2
            else:
                neg += 2
            k += 2
        else:
            d = d_main[k]
            if d == 0.0:
                zero += 1
            elif d > 0:
                pos += 1
            else:
                neg += 1
            k += 1
    return pos, neg, zero


def _factor_bk(A: np.ndarray) -> Factorization:
    """Bunch-Kaufman with partial pivoting on a full symmetric matrix."""
    M = A.copy()
    n = M.shape[0]
    perm = np.arange(n)
    L = np.eye(n)
    d_main = np.zeros(n)
    d_sub = np.zeros(max(n - 1, 0))

    def swap(i, j, built):
        if i == j:
            return
        M[[i, j], :] = M[[j, i], :]
        M[:, [i, j]] = M[:, [j, i]]
        perm[[i, j]] = perm[[j, i]]
        if built:
            L[[i, j], :built] = L[[j, i], :built]

    k = 0
    while k < n:
        kstep = 1
        absakk = abs(M[k, k])
        if k + 1 < n:
            rel = np.argmax(np.abs(M[k + 1:, k]))
            imax = k + 1 + int(rel)
            colmax = abs(M[imax, k])
        else:
            imax, colmax = k, 0.0
        if max(absakk, colmax) == 0.0:
            d_main[k] = 0.0  # structurally zero column; recorded in inertia
            k += 1
            continue
        if absakk >= _ALPHA * colmax:
            kp = k
        else:
            row = np.abs(M[imax, k:imax])
            col = np.abs(M[imax + 1:, imax]) if imax + 1 < n else np.zeros(0)
            rowmax = max(row.max() if len(row) else 0.0,
                         col.max() if len(col) else 0.0)
            if absakk * rowmax >= _ALPHA * colmax * colmax:
                kp = k
            elif abs(M[imax, imax]) >= _ALPHA * rowmax:
                kp = imax
            else:
                kp = imax
                kstep = 2
        kk = k + kstep - 1
        swap(kp, kk, k)
        if kstep == 1:
            d = M[k, k]
            d_main[k] = d
            if k + 1 < n:
                col = M[k + 1:, k] / d
                M[k + 1:, k + 1:] -= np.outer(col, M[k + 1:, k])
                L[k + 1:, k] = col
            k += 1
        else:
            a, b, c = M[k, k], M[k + 1, k], M[k + 1, k + 1]
            d_main[k], d_sub[k], d_main[k + 1] = a, b, c
            det = a * c - b * b
            if k + 2 < n:
                W = M[k + 2:, k:k + 2].copy()
                # inv([[a, b], [b, c]]) applied from the right
                Lcols = np.column_stack((
                    (W[:, 0] * c - W[:, 1] * b) / det,
                    (W[:, 1] * a - W[:, 0] * b) / det,
                ))
                M[k + 2:, k + 2:] -= Lcols @ W.T
                L[k + 2:, k] = Lcols[:, 0]
                L[k + 2:, k + 1] = Lcols[:, 1]
            k += 2

    inertia = _block_inertia(d_main, d_sub)

    def solve(b: np.ndarray) -> np.ndarray:
        one_d = b.ndim == 1
        rhs = b.reshape(len(b), -1)[perm]
        y = sla.solve_triangular(L, rhs, lower=True, unit_diagonal=True)
        z = np.empty_like(y)
        i = 0
        while i < n:
            if i + 1 < n and d_sub[i] != 0.0:
                a, bb, c = d_main[i], d_sub[i], d_main[i + 1]
                det = a * c - bb * bb
                z[i] = (c * y[i] - bb * y[i + 1]) / det
                z[i + 1] = (a * y[i + 1] - bb * y[i]) / det
                i += 2
            else:
                z[i] = y[i] / d_main[i]
                i += 1
        w = sla.solve_triangular(L.T, z, lower=False, unit_diagonal=True)
        out = np.empty_like(w)
        out[perm] = w
        return out[:, 0] if one_d else out

    return Factorization(n, inertia, solve)


def _factor_lapack(A: np.ndarray) -> Factorization:
    n = A.shape[0]
    ldu, ipiv, info = _lapack.dsytrf(A, lower=1)
    if info < 0:
        raise FactorizationError(f"dsytrf illegal argument {-info}")
    d_main = np.diag(ldu).copy()
    d_sub = np.zeros(max(n - 1, 0))
    k = 0
    while k < n:
        if ipiv[k] < 0:
            d_sub[k] = ldu[k + 1, k]
            k += 2
        else:
            k += 1
    if info > 0:
        d_main[info - 1] = 0.0  # exact zero pivot reported by LAPACK
    inertia = _block_inertia(d_main, d_sub)

    def solve(b: np.ndarray) -> np.ndarray:
        x, sinfo = _lapack.dsytrs(ldu, ipiv, b, lower=1)
        if sinfo != 0:
            raise FactorizationError(f"dsytrs failed with info {sinfo}")
        return x

    return Factorization(n, inertia, solve)


def factorize(matrix, method: str = "auto",
              dense_threshold: int = DENSE_DEFAULT_THRESHOLD) -> Factorization:
    """LDL^T with symmetric 1x1/2x2 pivoting; reports inertia.

    ``method``: "bk" (in-repo Bunch-Kaufman), "lapack", or "auto" which uses
    the in-repo engine up to ``dense_threshold`` rows and LAPACK beyond.
    """
    A = _as_dense(matrix)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise FactorizationError("matrix must be square")
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(A).max() if A.size else 1.0)):
        raise FactorizationError("matrix must be symmetric")
    if method == "auto":
        method = "bk" if A.shape[0] <= dense_threshold else "lapack"
    if method == "bk":
        return _factor_bk(A)
    if method == "lapack":
        return _factor_lapack(A)
    raise FactorizationError(f"unknown factorization method {method!r}")
