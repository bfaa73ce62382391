"""Limited-memory BFGS approximation of the Lagrangian Hessian.

Maintains the direct (not inverse) approximation B in the compact outer
product form

    B = sigma I - [sigma S, Y] M^{-1} [sigma S, Y]^T,
    M = [[sigma S^T S, L], [L^T, -D]],

with S and Y the stored step / gradient-difference pairs, D the diagonal of
s_i^T y_i, L the strictly lower triangle of S^T Y, and sigma the curvature
scaling y^T y / s^T y of the newest pair.  Raw pairs failing the curvature
test are repaired by Powell damping, so B stays positive definite and every
update is usable; hopeless pairs (zero step) are skipped and counted.
"""

from __future__ import annotations

import numpy as np


class LbfgsHessian:
    def __init__(self, dim: int, memory: int = 6, init_scale: float = 1.0):
        if memory < 1:
            raise ValueError("memory must be at least 1")
        self.dim = dim
        self.memory = memory
        self.sigma = float(init_scale)
        self._s: list[np.ndarray] = []
        self._y: list[np.ndarray] = []
        self.skipped = 0
        self.damped = 0
        self._refresh()

    def __len__(self) -> int:
        return len(self._s)

    def _refresh(self) -> None:
        m = len(self._s)
        if m == 0:
            self._phi = None
            return
        S = np.column_stack(self._s)
        Y = np.column_stack(self._y)
        StS = S.T @ S
        StY = S.T @ Y
        D = np.diag(np.diag(StY))
        L = np.tril(StY, -1)
        M = np.block([[self.sigma * StS, L], [L.T, -D]])
        self._phi = np.hstack([self.sigma * S, Y])
        self._M = M

    def reset(self) -> None:
        """Drop all stored pairs; the approximation restarts from sigma I."""
        self._s.clear()
        self._y.clear()
        self._refresh()

    def update(self, s: np.ndarray, y: np.ndarray) -> bool:
        """Insert a (step, gradient-difference) pair, damping if needed."""
        s = np.asarray(s, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if s.shape != (self.dim,) or y.shape != (self.dim,):
            raise ValueError("pair dimension mismatch")
        snorm = np.linalg.norm(s)
        if not np.isfinite(snorm) or snorm < 1e-12 or not np.isfinite(y).all():
            self.skipped += 1
            return False
        Bs = self.matvec(s)
        sBs = float(s @ Bs)
        if not np.isfinite(sBs) or sBs <= 0:
            self.skipped += 1
            return False
        sy = float(s @ y)
        if sy < 0.2 * sBs:
            theta = 0.8 * sBs / (sBs - sy)
            y = theta * y + (1.0 - theta) * Bs
            sy = float(s @ y)
            self.damped += 1
        self._s.append(s.copy())
        self._y.append(y.copy())
        if len(self._s) > self.memory:
            self._s.pop(0)
            self._y.pop(0)
        self.sigma = float(np.clip((y @ y) / sy, 1e-8, 1e8))
        self._refresh()
        return True

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if self._phi is None:
            return self.sigma * v
        try:
            t = np.linalg.solve(self._M, self._phi.T @ v)
        except np.linalg.LinAlgError:
            return self.sigma * v
        return self.sigma * v - self._phi @ t

    def matrix(self) -> np.ndarray:
        """Dense B for direct insertion into a KKT system."""
        B = self.sigma * np.eye(self.dim)
        if self._phi is None:
            return B
        try:
            T = np.linalg.solve(self._M, self._phi.T)
        except np.linalg.LinAlgError:
            return B
        B -= self._phi @ T
        return 0.5 * (B + B.T)
