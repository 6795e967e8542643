"""Pre-factorized equality-constrained KKT systems and batched affine solves.

Both the behavioural QP and every projection iteration reduce to

    [[P, A^T], [A, 0]] [xi; nu] = eta

with a matrix that does not depend on the batch index, so it is LU-factorized
once and reused for any number of right-hand sides.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import FactorizationError, ParameterError

_count_lock = threading.Lock()
_factorizations = 0


def factorization_count() -> int:
    """Number of KKT factorizations performed in this process so far."""
    return _factorizations


def _bump():
    global _factorizations
    with _count_lock:
        _factorizations += 1


@dataclass(frozen=True)
class KktFactor:
    K: np.ndarray
    lu: tuple
    n_xi: int
    n_eq: int
    rho: float | None = None

    @property
    def dims(self) -> tuple[int, int]:
        return self.n_xi, self.n_eq

    def solve(self, eta: np.ndarray) -> np.ndarray:
        """Solve for a single stacked rhs (n,) or a batch (B, n)."""
        eta = np.asarray(eta, dtype=float)
        n = self.n_xi + self.n_eq
        if eta.shape[-1] != n:
            raise ParameterError(f"rhs must have length {n}, got {eta.shape[-1]}")
        if eta.ndim == 1:
            return scipy.linalg.lu_solve(self.lu, eta, check_finite=False)
        flat = eta.reshape(-1, n)
        sol = scipy.linalg.lu_solve(self.lu, flat.T, check_finite=False).T
        return sol.reshape(eta.shape)

    def solve_transposed(self, eta: np.ndarray) -> np.ndarray:
        """Solve with ``K^T`` (same batching rules as :meth:`solve`)."""
        eta = np.asarray(eta, dtype=float)
        n = self.n_xi + self.n_eq
        flat = eta.reshape(-1, n)
        sol = scipy.linalg.lu_solve(self.lu, flat.T, trans=1, check_finite=False).T
        return sol.reshape(eta.shape)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.n_xi + self.n_eq))


@dataclass
class QpSolution:
    xi: np.ndarray
    nu: np.ndarray


def factor_kkt(P: np.ndarray, A: np.ndarray, rho: float | None = None, rank_tol: float = 1e-10) -> KktFactor:
    """Factorize ``[[P, A^T], [A, 0]]`` after checking it is nonsingular."""
    P = np.asarray(P, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = P.shape[0]
    if P.shape != (n, n):
        raise ParameterError(f"cost block must be square, got {P.shape}")
    if A.size == 0:
        A = np.zeros((0, n))
    if A.shape[1] != n:
        raise ParameterError(f"equality block has {A.shape[1]} columns, expected {n}")
    m = A.shape[0]
    if m:
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[-1] <= rank_tol * max(sv[0], 1.0) or m > n:
            raise FactorizationError(
                f"equality block A ({m}x{n}) is rank deficient: smallest singular value {sv[-1]:.3e}"
            )
        Z = scipy.linalg.null_space(A)
    else:
        Z = np.eye(n)
    if Z.shape[1]:
        red = Z.T @ (0.5 * (P + P.T)) @ Z
        ev = np.linalg.eigvalsh(red)
        if ev[0] <= rank_tol * max(abs(ev[-1]), 1.0):
            raise FactorizationError(
                f"cost block P is singular on the null space of A: smallest reduced eigenvalue {ev[0]:.3e}"
            )
    K = np.zeros((n + m, n + m))
    K[:n, :n] = P
    K[:n, n:] = A.T
    K[n:, :n] = A
    lu = scipy.linalg.lu_factor(K, check_finite=False)
    _bump()
    K.setflags(write=False)
    return KktFactor(K=K, lu=lu, n_xi=n, n_eq=m, rho=rho)


def prefactor_kkt(F: np.ndarray, A: np.ndarray, rho: float = 1.0) -> KktFactor:
    """Factor the projection KKT matrix ``[[I + rho F^T F, A^T], [A, 0]]``."""
    if not rho > 0:
        raise ParameterError(f"rho must be positive, got {rho}")
    F = np.atleast_2d(np.asarray(F, dtype=float))
    return prefactor_kkt_gram(F.T @ F, A, rho)


def prefactor_kkt_gram(FtF: np.ndarray, A: np.ndarray, rho: float = 1.0) -> KktFactor:
    """Same as :func:`prefactor_kkt` but from a precomputed ``F^T F``."""
    if not rho > 0:
        raise ParameterError(f"rho must be positive, got {rho}")
    n = FtF.shape[0]
    return factor_kkt(np.eye(n) + rho * FtF, A, rho=rho)


def batch_affine_solve(factor: KktFactor, eta_batch: np.ndarray) -> QpSolution:
    """Solve the pre-factorized system for a batch of stacked rhs, shape (B, n_xi + n_eq)."""
    eta_batch = np.asarray(eta_batch, dtype=float)
    if eta_batch.ndim != 2:
        raise ParameterError(f"eta batch must be 2-D (B, n), got shape {eta_batch.shape}")
    sol = factor.solve(eta_batch)
    return QpSolution(xi=sol[:, : factor.n_xi], nu=sol[:, factor.n_xi :])


def stack_rhs(top: np.ndarray, b: np.ndarray) -> np.ndarray:
    top = np.atleast_2d(top)
    b = np.broadcast_to(np.atleast_2d(b), (top.shape[0], np.atleast_2d(b).shape[-1]))
    return np.concatenate([top, b], axis=1)
