"""Behavioural-input-conditioned trajectory QP.

The cost sums, over every grid instant, a smoothness term, a PD-like lateral
tracking term and a proportional speed tracking term:

    w_smooth * (xdd^2 + ydd^2)
  + w_lateral * (ydd + kp (y - y_d) + kv yd)^2
  + w_velocity * (xdd + kp (xd - v_d))^2

with segment-wise set-points (y_d, v_d).  The set-points only enter the linear
cost term, so the KKT matrix is shared by every behavioural input and is
factorized once per planner.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .basis import BasisMatrices, build_basis
from .errors import ParameterError
from .qpcore import KktFactor, batch_affine_solve, factor_kkt

TerminalMode = Literal["free", "accel_zero", "full_pterm"]


@dataclass
class BehavioralInput:
    y_d: np.ndarray
    v_d: np.ndarray
    p_term: np.ndarray | None = None

    def __post_init__(self):
        self.y_d = np.atleast_1d(np.asarray(self.y_d, dtype=float))
        self.v_d = np.atleast_1d(np.asarray(self.v_d, dtype=float))
        if self.y_d.shape != self.v_d.shape or self.y_d.ndim != 1 or self.y_d.size < 1:
            raise ParameterError("y_d and v_d must be 1-D with the same number (>= 1) of segments")
        if self.p_term is not None:
            self.p_term = np.asarray(self.p_term, dtype=float)
            if self.p_term.shape != (6,):
                raise ParameterError("p_term must be (x_f, y_f, xd_f, yd_f, xdd_f, ydd_f)")

    @property
    def m_seg(self) -> int:
        return self.y_d.size

    def vector(self) -> np.ndarray:
        """Set-point vector ``[y_d1..y_dm, v_d1..v_dm]``."""
        return np.concatenate([self.y_d, self.v_d])

    @classmethod
    def from_vector(cls, p, p_term=None) -> "BehavioralInput":
        p = np.asarray(p, dtype=float)
        if p.ndim != 1 or p.size % 2:
            raise ParameterError("behavioural vector must be 1-D of even length")
        m = p.size // 2
        return cls(p[:m], p[m:], p_term)


@dataclass
class BoundaryConditions:
    b0: np.ndarray
    terminal_mode: TerminalMode = "accel_zero"

    def __post_init__(self):
        self.b0 = np.asarray(self.b0, dtype=float)
        if self.b0.shape != (6,) or not np.all(np.isfinite(self.b0)):
            raise ParameterError("b0 must be a finite (x, y, xd, yd, xdd, ydd) vector")
        if self.terminal_mode not in ("free", "accel_zero", "full_pterm"):
            raise ParameterError(f"unknown terminal mode {self.terminal_mode!r}")


@dataclass(frozen=True)
class PlannerWeights:
    kappa_p: float = 0.5
    kappa_v: float = 1.4
    w_smooth: float = 1.0
    w_lateral: float = 10.0
    w_velocity: float = 10.0

    def __post_init__(self):
        if min(self.w_smooth, self.w_lateral, self.w_velocity) < 0:
            raise ParameterError("cost weights must be nonnegative")
        if self.kappa_p <= 0 or self.kappa_v <= 0:
            raise ParameterError("PD gains must be positive for a convergent tracking law")


@dataclass
class QpProblem:
    Q: np.ndarray
    q: np.ndarray
    A: np.ndarray
    b: np.ndarray


def segment_matrix(n_steps: int, m_seg: int) -> np.ndarray:
    """(n_steps, m_seg) indicator assigning every grid sample to its segment."""
    if m_seg < 1 or n_steps % m_seg:
        raise ParameterError(f"n_steps={n_steps} is not divisible by m_seg={m_seg}")
    S = np.zeros((n_steps, m_seg))
    per = n_steps // m_seg
    for k in range(m_seg):
        S[k * per : (k + 1) * per, k] = 1.0
    return S


def equality_matrix(basis: BasisMatrices, terminal_mode: TerminalMode) -> np.ndarray:
    """Rows of A for one axis; both axes share the same pattern."""
    rows = [basis.W[0], basis.Wd[0], basis.Wdd[0]]
    if terminal_mode == "accel_zero":
        rows += [basis.Wdd[-1]]
    elif terminal_mode == "full_pterm":
        rows += [basis.W[-1], basis.Wd[-1], basis.Wdd[-1]]
    Ax = np.vstack(rows)
    n = basis.n_coeffs
    A = np.zeros((2 * Ax.shape[0], 2 * n))
    A[: Ax.shape[0], :n] = Ax
    A[Ax.shape[0] :, n:] = Ax
    return A


def equality_rhs(b0, terminal_mode: TerminalMode, p_term=None) -> np.ndarray:
    """b(p) matching :func:`equality_matrix`; ``b0`` and ``p_term`` may be batched."""
    b0 = np.asarray(b0, dtype=float)
    x0, y0, vx0, vy0, ax0, ay0 = np.moveaxis(b0, -1, 0)
    zero = np.zeros_like(x0)
    bx = [x0, vx0, ax0]
    by = [y0, vy0, ay0]
    if terminal_mode == "accel_zero":
        bx += [zero]
        by += [zero]
    elif terminal_mode == "full_pterm":
        if p_term is None:
            raise ParameterError("terminal_mode='full_pterm' requires p_term")
        pt = np.moveaxis(np.asarray(p_term, dtype=float), -1, 0)
        bx += [pt[0] + zero, pt[2] + zero, pt[4] + zero]
        by += [pt[1] + zero, pt[3] + zero, pt[5] + zero]
    return np.stack(bx + by, axis=-1)


class Planner:
    """Pre-factorized behavioural QP for one basis, weight set and terminal mode."""

    def __init__(self, basis: BasisMatrices | None = None, weights: PlannerWeights | None = None,
                 m_seg: int = 4, terminal_mode: TerminalMode = "accel_zero"):
        self.basis = basis if basis is not None else build_basis()
        self.weights = weights if weights is not None else PlannerWeights()
        self.m_seg = m_seg
        self.terminal_mode = terminal_mode
        w = self.weights
        b = self.basis
        self.S = segment_matrix(b.n_steps, m_seg)
        # residual rows of the tracking laws, as linear maps of c_x / c_y
        self.L = b.Wdd + w.kappa_v * b.Wd + w.kappa_p * b.W
        self.V = b.Wdd + w.kappa_p * b.Wd
        n = b.n_coeffs
        Q = np.zeros((2 * n, 2 * n))
        Q[:n, :n] = w.w_smooth * b.Wdd.T @ b.Wdd + w.w_velocity * self.V.T @ self.V
        Q[n:, n:] = w.w_smooth * b.Wdd.T @ b.Wdd + w.w_lateral * self.L.T @ self.L
        # sum of squares = (1/2) xi^T Q xi + q^T xi + const, hence the factors of 2
        self.Q = Q + Q.T
        # q(p) = -H p with p = [y_d..., v_d...]
        H = np.zeros((2 * n, 2 * m_seg))
        H[:n, m_seg:] = w.w_velocity * w.kappa_p * self.V.T @ self.S
        H[n:, :m_seg] = w.w_lateral * w.kappa_p * self.L.T @ self.S
        self.H = 2.0 * H
        self.A = equality_matrix(b, terminal_mode)
        self.factor: KktFactor = factor_kkt(self.Q, self.A)

    @property
    def n_xi(self) -> int:
        return self.basis.n_xi

    @property
    def n_eq(self) -> int:
        return self.A.shape[0]

    def q(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != 2 * self.m_seg:
            raise ParameterError(f"behavioural vector must have length {2 * self.m_seg}, got {p.shape[-1]}")
        return -(p @ self.H.T)

    def b(self, b0, p_term=None) -> np.ndarray:
        return equality_rhs(b0, self.terminal_mode, p_term)

    def problem(self, p: BehavioralInput, bc: BoundaryConditions) -> QpProblem:
        if bc.terminal_mode != self.terminal_mode:
            raise ParameterError("boundary-condition terminal mode differs from the planner's")
        if p.m_seg != self.m_seg:
            raise ParameterError(f"expected {self.m_seg} segments, got {p.m_seg}")
        return QpProblem(Q=self.Q, q=self.q(p.vector()), A=self.A, b=self.b(bc.b0, p.p_term))

    def solve(self, p_batch, b0, p_term=None, return_dual: bool = False):
        """Solve the QP for a batch of set-point vectors (B, 2*m_seg).

        ``b0`` is shared by the batch or given per sample as (B, 6).
        """
        p_batch = np.atleast_2d(np.asarray(p_batch, dtype=float))
        q = self.q(p_batch)
        b = np.broadcast_to(self.b(b0, p_term), (p_batch.shape[0], self.n_eq))
        sol = batch_affine_solve(self.factor, np.concatenate([-q, b], axis=1))
        if return_dual:
            return sol
        return sol.xi


def build_qp(p: BehavioralInput, bc: BoundaryConditions, w: PlannerWeights, basis: BasisMatrices) -> QpProblem:
    if basis.n_steps % p.m_seg:
        raise ParameterError(f"n_steps={basis.n_steps} is not divisible by m_seg={p.m_seg}")
    planner = _planner_for(basis, w, p.m_seg, bc.terminal_mode)
    return planner.problem(p, bc)


_cache: dict = {}


def _planner_for(basis, w, m_seg, mode) -> Planner:
    key = (id(basis), w, m_seg, mode)
    hit = _cache.get(key)
    if hit is None or hit.basis is not basis:
        hit = Planner(basis, w, m_seg, mode)
        _cache[key] = hit
    return hit


def plan_batch(p_batch, bc: BoundaryConditions, w: PlannerWeights, basis: BasisMatrices) -> np.ndarray:
    """Batched QP solve for a list of :class:`BehavioralInput` or a (B, 2m) array."""
    if isinstance(p_batch, BehavioralInput):
        p_batch = [p_batch]
    if isinstance(p_batch, (list, tuple)):
        if not p_batch:
            raise ParameterError("empty behavioural batch")
        m = p_batch[0].m_seg
        p_term = None
        if bc.terminal_mode == "full_pterm":
            p_term = np.stack([pi.p_term for pi in p_batch])
        arr = np.stack([pi.vector() for pi in p_batch])
    else:
        arr = np.atleast_2d(np.asarray(p_batch, dtype=float))
        m = arr.shape[1] // 2
        p_term = None
    planner = _planner_for(basis, w, m, bc.terminal_mode)
    return planner.solve(arr, bc.b0, p_term)
