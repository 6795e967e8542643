"""Polynomial basis matrices on a uniform time grid.

Two families span the same polynomial space, with ``tau = (t - t0) / (tf - t0)``:

* ``"bernstein"`` (default): column ``j`` is ``C(n, j) tau**j (1 - tau)**(n - j)``.
  The KKT systems built on top of it are about six orders of magnitude better
  conditioned than with monomials, and the coefficients read as control points
  in metres.
* ``"monomial"``: column ``j`` is ``tau**j``.

The derivative bases carry the chain-rule factors ``1/T`` and ``1/T**2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from .errors import ParameterError


@dataclass(frozen=True)
class TimeGrid:
    t0: float = 0.0
    tf: float = 10.0
    n_steps: int = 100

    def __post_init__(self):
        if not np.isfinite(self.t0) or not np.isfinite(self.tf) or self.tf <= self.t0:
            raise ParameterError(f"time grid needs tf > t0, got t0={self.t0}, tf={self.tf}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ParameterError(f"time grid needs n_steps >= 2, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / (self.n_steps - 1)

    @property
    def horizon(self) -> float:
        return self.tf - self.t0

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.tf, self.n_steps)


@dataclass(frozen=True)
class BasisMatrices:
    W: np.ndarray
    Wd: np.ndarray
    Wdd: np.ndarray
    order: int
    grid: TimeGrid
    family: str = "bernstein"

    @property
    def n_coeffs(self) -> int:
        return self.order + 1

    @property
    def n_xi(self) -> int:
        """Length of the stacked coefficient vector (c_x, c_y)."""
        return 2 * (self.order + 1)

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    def deriv(self, k: int) -> np.ndarray:
        if k == 0:
            return self.W
        if k == 1:
            return self.Wd
        if k == 2:
            return self.Wdd
        raise ParameterError(f"deriv must be 0, 1 or 2, got {k}")


FAMILIES = ("bernstein", "monomial")


def basis_rows(order: int, times, grid: TimeGrid, family: str = "bernstein") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Evaluate the position/velocity/acceleration basis at arbitrary times.

    Times are expressed in the same clock as ``grid`` and may lie outside it.
    """
    t = np.atleast_1d(np.asarray(times, dtype=float))
    T = grid.horizon
    tau = (t - grid.t0) / T
    n = order
    if family == "monomial":
        j = np.arange(n + 1)
        W = tau[:, None] ** j
        Wd = np.zeros_like(W)
        Wd[:, 1:] = j[1:] * tau[:, None] ** (j[1:] - 1) / T
        Wdd = np.zeros_like(W)
        Wdd[:, 2:] = j[2:] * (j[2:] - 1) * tau[:, None] ** (j[2:] - 2) / T**2
        return W, Wd, Wdd
    if family != "bernstein":
        raise ParameterError(f"unknown basis family {family!r}; expected one of {FAMILIES}")
    W = _bernstein(n, tau)
    low1 = _bernstein(n - 1, tau)
    low2 = _bernstein(n - 2, tau)
    Wd = np.zeros_like(W)
    Wd[:, 1:] += low1
    Wd[:, :-1] -= low1
    Wd *= n / T
    Wdd = np.zeros_like(W)
    Wdd[:, 2:] += low2
    Wdd[:, 1:-1] -= 2 * low2
    Wdd[:, :-2] += low2
    Wdd *= n * (n - 1) / T**2
    return W, Wd, Wdd


def _bernstein(n: int, tau: np.ndarray) -> np.ndarray:
    j = np.arange(n + 1)
    return comb(n, j)[None, :] * tau[:, None] ** j * (1.0 - tau[:, None]) ** (n - j)


def build_basis(order: int = 10, grid: TimeGrid | None = None, family: str = "bernstein") -> BasisMatrices:
    if grid is None:
        grid = TimeGrid()
    if int(order) != order or order < 2:
        raise ParameterError(f"polynomial order must be an integer >= 2, got {order}")
    if not isinstance(grid, TimeGrid):
        raise ParameterError("grid must be a TimeGrid")
    W, Wd, Wdd = basis_rows(order, grid.times, grid, family)
    for m in (W, Wd, Wdd):
        m.setflags(write=False)
    return BasisMatrices(W=W, Wd=Wd, Wdd=Wdd, order=int(order), grid=grid, family=family)


def split_xi(xi: np.ndarray, basis: BasisMatrices) -> tuple[np.ndarray, np.ndarray]:
    xi = np.asarray(xi, dtype=float)
    n = basis.n_coeffs
    if xi.shape[-1] != 2 * n:
        raise ParameterError(f"coefficient vector must have length {2 * n}, got {xi.shape[-1]}")
    return xi[..., :n], xi[..., n:]


def eval_trajectory(xi, basis: BasisMatrices, deriv: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sample x and y (or their derivatives) on the grid.

    ``xi`` may be a single vector of length ``2*(order+1)`` or a batch with a
    leading batch axis; the outputs have shape ``(..., n_steps)``.
    """
    cx, cy = split_xi(xi, basis)
    B = basis.deriv(deriv)
    return cx @ B.T, cy @ B.T


def positions(xi, basis: BasisMatrices) -> np.ndarray:
    """Stacked sampled positions ``[x(t0..tf), y(t0..tf)]`` (the block-diagonal W applied to xi)."""
    x, y = eval_trajectory(xi, basis, 0)
    return np.concatenate([x, y], axis=-1)
