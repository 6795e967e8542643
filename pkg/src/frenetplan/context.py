"""Shared planning resources: basis, QP, projection factors and observation-to-scene mapping.

A :class:`PlanningContext` owns every factorization the planners need.  All
of them are computed when the context is built (one behavioural QP plus one
projection KKT matrix per obstacle count ``0..max_obs``), so nothing is
factorized while driving or training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import BasisMatrices, TimeGrid, build_basis
from .errors import ParameterError
from .metacost import MetaCostConfig
from .planner import Planner, PlannerWeights
from .projection import DEFAULT_RHO, ConstraintWeights, Projector, SceneConstraints
from .sim import N_SLOTS, predict_obstacles


@dataclass(frozen=True)
class PlanningConfig:
    order: int = 10
    tf: float = 10.0
    n_steps: int = 100
    m_seg: int = 4
    terminal_mode: str = "accel_zero"
    weights: PlannerWeights = field(default_factory=PlannerWeights)
    a: float = 7.0
    b: float = 3.2
    v_min: float = 0.1
    v_max: float = 10.0
    a_max: float = 4.0
    constraint_weights: ConstraintWeights = field(default_factory=ConstraintWeights)
    rho: float = DEFAULT_RHO
    lane_margin: float = 1.0
    max_obs: int = N_SLOTS

    def metacost(self) -> MetaCostConfig:
        return MetaCostConfig(v_des=self.v_max)


@dataclass
class SceneGroup:
    """Samples of a batch that share an obstacle count (and hence a KKT factor)."""

    index: np.ndarray
    scene: SceneConstraints


class PlanningContext:
    def __init__(self, cfg: PlanningConfig | None = None):
        self.cfg = cfg if cfg is not None else PlanningConfig()
        c = self.cfg
        self.basis: BasisMatrices = build_basis(c.order, TimeGrid(0.0, c.tf, c.n_steps))
        self.planner = Planner(self.basis, c.weights, c.m_seg, c.terminal_mode)
        self.projector = Projector(self.planner.A, c.rho)
        for k in range(c.max_obs + 1):
            self.projector.factor(self.scene(np.zeros((k, c.n_steps)), np.zeros((k, c.n_steps)), -1.0, 1.0))

    @property
    def n_xi(self) -> int:
        return self.basis.n_xi

    def scene(self, x_obs, y_obs, y_lb, y_ub) -> SceneConstraints:
        c = self.cfg
        return SceneConstraints(self.basis, x_obs, y_obs, a=c.a, b=c.b, v_min=c.v_min, v_max=c.v_max,
                                a_max=c.a_max, y_lb=y_lb, y_ub=y_ub, weights=c.constraint_weights)

    # observation helpers ---------------------------------------------------
    def lane_bounds(self, obs) -> tuple[np.ndarray, np.ndarray]:
        """Ego-frame lateral bounds for the vehicle centre, each of shape (B,)."""
        o = np.atleast_2d(obs)
        lo = o[:, -2] + self.cfg.lane_margin
        hi = o[:, -1] - self.cfg.lane_margin
        if np.any(lo >= hi):
            raise ParameterError("road narrower than the vehicle")
        return lo, hi

    def b0(self, obs, accel=None) -> np.ndarray:
        """Initial state in the ego frame: origin, observed velocity, given (or zero) acceleration."""
        o = np.atleast_2d(obs)
        out = np.zeros((o.shape[0], 6))
        out[:, 2] = o[:, 2]
        out[:, 3] = o[:, 1]
        if accel is not None:
            out[:, 4:6] = np.asarray(accel, dtype=float).reshape(-1, 2)
        return out

    def scene_groups(self, obs) -> list[SceneGroup]:
        """Per-sample scenes from observations, grouped by obstacle count."""
        o = np.atleast_2d(obs)
        lo, hi = self.lane_bounds(o)
        counts = (o[:, 3 + 4 : 3 + 5 * N_SLOTS : 5] > 0.5).sum(axis=1)
        groups = []
        grid = self.basis.grid
        for k in np.unique(counts):
            idx = np.flatnonzero(counts == k)
            xs, ys = [], []
            for i in idx:
                xo, yo = predict_obstacles(o[i], grid)
                xs.append(xo)
                ys.append(yo)
            sc = self.scene(np.stack(xs), np.stack(ys), lo[idx], hi[idx])
            groups.append(SceneGroup(index=idx, scene=sc))
        return groups

    def scene_for(self, obs) -> SceneConstraints:
        """Scene of one observation (shared by a whole sample batch)."""
        lo, hi = self.lane_bounds(obs)
        xo, yo = predict_obstacles(np.asarray(obs).reshape(-1), self.basis.grid)
        return self.scene(xo, yo, float(lo[0]), float(hi[0]))

    # solves ------------------------------------------------------------------
    def plan(self, p, b0) -> np.ndarray:
        return self.planner.solve(p, b0)

    def project(self, xi_star, b0, scene, lam0=None, iters: int = 100, trace: bool = False):
        b = self.planner.b(b0)
        return self.projector.project(xi_star, b, scene, lam0=lam0, max_iters=iters, trace=trace)
