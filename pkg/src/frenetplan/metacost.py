"""Ranking cost for projected trajectories and best-sample selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import npops
from .errors import ParameterError
from .projection import SceneConstraints, family_norms


@dataclass(frozen=True)
class MetaCostConfig:
    v_des: float = 10.0
    w_res: float = 1e3
    w_speed: float = 1.0

    def __post_init__(self):
        if self.w_res < 0 or self.w_speed < 0:
            raise ParameterError("meta-cost weights must be nonnegative")
        if not (np.isfinite(self.v_des) and self.v_des >= 0):
            raise ParameterError(f"v_des must be a finite nonnegative speed, got {self.v_des}")


def meta_cost(xi_bar_batch, scene: SceneConstraints, cfg: MetaCostConfig | None = None) -> np.ndarray:
    """w_res * (sum of residual-family norms) + w_speed * mean_t (xd(t) - v_des)^2.

    The speed term is averaged rather than summed over the grid so the cost
    does not scale with the number of samples.
    """
    cfg = cfg if cfg is not None else MetaCostConfig(v_des=scene.v_max)
    if cfg.v_des > scene.v_max:
        raise ParameterError(f"v_des={cfg.v_des} exceeds v_max={scene.v_max}")
    xi = np.atleast_2d(np.asarray(xi_bar_batch, dtype=float))
    if xi.shape[0] == 0:
        raise ParameterError("empty trajectory batch")
    return meta_cost_xp(npops, xi, scene, cfg)


def meta_cost_xp(xp, xi, scene: SceneConstraints, cfg: MetaCostConfig):
    """:func:`meta_cost` on an already-validated batch, written against ``xp``."""
    (c, v, a, l), _ = family_norms(xp, xi, scene)
    n = scene.basis.n_coeffs
    vx = xi[:, :n] @ scene.basis.Wd.T
    dev = vx - cfg.v_des
    speed = (dev * dev).sum(axis=1) * (1.0 / scene.n_steps)
    return cfg.w_res * (c + v + a + l) + cfg.w_speed * speed


def select_best(xi_bar_batch, costs) -> tuple[int, np.ndarray]:
    """Index and coefficients of the cheapest sample; ties go to the lowest index."""
    xi = np.atleast_2d(np.asarray(xi_bar_batch, dtype=float))
    costs = np.asarray(costs, dtype=float).reshape(-1)
    if costs.size == 0 or xi.shape[0] == 0:
        raise ParameterError("cannot select from an empty batch")
    if costs.size != xi.shape[0]:
        raise ParameterError(f"{xi.shape[0]} trajectories but {costs.size} costs")
    # NaN never wins
    safe = np.where(np.isnan(costs), np.inf, costs)
    idx = int(np.argmin(safe))
    return idx, xi[idx].copy()
