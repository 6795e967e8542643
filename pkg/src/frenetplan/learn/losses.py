"""Unrolled planner + projection forward pass and the training losses.

All functions take the namespace ``xp`` first: :mod:`frenetplan.npops` for
plain evaluation or :mod:`frenetplan.learn.tape` for recorded evaluation.
"""

from __future__ import annotations

import numpy as np

from ..context import PlanningContext
from ..metacost import MetaCostConfig, meta_cost_xp
from ..projection import SceneConstraints, unroll


def plan_xp(xp, ctx: PlanningContext, p, b0):
    """The behavioural QP as an affine map of p: xi* = [I 0] K^{-1} [H p; b]."""
    pl = ctx.planner
    b = np.atleast_2d(pl.b(b0))
    b = np.broadcast_to(b, (np.shape(xp.value(p))[0], b.shape[-1]))
    eta = xp.concatenate([p @ pl.H.T, b], axis=1)
    return xp.kkt_solve(pl.factor, eta)[:, : pl.n_xi]


def unrolled_forward(xp, ctx: PlanningContext, p, lam0, b0, scene: SceneConstraints, K: int,
                     project: bool = True):
    """QP followed by ``K`` projection alternations started at (xi*, lam0).

    Returns ``(trace, xi_bar)`` with ``trace`` the K intermediate iterates.
    With ``project=False`` the projection is skipped and the QP output is
    returned as the single trace entry.
    """
    xi_star = plan_xp(xp, ctx, p, b0)
    if not project:
        return [xi_star], xi_star
    factor = ctx.projector.factor(scene)
    FtF = ctx.projector.gram(scene)
    b = np.atleast_2d(ctx.planner.b(b0))
    b = np.broadcast_to(b, (np.shape(xp.value(xi_star))[0], b.shape[-1]))
    trace, _ = unroll(xp, xi_star, b, scene, factor, FtF, lam0, xi_star, K)
    return trace, trace[-1]


def reparameterize(mu, sigma, noise):
    """z = mu + sigma * noise (works on arrays and tape variables alike)."""
    return mu + sigma * noise


def kl_diag(xp, mu, logvar):
    """KL(N(mu, diag(exp(logvar))) || N(0, I)) per sample."""
    return 0.5 * (xp.exp(logvar) + mu * mu - 1.0 - logvar).sum(axis=1)


def reconstruction(xp, xi_bar, tau_e, ctx: PlanningContext):
    """Sum of squared position errors between W-bar xi_bar and the expert samples, per sample."""
    n = ctx.basis.n_coeffs
    W = ctx.basis.W
    pos = xp.concatenate([xi_bar[:, :n] @ W.T, xi_bar[:, n:] @ W.T], axis=1)
    d = pos - tau_e
    return (d * d).sum(axis=1)


def stage_cost(xp, trace, scene, cfg: MetaCostConfig, stride: int = 1):
    """Meta-cost summed over every ``stride``-th unroll stage (always including the last)."""
    K = len(trace)
    picks = sorted(set(range(stride - 1, K, stride)) | {K - 1})
    total = 0.0
    for k in picks:
        total = total + meta_cost_xp(xp, trace[k], scene, cfg)
    return total


def cvae_loss(xp, trace, tau_e, mu, logvar, beta: float, ss_weight: float, scene, ctx: PlanningContext,
              cfg: MetaCostConfig | None = None, ss_stride: int = 1):
    """Per-sample reconstruction + beta * KL (+ ss_weight * summed stage meta-cost).

    Returns ``(loss, parts)``; every entry has shape (B,).
    """
    rec = reconstruction(xp, trace[-1], tau_e, ctx)
    kl = kl_diag(xp, mu, logvar)
    loss = rec + beta * kl
    parts = {"reconstruction": rec, "kl": kl}
    if ss_weight > 0:
        cfg = cfg if cfg is not None else ctx.cfg.metacost()
        ss = stage_cost(xp, trace, scene, cfg, ss_stride)
        loss = loss + ss_weight * ss
        parts["self_supervision"] = ss
    return loss, parts


def self_supervised_loss(xp, trace, scene, cfg: MetaCostConfig, stride: int | None = None):
    """Meta-cost of the final unrolled output (or of every ``stride``-th stage), per sample."""
    if stride is None:
        return meta_cost_xp(xp, trace[-1], scene, cfg)
    return stage_cost(xp, trace, scene, cfg, stride)


def batch_mean(xp, per_group, n_total: int):
    """Mean over a batch whose per-sample losses were computed in obstacle-count groups."""
    total = 0.0
    for v in per_group:
        total = total + v.sum()
    return total * (1.0 / n_total)

