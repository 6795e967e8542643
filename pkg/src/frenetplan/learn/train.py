"""Minibatch training of the policies through the unrolled optimizer."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import npops
from ..context import PlanningContext
from ..errors import ParameterError, TrainingError
from ..qpcore import factorization_count
from . import tape as T
from .losses import batch_mean, cvae_loss, self_supervised_loss, unrolled_forward
from .networks import CvaePolicy, MlpPolicy, normalize_observation

log = logging.getLogger(__name__)

MODES = ("supervised", "self_supervised")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    unroll: int = 25
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    beta_kl: float = 1.0
    ss_weight: float = 0.0
    ss_stride: int = 1
    project: bool = True

    def __post_init__(self):
        if self.unroll < 1:
            raise ParameterError("unroll depth K must be >= 1")
        if not (self.lr > 0 and self.batch_size >= 1 and self.epochs >= 0):
            raise ParameterError("need lr > 0, batch_size >= 1 and epochs >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ParameterError("invalid Adam moments")


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    policy: object
    losses: list = field(default_factory=list)          # per minibatch
    epoch_losses: list = field(default_factory=list)
    components: list = field(default_factory=list)      # per minibatch, dict of means


def minibatch_loss(xp, mode, policy, params, ctx: PlanningContext, obs, tau, cfg: TrainConfig, rng):
    """Mean loss over one minibatch plus per-component means (plain floats)."""
    B = obs.shape[0]
    obs_n = normalize_observation(obs, ctx.cfg.v_max)
    lo, hi = ctx.lane_bounds(obs)
    b0 = ctx.b0(obs)
    mc = ctx.cfg.metacost()
    per, comp = [], {}
    if mode == "supervised":
        tau_n = tau / 50.0
        mu, logvar = policy.encode(xp, params, obs_n, tau_n)
        noise = rng.standard_normal(np.shape(T.value(mu)))
        z = mu + xp.exp(0.5 * logvar) * noise
    for g in ctx.scene_groups(obs):
        i = g.index
        if mode == "supervised":
            p, lam = policy.decode(xp, params, z[i], obs_n[i], lo[i, None], hi[i, None])
        else:
            p, lam = policy.forward(xp, params, obs_n[i], lo[i, None], hi[i, None])
        trace, _ = unrolled_forward(xp, ctx, p, lam, b0[i], g.scene, cfg.unroll, project=cfg.project)
        if mode == "supervised":
            loss, parts = cvae_loss(xp, trace, tau[i], mu[i], logvar[i], cfg.beta_kl, cfg.ss_weight,
                                    g.scene, ctx, mc, cfg.ss_stride)
        else:
            loss = self_supervised_loss(xp, trace, g.scene, mc)
            parts = {"meta_cost": loss}
        per.append(loss)
        for k, v in parts.items():
            comp[k] = comp.get(k, 0.0) + float(np.sum(T.value(v)))
    total = batch_mean(xp, per, B)
    return total, {k: v / B for k, v in comp.items()}


def train(mode: str, dataset, policy, ctx: PlanningContext, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Adam on the mean minibatch loss; deterministic given ``cfg.seed`` and the dataset order.

    ``dataset`` is ``(observations, expert_trajectories)``; the trajectories
    may be ``None`` in self-supervised mode.
    """
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    obs, tau = dataset
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    if mode == "supervised":
        if tau is None:
            raise ParameterError("supervised training needs expert trajectories")
        if not isinstance(policy, CvaePolicy):
            raise ParameterError("supervised training expects a CvaePolicy")
        tau = np.atleast_2d(np.asarray(tau, dtype=float))
        if tau.shape != (obs.shape[0], 2 * ctx.basis.n_steps):
            raise ParameterError(f"expert trajectories must have shape ({obs.shape[0]}, {2 * ctx.basis.n_steps})")
    elif not isinstance(policy, MlpPolicy):
        raise ParameterError("self-supervised training expects an MlpPolicy")
    N = obs.shape[0]
    if N == 0:
        raise ParameterError("empty dataset")
    params = policy.params
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(policy=policy)
    n_fact = factorization_count()
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        ep = []
        for mb, start in enumerate(range(0, N, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            tp = T.Tape()
            pv = [tp.var(p) for p in params]
            loss, comp = minibatch_loss(T, mode, policy, pv, ctx, obs[idx], None if tau is None else tau[idx], cfg, rng)
            val = float(loss.value)
            if not np.isfinite(val):
                raise TrainingError(f"non-finite loss at epoch {epoch}, minibatch {mb}: components {comp}")
            tp.backward(loss)
            grads = [np.zeros_like(p) if v.grad is None else v.grad for p, v in zip(params, pv)]
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError(f"non-finite gradient at epoch {epoch}, minibatch {mb}: components {comp}")
            opt.step(params, grads)
            result.losses.append(val)
            result.components.append(comp)
            ep.append(val * len(idx))
        result.epoch_losses.append(float(np.sum(ep) / N))
        log.info("epoch %d loss %.6g", epoch, result.epoch_losses[-1])
    if factorization_count() != n_fact:
        raise TrainingError("a KKT factorization happened inside the training loop")
    return result


def evaluate(mode, policy, ctx: PlanningContext, obs, tau=None, cfg: TrainConfig = TrainConfig(), seed: int = 0):
    """Mean loss and components on a dataset without recording a tape."""
    rng = np.random.default_rng(seed)
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    loss, comp = minibatch_loss(npops, mode, policy, policy.params, ctx, obs, tau, cfg, rng)
    return float(loss), comp
