"""Receding-horizon drivers, episode and benchmark runners, and result export.

Every planning cycle works in the frame fixed at the ego centre at that
instant: the observation is turned into obstacle predictions and lane bounds,
a batch of candidate trajectories is produced and ranked, and the first
``replan_stride`` simulator steps of the winner's accelerations are applied.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .basis import basis_rows
from .context import PlanningConfig, PlanningContext
from .errors import FrenetPlanError, ParameterError
from .learn.networks import CvaePolicy, MlpPolicy, normalize_observation
from .metacost import meta_cost, select_best
from .projection import residuals
from .samplers import (GridSpec, MppiState, SamplingDistribution, gaussian_sampler, grid_sampler, mppi_sample,
                       mppi_step)
from .sim import OBS_DIM, ScenarioConfig, SimState, observe, spawn_scenario, step

log = logging.getLogger(__name__)

KINDS = ("grid", "supervised", "self_supervised", "mppi")

DEFAULT_GRID = GridSpec(lateral_offsets=(-0.5, 0.0, 0.5), speed_setpoints=(0.0, 2.5, 5.0, 7.5, 10.0))


@dataclass
class PlannerKind:
    """A planner variant and its resources.

    ``policy`` is a loaded :class:`MlpPolicy` (self_supervised) or
    :class:`CvaePolicy` (supervised).  ``cov_p`` / ``cov_lam`` are the constant
    diagonal variances of the Gaussian around the MLP output.
    """

    kind: str
    name: str | None = None
    grid: GridSpec = DEFAULT_GRID
    policy: object = None
    n_samples: int = 16
    K_proj: int = 100
    cov_p: float = 1.0
    cov_lam: float = 1e-2
    mppi_samples: int = 128
    mppi_iters: int = 5
    mppi_temperature: float = 0.5
    mppi_cov: float = 25.0
    mppi_cov_floor: float = 1.0
    antithetic: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown planner kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "supervised" and not isinstance(self.policy, CvaePolicy):
            raise ParameterError("supervised planner needs a CvaePolicy")
        if self.kind == "self_supervised" and not isinstance(self.policy, MlpPolicy):
            raise ParameterError("self_supervised planner needs an MlpPolicy")
        if self.K_proj < 0 or self.n_samples < 1:
            raise ParameterError("need K_proj >= 0 and n_samples >= 1")
        if self.name is None:
            self.name = self.kind if self.kind in ("grid", "mppi") else f"{self.kind}_K{self.K_proj}"


@dataclass(frozen=True)
class RunConfig:
    replan_stride: int = 1
    brake_decel: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.replan_stride < 1:
            raise ParameterError("replan_stride must be >= 1")


@dataclass
class StepResult:
    xi: np.ndarray
    controls: np.ndarray          # (stride, 2) accelerations
    batch_size: int
    residual: float
    fallback: bool = False


class _Mppi:
    """Null-space parametrization xi = xi_p(b) + T e with A T = 0.

    T = N R^{-1} where N spans the null space of A and R^T R = N^T Q_a N for
    the acceleration Gram matrix Q_a, so a unit step in e changes the summed
    squared acceleration by exactly one.  Isotropic noise in e is therefore
    smooth noise on the trajectory.
    """

    def __init__(self, ctx: PlanningContext):
        A = ctx.planner.A
        self.A = A
        N = scipy.linalg.null_space(A)
        self.A_pinv = np.linalg.pinv(A)
        n = ctx.basis.n_coeffs
        m = ctx.basis.n_steps
        Wb = np.zeros((2 * m, 2 * n))
        Wb[:m, :n] = ctx.basis.W
        Wb[m:, n:] = ctx.basis.W
        Ab = np.zeros((2 * m, 2 * n))
        Ab[:m, :n] = ctx.basis.Wdd
        Ab[m:, n:] = ctx.basis.Wdd
        AN = Ab @ N
        R = scipy.linalg.cholesky(AN.T @ AN)
        self.T = scipy.linalg.solve_triangular(R, N.T, trans=1).T
        self.Wb = Wb
        WT = Wb @ self.T
        self.fit = scipy.linalg.cho_factor(WT.T @ WT)
        self.WT = WT

    @property
    def dim(self) -> int:
        return self.T.shape[1]

    def particular(self, b):
        return self.A_pinv @ b

    def refit(self, positions, b):
        """Coordinates e of the least-squares fit of sampled positions under A xi = b."""
        xp = self.particular(b)
        rhs = self.WT.T @ (positions - self.Wb @ xp)
        return scipy.linalg.cho_solve(self.fit, rhs)


class Driver:
    """Stateful MPC driver for one planner over one episode."""

    def __init__(self, kind: PlannerKind, ctx: PlanningContext, sim_dt: float, lane_width: float,
                 run: RunConfig = RunConfig(), rng=None):
        self.kind = kind
        self.ctx = ctx
        self.sim_dt = sim_dt
        self.lane_width = lane_width
        self.run = run
        self.rng = rng if rng is not None else np.random.default_rng(run.seed)
        self.prev_accel = np.zeros(2)
        self.mppi = _Mppi(ctx) if kind.kind == "mppi" else None
        self.mppi_prev = None   # (xi, frame) of the previous mean
        t = np.arange(run.replan_stride + 1) * sim_dt
        _, Wd, _ = basis_rows(ctx.basis.order, t, ctx.basis.grid, ctx.basis.family)
        # mean acceleration over each simulator step, so the integrator tracks the planned velocity
        self.ctrl_rows = (Wd[1:] - Wd[:-1]) / sim_dt

    # candidate generation ---------------------------------------------------
    def _lane_centres(self, obs):
        lo, hi = obs[-2], obs[-1]
        n_lanes = max(1, int(round((hi - lo) / self.lane_width)))
        return lo + (np.arange(n_lanes) + 0.5) * self.lane_width

    def _candidates(self, obs):
        """(p, lam0) batch for the sampling-based kinds."""
        k = self.kind
        ctx = self.ctx
        lo, hi = ctx.lane_bounds(obs)
        if k.kind == "grid":
            p = grid_sampler(k.grid, self._lane_centres(obs), ctx.cfg.m_seg)
            m = ctx.cfg.m_seg
            p[:, :m] = np.clip(p[:, :m], lo[0], hi[0])
            return p, np.zeros((p.shape[0], ctx.n_xi))
        obs_n = normalize_observation(obs[None], ctx.cfg.v_max)
        if k.kind == "supervised":
            p, lam = k.policy.sample(obs_n[0], lo, hi, k.n_samples, self.rng)
            return p, lam
        p0, lam0 = k.policy(obs_n, lo[:, None], hi[:, None])
        mean = np.concatenate([p0[0], lam0[0]])
        m2 = p0.shape[1]
        cov = np.concatenate([np.full(m2, k.cov_p), np.full(lam0.shape[1], k.cov_lam)])
        lower = np.concatenate([np.full(m2 // 2, lo[0]), np.zeros(m2 // 2)])
        upper = np.concatenate([np.full(m2 // 2, hi[0]), np.full(m2 // 2, ctx.cfg.v_max)])
        p, lam = gaussian_sampler(SamplingDistribution(mean, cov), k.n_samples - 1, self.rng, m2, lower, upper)
        # the policy mean itself is always a candidate
        return np.vstack([p0, p]), np.vstack([lam0, lam])

    def _plan_sampling(self, obs, b0, scene):
        p, lam = self._candidates(obs)
        xi_star = self.ctx.plan(p, b0)
        if self.kind.K_proj > 0:
            xi, _ = self.ctx.project(xi_star, b0, scene, lam0=lam, iters=self.kind.K_proj)
        else:
            xi = xi_star
        costs = meta_cost(xi, scene, self.ctx.cfg.metacost())
        j, best = select_best(xi, costs)
        return best, xi.shape[0]

    def _plan_mppi(self, obs, b0, scene, ego_shift):
        k = self.kind
        mp = self.mppi
        b = self.ctx.planner.b(b0)[0]
        dim = mp.dim
        if self.mppi_prev is None or ego_shift is None:
            # start from the straight constant-speed trajectory
            t = self.ctx.basis.grid.times
            pos = np.concatenate([obs[2] * t, obs[1] * t])
            z = mp.refit(pos, b)
        else:
            xi_prev = self.mppi_prev
            grid = self.ctx.basis.grid
            n = self.ctx.basis.n_coeffs
            # shifted previous mean; beyond the old horizon continue at the terminal velocity
            ts = grid.times + ego_shift[0]
            tin = np.minimum(ts, grid.tf)
            W, Wd, _ = basis_rows(self.ctx.basis.order, tin, grid, self.ctx.basis.family)
            extra = ts - tin
            px = W @ xi_prev[:n] + extra * (Wd @ xi_prev[:n]) - ego_shift[1]
            py = W @ xi_prev[n:] + extra * (Wd @ xi_prev[n:]) - ego_shift[2]
            pos = np.concatenate([px, py])
            z = mp.refit(pos, b)
        state = MppiState(z, np.full(dim, k.mppi_cov), k.mppi_temperature)
        xp = mp.particular(b)
        cfg = self.ctx.cfg.metacost()
        for _ in range(k.mppi_iters):
            zs = mppi_sample(state, k.mppi_samples, self.rng, k.antithetic)
            xis = xp + zs @ mp.T.T
            costs = meta_cost(xis, scene, cfg)
            # the temperature acts on costs measured in units of their batch spread
            scaled = (costs - costs.min()) / max(float(np.std(costs)), 1e-12)
            state = mppi_step(state, zs, scaled, cov_floor=k.mppi_cov_floor)
        xi = xp + mp.T @ state.mean_controls
        self.mppi_prev = xi
        return xi, k.mppi_samples

    # public -------------------------------------------------------------------
    def plan(self, obs, ego_shift=None) -> StepResult:
        """One planning cycle; ``ego_shift`` = (elapsed time, dx, dy) since the last cycle (MPPI warm start)."""
        ctx = self.ctx
        b0 = ctx.b0(obs, self.prev_accel)
        try:
            scene = ctx.scene_for(obs)
            if self.kind.kind == "mppi":
                xi, n = self._plan_mppi(obs, b0, scene, ego_shift)
            else:
                xi, n = self._plan_sampling(obs, b0, scene)
            if not np.all(np.isfinite(xi)):
                raise FrenetPlanError("planner produced a non-finite trajectory")
        except FrenetPlanError as exc:
            log.warning("planning failed (%s); braking", exc)
            ctrl = np.zeros((self.run.replan_stride, 2))
            ctrl[:, 0] = -self.run.brake_decel
            return StepResult(xi=None, controls=ctrl, batch_size=0, residual=np.inf, fallback=True)
        n_c = ctx.basis.n_coeffs
        ctrl = np.stack([self.ctrl_rows @ xi[:n_c], self.ctrl_rows @ xi[n_c:]], axis=1)
        res = float(residuals(xi, scene).max[0])
        return StepResult(xi=xi, controls=ctrl, batch_size=n, residual=res)


def mpc_step(kind: PlannerKind, obs, ctx: PlanningContext, driver: Driver | None = None,
             sim_dt: float = 0.1, lane_width: float = 4.0) -> StepResult:
    """Single planning cycle (convenience wrapper around :class:`Driver`)."""
    driver = driver if driver is not None else Driver(kind, ctx, sim_dt, lane_width)
    return driver.plan(np.asarray(obs, dtype=float))


@dataclass
class EpisodeResult:
    planner: str
    seed: int
    collided: bool
    mean_speed: float
    duration: float
    residuals: list = field(default_factory=list)
    plan_seconds: list = field(default_factory=list)
    fallbacks: int = 0
    states: list = field(default_factory=list)


def episode_seed(cfg: ScenarioConfig, planner_seed: int) -> int:
    """Planner-side RNG seed; independent of the planner identity so all planners share it."""
    return int(np.random.SeedSequence([cfg.seed, planner_seed, cfg.n_lanes, int(cfg.density * 1000)]).generate_state(1)[0])


def run_episode(kind: PlannerKind, cfg: ScenarioConfig, ctx: PlanningContext, run: RunConfig = RunConfig(),
                keep_states: bool = False) -> EpisodeResult:
    """Closed loop observe -> plan -> step until ``episode_len`` or a collision."""
    state: SimState = spawn_scenario(cfg)
    rng = np.random.default_rng(episode_seed(cfg, run.seed))
    driver = Driver(kind, ctx, cfg.sim_dt, cfg.lane_width, run, rng)
    n_total = int(round(cfg.episode_len / cfg.sim_dt))
    speeds = []
    res = EpisodeResult(planner=kind.name, seed=cfg.seed, collided=False, mean_speed=0.0, duration=0.0)
    if keep_states:
        res.states.append(state)
    k = 0
    last_pos = state.ego[:2].copy()
    shift = None
    while k < n_total and not state.collided:
        obs = observe(state)
        t0 = time.perf_counter()
        out = driver.plan(obs, shift)
        res.plan_seconds.append(time.perf_counter() - t0)
        res.residuals.append(out.residual)
        res.fallbacks += int(out.fallback)
        start_t = state.t
        for ax, ay in out.controls:
            if k >= n_total or state.collided:
                break
            # never command reversing
            ax = max(ax, -state.ego[3] / cfg.sim_dt)
            state = step(state, ax, ay)
            driver.prev_accel = np.array([ax, ay])
            speeds.append(state.ego[3])
            k += 1
            if keep_states:
                res.states.append(state)
        shift = (state.t - start_t, state.ego[0] - last_pos[0], state.ego[1] - last_pos[1])
        last_pos = state.ego[:2].copy()
    res.collided = bool(state.collided)
    res.mean_speed = float(np.mean(speeds)) if speeds else 0.0
    res.duration = float(state.t)
    return res


@dataclass
class BenchmarkRow:
    n_lanes: int
    density: float
    planner: str
    collision_rate: float
    avg_speed: float
    speed_std: float
    n_episodes: int
    n_collision_free: int
    seeds: str


@dataclass
class BenchmarkReport:
    rows: list = field(default_factory=list)
    episodes: list = field(default_factory=list)

    def row(self, planner: str, n_lanes: int | None = None, density: float | None = None) -> BenchmarkRow:
        for r in self.rows:
            if r.planner == planner and (n_lanes is None or r.n_lanes == n_lanes) and (density is None or r.density == density):
                return r
        raise KeyError(planner)


def aggregate(planner: str, n_lanes: int, density: float, results: list[EpisodeResult]) -> BenchmarkRow:
    """Collision rate over all episodes; speed statistics over collision-free episodes only."""
    n = len(results)
    free = [r.mean_speed for r in results if not r.collided]
    return BenchmarkRow(
        n_lanes=n_lanes, density=density, planner=planner,
        collision_rate=100.0 * (n - len(free)) / n if n else 0.0,
        avg_speed=float(np.mean(free)) if free else float("nan"),
        speed_std=float(np.std(free)) if free else float("nan"),
        n_episodes=n, n_collision_free=len(free),
        seeds=" ".join(str(r.seed) for r in results),
    )


def run_benchmark(planners: list[PlannerKind], lanes=(2,), densities=None, n_episodes: int = 50, seeds=None,
                  ctx: PlanningContext | None = None, base: ScenarioConfig = ScenarioConfig(),
                  run: RunConfig = RunConfig(), progress=None) -> BenchmarkReport:
    """Every planner drives the identical seeded scenario set of every (lanes, density) cell."""
    ctx = ctx if ctx is not None else PlanningContext(PlanningConfig(v_max=base.v_max))
    if densities is None:
        densities = {2: (1.0, 1.5, 3.0), 4: (1.5, 2.5, 3.0)}
    seeds = list(range(n_episodes)) if seeds is None else list(seeds)
    report = BenchmarkReport()
    for n_l in lanes:
        dens = densities[n_l] if isinstance(densities, dict) else densities
        for d in dens:
            cfgs = [ScenarioConfig(**{**_cfg_kwargs(base), "n_lanes": n_l, "density": d, "seed": s}) for s in seeds]
            for pk in planners:
                results = []
                for c in cfgs:
                    r = run_episode(pk, c, ctx, run)
                    results.append(r)
                    if progress:
                        progress(n_l, d, pk.name, r)
                report.rows.append(aggregate(pk.name, n_l, d, results))
                report.episodes.extend((n_l, d, r) for r in results)
    return report


def _cfg_kwargs(cfg: ScenarioConfig) -> dict:
    return {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}


# export -----------------------------------------------------------------------

REPORT_FIELDS = ["n_lanes", "density", "planner", "collision_rate", "avg_speed", "speed_std",
                 "n_episodes", "n_collision_free", "seeds"]


def _fmt(v):
    if isinstance(v, float):
        return "nan" if np.isnan(v) else f"{v:.6f}"
    return str(v)


def export_report_csv(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in report.rows:
            w.writerow([_fmt(getattr(r, f)) for f in REPORT_FIELDS])


def export_episodes_csv(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_lanes", "density", "planner", "seed", "collided", "mean_speed", "duration", "fallbacks",
                    "max_plan_residual"])
        for n_l, d, r in report.episodes:
            mr = max(r.residuals) if r.residuals else 0.0
            w.writerow([n_l, _fmt(float(d)), r.planner, r.seed, int(r.collided), _fmt(r.mean_speed),
                        _fmt(r.duration), r.fallbacks, _fmt(float(mr))])


def export_report_json(report: BenchmarkReport, path) -> None:
    rows = []
    for r in report.rows:
        rows.append({f: (None if isinstance(getattr(r, f), float) and np.isnan(getattr(r, f)) else getattr(r, f))
                     for f in REPORT_FIELDS})
    with open(path, "w") as fh:
        json.dump({"rows": rows}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _svg(fig, path):
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "frenetplan"
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_residual_trace(trace: np.ndarray, path, title: str = "projection residual") -> None:
    """Residual-vs-iteration curves, one per sample, on a log axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    it = np.arange(1, trace.shape[0] + 1)
    floor = 1e-8
    ax.semilogy(it, np.maximum(trace, floor), color="tab:blue", alpha=0.15, lw=0.8)
    ax.semilogy(it, np.maximum(np.median(trace, axis=1), floor), color="k", lw=2, label="median")
    ax.set_xlabel("iteration")
    ax.set_ylabel("max constraint residual")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _svg(fig, path)
    plt.close(fig)


def plot_trajectories(xi_batch, ctx: PlanningContext, scene, path, highlight: int | None = None) -> None:
    """Top-down overlay of trajectories, obstacle ellipses at t=0 and lane bounds."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Ellipse

    n = ctx.basis.n_coeffs
    W = ctx.basis.W
    xi = np.atleast_2d(xi_batch)
    fig, ax = plt.subplots(figsize=(8, 3))
    for j, row in enumerate(xi):
        ax.plot(W @ row[:n], W @ row[n:], color="tab:red" if j == highlight else "tab:blue",
                alpha=1.0 if j == highlight else 0.25, lw=2 if j == highlight else 0.8)
    xo = scene.x_obs.reshape(-1, scene.n_obs, scene.n_steps)[0]
    yo = scene.y_obs.reshape(-1, scene.n_obs, scene.n_steps)[0]
    for i in range(scene.n_obs):
        for k in (0, scene.n_steps - 1):
            ax.add_patch(Ellipse((xo[i, k], yo[i, k]), 2 * scene.a, 2 * scene.b, fill=False,
                                 color="k", alpha=1.0 if k == 0 else 0.3))
    lb = np.atleast_1d(scene.y_lb).ravel()[0]
    ub = np.atleast_1d(scene.y_ub).ravel()[0]
    ax.axhline(lb, color="gray", ls="--")
    ax.axhline(ub, color="gray", ls="--")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    _svg(fig, path)
    plt.close(fig)


def plot_report(rows: list[dict], path) -> None:
    """Bar chart of collision rate per planner and cell."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cells = sorted({(int(r["n_lanes"]), float(r["density"])) for r in rows})
    planners = sorted({r["planner"] for r in rows})
    fig, ax = plt.subplots(figsize=(1.5 + 1.2 * max(1, len(cells)), 4))
    width = 0.8 / max(1, len(planners))
    for j, pl in enumerate(planners):
        vals = []
        for c in cells:
            match = [float(r["collision_rate"]) for r in rows
                     if r["planner"] == pl and (int(r["n_lanes"]), float(r["density"])) == c]
            vals.append(match[0] if match else 0.0)
        ax.bar(np.arange(len(cells)) + j * width, vals, width, label=pl)
    ax.set_xticks(np.arange(len(cells)) + 0.4 - width / 2)
    ax.set_xticklabels([f"{n}L d={d:g}" for n, d in cells])
    ax.set_ylabel("collision rate [%]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _svg(fig, path)
    plt.close(fig)


# data collection ----------------------------------------------------------------


def collect_observations(cfgs: list[ScenarioConfig], ctx: PlanningContext, kind: PlannerKind | None = None,
                         run: RunConfig = RunConfig(), max_cycles: int | None = None) -> np.ndarray:
    """Observations met while ``kind`` (grid by default) drives each scenario, in visiting order."""
    kind = kind if kind is not None else PlannerKind("grid")
    out = []
    for cfg in cfgs:
        state = spawn_scenario(cfg)
        rng = np.random.default_rng(episode_seed(cfg, run.seed))
        driver = Driver(kind, ctx, cfg.sim_dt, cfg.lane_width, run, rng)
        n_total = int(round(cfg.episode_len / cfg.sim_dt))
        k = cycles = 0
        while k < n_total and not state.collided and (max_cycles is None or cycles < max_cycles):
            obs = observe(state)
            out.append(obs)
            res = driver.plan(obs)
            cycles += 1
            for ax, ay in res.controls:
                if k >= n_total or state.collided:
                    break
                ax = max(ax, -state.ego[3] / cfg.sim_dt)
                state = step(state, ax, ay)
                driver.prev_accel = np.array([ax, ay])
                k += 1
    return np.array(out) if out else np.zeros((0, OBS_DIM))


def label_expert(obs: np.ndarray, ctx: PlanningContext, cem_batch: int = 5000, cem_iters: int = 5,
                 K_proj: int = 100, elite_frac: float = 0.1, seed: int = 0):
    """CEM over behavioural inputs, ranked by the meta-cost of the projected trajectory.

    Returns the expert position samples ``tau_e`` of shape (N, 2 n_steps) and
    the best meta-cost per observation.
    """
    from .samplers import cem_optimize

    obs = np.atleast_2d(obs)
    m = ctx.cfg.m_seg
    n = ctx.basis.n_coeffs
    W = ctx.basis.W
    cfg = ctx.cfg.metacost()
    seeds = np.random.SeedSequence(seed).spawn(obs.shape[0])
    taus, costs = [], []
    for o, ss in zip(obs, seeds):
        lo, hi = ctx.lane_bounds(o)
        b0 = ctx.b0(o)
        scene = ctx.scene_for(o)

        def objective(p):
            xi = ctx.plan(p, b0)
            xi, _ = ctx.project(xi, b0, scene, iters=K_proj)
            return meta_cost(xi, scene, cfg), xi

        lower = np.concatenate([np.full(m, lo[0]), np.zeros(m)])
        upper = np.concatenate([np.full(m, hi[0]), np.full(m, ctx.cfg.v_max)])
        init = SamplingDistribution(np.concatenate([np.full(m, 0.5 * (lo[0] + hi[0])), np.full(m, 0.5 * ctx.cfg.v_max)]),
                                    np.concatenate([np.full(m, (0.5 * (hi[0] - lo[0])) ** 2),
                                                    np.full(m, (0.5 * ctx.cfg.v_max) ** 2)]))
        res = cem_optimize(objective, init, cem_iters, cem_batch, elite_frac, ss, lower, upper)
        xi = res.best_payload
        taus.append(np.concatenate([W @ xi[:n], W @ xi[n:]]))
        costs.append(res.best_cost)
    return np.array(taus), np.array(costs)


def demo_scene(ctx: PlanningContext, n_obs: int = 4, batch: int = 400, seed: int = 0):
    """Seeded static scene for the projection convergence study.

    Three 4 m lanes (centres 2, 6, 10; centre bounds [1, 11]); ego at y = 2
    moving at 8 m/s; ``n_obs`` static obstacles at x ~ U(25, 90) on random
    lane centres drawn from ``default_rng(100 + seed)``.  Behavioural inputs
    are y_d ~ U(2, 10) and v_d ~ U(0, 10) per segment from ``default_rng(seed)``.
    Returns ``(scene, p, b0)``.
    """
    if n_obs < 0 or n_obs > ctx.cfg.max_obs:
        raise ParameterError(f"n_obs must lie in [0, {ctx.cfg.max_obs}]")
    r = np.random.default_rng(100 + seed)
    xo = np.sort(r.uniform(25.0, 90.0, n_obs))
    yo = r.choice(np.array([2.0, 6.0, 10.0]), n_obs)
    n = ctx.basis.n_steps
    scene = ctx.scene(np.repeat(xo[:, None], n, 1), np.repeat(yo[:, None], n, 1), 1.0, 11.0)
    rng = np.random.default_rng(seed)
    m = ctx.cfg.m_seg
    p = np.hstack([rng.uniform(2.0, 10.0, (batch, m)), rng.uniform(0.0, 10.0, (batch, m))])
    b0 = np.array([0.0, 2.0, 8.0, 0.0, 0.0, 0.0])
    return scene, p, b0
