"""Behavioural-input batches: fixed grids, Gaussians, CEM and MPPI.

Batches of behavioural inputs are plain ``(B, 2*m_seg)`` arrays laid out as
``[y_d1..y_dm, v_d1..v_dm]``; :func:`to_inputs` converts them to
:class:`~frenetplan.planner.BehavioralInput` objects when needed.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import OptimizationError, ParameterError
from .planner import BehavioralInput

COV_FLOOR = 1e-6
GRID_CAP = 20000


@dataclass(frozen=True)
class GridSpec:
    lateral_offsets: tuple = (0.0,)
    speed_setpoints: tuple = (4.0, 6.0, 8.0, 10.0)
    per_segment: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lateral_offsets", tuple(float(v) for v in self.lateral_offsets))
        object.__setattr__(self, "speed_setpoints", tuple(float(v) for v in self.speed_setpoints))
        if not self.lateral_offsets or not self.speed_setpoints:
            raise ParameterError("grid needs at least one lateral offset and one speed")


def grid_sampler(spec: GridSpec, lanes, m_seg: int = 4, lane_width: float | None = None,
                 cap: int = GRID_CAP) -> np.ndarray:
    """Deterministic Cartesian product over lane centres, offsets and speeds.

    With ``per_segment`` every segment picks its own (lane, offset) and its own
    speed, otherwise one choice is repeated across all ``m_seg`` segments.
    Ordering is lane-major, then offset, then speed.
    """
    centres = np.atleast_1d(np.asarray(lanes, dtype=float))
    if centres.size == 0:
        raise ParameterError("need at least one lane centreline")
    if lane_width is not None and max(abs(o) for o in spec.lateral_offsets) > lane_width / 2:
        raise ParameterError("lateral offsets must stay within half a lane width of the centreline")
    lateral = [c + o for c in centres for o in spec.lateral_offsets]
    speeds = list(spec.speed_setpoints)
    if spec.per_segment:
        size = (len(lateral) * len(speeds)) ** m_seg
    else:
        size = len(lateral) * len(speeds)
    if size > cap:
        raise ParameterError(f"grid would produce {size} samples, above the cap of {cap}")
    rows = []
    if spec.per_segment:
        for ys in itertools.product(lateral, repeat=m_seg):
            for vs in itertools.product(speeds, repeat=m_seg):
                rows.append(list(ys) + list(vs))
    else:
        for y in lateral:
            for v in speeds:
                rows.append([y] * m_seg + [v] * m_seg)
    return np.asarray(rows, dtype=float)


def to_inputs(p_batch) -> list[BehavioralInput]:
    return [BehavioralInput.from_vector(p) for p in np.atleast_2d(p_batch)]


@dataclass
class SamplingDistribution:
    """Diagonal Gaussian over the behavioural vector, optionally followed by lambda."""

    mean: np.ndarray
    cov_diag: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov_diag = np.broadcast_to(np.asarray(self.cov_diag, dtype=float), self.mean.shape).copy()
        if not np.all(self.cov_diag > 0):
            raise ParameterError("variances must be positive")

    @property
    def dim(self) -> int:
        return self.mean.size


def gaussian_sampler(dist: SamplingDistribution, n: int, seed, n_p: int | None = None,
                     lower=None, upper=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` samples and split them into (p, lambda_init).

    The first ``n_p`` entries (default: all) form p and are clamped to
    ``[lower, upper]``; the remainder is the multiplier warm start.
    """
    if n < 1:
        raise ParameterError("need n >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal((n, dist.dim))
    x = dist.mean + z * np.sqrt(dist.cov_diag)
    n_p = dist.dim if n_p is None else n_p
    p = x[:, :n_p]
    if lower is not None or upper is not None:
        lo = -np.inf if lower is None else lower
        hi = np.inf if upper is None else upper
        p = np.clip(p, lo, hi)
    return p, x[:, n_p:]


@dataclass
class CemResult:
    best_p: np.ndarray
    best_cost: float
    best_payload: object
    mean: np.ndarray
    cov_diag: np.ndarray
    history: list = field(default_factory=list)


def _evaluate(objective, samples):
    out = objective(samples)
    if isinstance(out, tuple):
        costs, payload = out
    else:
        costs, payload = out, None
    costs = np.asarray(costs, dtype=float).reshape(-1)
    if costs.size != samples.shape[0]:
        raise ParameterError(f"objective returned {costs.size} costs for {samples.shape[0]} samples")
    costs = np.where(np.isfinite(costs), costs, np.inf)
    return costs, payload


def cem_optimize(objective: Callable, init: SamplingDistribution, iters: int = 20, batch_size: int = 5000,
                 elite_frac: float = 0.1, seed=0, lower=None, upper=None,
                 cov_floor: float = COV_FLOOR) -> CemResult:
    """Cross-entropy minimization of a batched objective.

    ``objective(samples)`` returns costs of shape (B,) or ``(costs, payload)``
    where ``payload[j]`` (e.g. the projected trajectory) is carried along with
    the best sample.  The initial batch is drawn from ``init``; each of the
    ``iters`` iterations refits mean and diagonal covariance to the elites of
    the latest batch and draws a new one.  The best sample ever seen wins.
    """
    if not 0 < elite_frac < 1:
        raise ParameterError("elite_frac must lie in (0, 1)")
    if batch_size < 2:
        raise ParameterError("batch_size must be >= 2")
    if iters < 0:
        raise ParameterError("iters must be >= 0")
    rng = np.random.default_rng(seed)
    n_elite = max(1, int(round(elite_frac * batch_size)))
    mean = init.mean.copy()
    cov = init.cov_diag.copy()
    best_p, best_cost, best_payload = None, np.inf, None
    history = []
    samples = costs = None
    for it in range(iters + 1):
        if it > 0:
            finite = np.isfinite(costs)
            order = np.argsort(costs, kind="stable")[: min(n_elite, int(finite.sum()))]
            elites = samples[order]
            mean = elites.mean(axis=0)
            cov = np.maximum(elites.var(axis=0), cov_floor)
        samples, _ = gaussian_sampler(SamplingDistribution(mean, cov), batch_size, rng, lower=lower, upper=upper)
        costs, payload = _evaluate(objective, samples)
        if not np.any(np.isfinite(costs)):
            raise OptimizationError(f"objective is non-finite on every sample of CEM iteration {it}")
        j = int(np.argmin(costs))
        history.append(float(costs[j]))
        if costs[j] < best_cost:
            best_cost = float(costs[j])
            best_p = samples[j].copy()
            best_payload = None if payload is None else payload[j]
    return CemResult(best_p=best_p, best_cost=best_cost, best_payload=best_payload,
                     mean=mean, cov_diag=cov, history=history)


@dataclass
class MppiState:
    mean_controls: np.ndarray
    cov_diag: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        self.mean_controls = np.asarray(self.mean_controls, dtype=float).reshape(-1)
        self.cov_diag = np.broadcast_to(np.asarray(self.cov_diag, dtype=float), self.mean_controls.shape).copy()
        if not np.all(self.cov_diag > 0):
            raise ParameterError("MPPI covariance must be positive")
        if not self.temperature > 0:
            raise ParameterError("MPPI temperature must be positive")


def mppi_sample(state: MppiState, n: int, rng, antithetic: bool = True) -> np.ndarray:
    """Samples ``mean + eps`` with ``eps ~ N(0, diag(cov))``; ``n`` must be even when antithetic."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if antithetic:
        if n % 2:
            raise ParameterError("antithetic sampling needs an even sample count")
        half = rng.standard_normal((n // 2, state.cov_diag.size)) * np.sqrt(state.cov_diag)
        eps = np.concatenate([half, -half])
    else:
        eps = rng.standard_normal((n, state.cov_diag.size)) * np.sqrt(state.cov_diag)
    return state.mean_controls + eps


def mppi_weights(costs, temperature: float) -> np.ndarray:
    costs = np.asarray(costs, dtype=float)
    z = -(costs - costs.min()) / temperature
    w = np.exp(z)
    return w / w.sum()


def mppi_step(state: MppiState, samples, costs, cov_floor: float = COV_FLOOR,
              adapt_cov: bool = True) -> MppiState:
    """Exponentially weighted refit of the sampling mean (and covariance)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    costs = np.asarray(costs, dtype=float).reshape(-1)
    if costs.size != samples.shape[0]:
        raise ParameterError(f"{samples.shape[0]} samples but {costs.size} costs")
    if not np.all(np.isfinite(costs)):
        raise ParameterError("MPPI costs must be finite")
    w = mppi_weights(costs, state.temperature)
    mean = w @ samples
    if adapt_cov:
        cov = np.maximum(w @ (samples - mean) ** 2, cov_floor)
    else:
        cov = state.cov_diag.copy()
    return MppiState(mean_controls=mean, cov_diag=cov, temperature=state.temperature)


# expert datasets: one JSON object per line, {"o": [55 floats], "tau_e": [2*n_steps floats]}

OBS_DIM = 55


def write_expert_dataset(path, observations, trajectories):
    O = np.atleast_2d(np.asarray(observations, dtype=float))
    T = np.atleast_2d(np.asarray(trajectories, dtype=float))
    if O.shape[0] != T.shape[0]:
        raise ParameterError("observation and trajectory counts differ")
    if O.shape[1] != OBS_DIM:
        raise ParameterError(f"observations must have {OBS_DIM} entries")
    with open(path, "w") as fh:
        for o, t in zip(O, T):
            fh.write(json.dumps({"o": o.tolist(), "tau_e": t.tolist()}) + "\n")


def read_expert_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    obs, traj = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if len(rec["o"]) != OBS_DIM:
                raise ParameterError(f"line {lineno}: observation has {len(rec['o'])} entries")
            obs.append(rec["o"])
            traj.append(rec["tau_e"])
    if not obs:
        raise ParameterError(f"{path} holds no records")
    T = np.asarray(traj, dtype=float)
    if T.ndim != 2 or T.shape[1] % 2:
        raise ParameterError("tau_e records must all have the same even length")
    return np.asarray(obs, dtype=float), T
