"""Multi-lane highway simulator with IDM traffic and a double-integrator ego.

Road frame: x along the road, y across it, lanes stacked upward from y = 0 with
centrelines at ``(k + 1/2) * lane_width``.  Neighbours keep their lane and
follow their leader with the intelligent driver model; they do not react to
the ego vehicle.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .basis import TimeGrid
from .errors import ParameterError, SpawnError

OBS_DIM = 55
N_SLOTS = 10
SLOT_WIDTH = 5

SPAWN_GAP = 30.0
SPAWN_RETRIES = 100


@dataclass(frozen=True)
class IdmParams:
    headway: float = 2.0
    a_max: float = 1.5
    b_comf: float = 2.0
    s0: float = 2.0
    delta: float = 4.0


@dataclass(frozen=True)
class ScenarioConfig:
    n_lanes: int = 2
    lane_width: float = 4.0
    density: float = 1.0
    n_vehicles: int = 20
    episode_len: float = 30.0
    sim_dt: float = 0.1
    seed: int = 0
    length: float = 5.0
    width: float = 2.0
    v_max: float = 10.0
    ego_speed: float = 6.0
    ego_lane: int = 0
    first_gap: float = 20.0
    idm: IdmParams = field(default_factory=IdmParams)

    def __post_init__(self):
        if int(self.n_lanes) != self.n_lanes or self.n_lanes < 1:
            raise ParameterError(f"n_lanes must be a positive integer, got {self.n_lanes}")
        if not self.density > 0:
            raise ParameterError(f"density must be positive, got {self.density}")
        if not self.sim_dt > 0:
            raise ParameterError(f"sim_dt must be positive, got {self.sim_dt}")
        if not self.episode_len > 0:
            raise ParameterError("episode_len must be positive")
        if self.n_vehicles < 0:
            raise ParameterError("n_vehicles must be >= 0")
        if not (self.lane_width > 0 and self.length > 0 and self.width > 0 and self.v_max > 0):
            raise ParameterError("lane width, vehicle dimensions and v_max must be positive")
        if not 0 <= self.ego_lane < self.n_lanes:
            raise ParameterError(f"ego_lane {self.ego_lane} outside 0..{self.n_lanes - 1}")

    @property
    def road_width(self) -> float:
        return self.n_lanes * self.lane_width

    def lane_centre(self, k):
        return (np.asarray(k) + 0.5) * self.lane_width

    @property
    def lane_centres(self) -> np.ndarray:
        return self.lane_centre(np.arange(self.n_lanes))


def load_scenario_config(path) -> ScenarioConfig:
    """Read a JSON object whose keys are :class:`ScenarioConfig` fields (``idm`` nested)."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(raw)


def scenario_from_dict(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ParameterError("scenario config must be a JSON object")
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ParameterError(f"unknown scenario keys: {sorted(unknown)}")
    raw = dict(raw)
    if "idm" in raw:
        idm_known = {f.name for f in fields(IdmParams)}
        if not isinstance(raw["idm"], dict) or set(raw["idm"]) - idm_known:
            raise ParameterError(f"idm must be an object with keys among {sorted(idm_known)}")
        raw["idm"] = IdmParams(**raw["idm"])
    try:
        return ScenarioConfig(**raw)
    except TypeError as exc:
        raise ParameterError(str(exc)) from exc


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return asdict(cfg)


@dataclass
class SimState:
    """Ego (x, y, heading, xd, yd) plus neighbour arrays; treat as a value."""

    cfg: ScenarioConfig
    ego: np.ndarray
    nx: np.ndarray
    ny: np.ndarray
    nv: np.ndarray
    lane: np.ndarray
    v_nom: np.ndarray
    t: float = 0.0
    collided: bool = False

    @property
    def n_neighbors(self) -> int:
        return self.nx.size

    def copy(self) -> "SimState":
        return replace(self, ego=self.ego.copy(), nx=self.nx.copy(), ny=self.ny.copy(),
                       nv=self.nv.copy(), lane=self.lane.copy(), v_nom=self.v_nom.copy())

    def same_as(self, other: "SimState") -> bool:
        return (self.cfg == other.cfg and self.t == other.t and self.collided == other.collided
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("ego", "nx", "ny", "nv", "lane", "v_nom")))


def spawn_scenario(cfg: ScenarioConfig) -> SimState:
    """Seeded placement of ``n_vehicles`` neighbours ahead of the ego.

    Vehicles are dealt round-robin to lanes; within a lane they sit at the
    nominal gap ``30 / density`` (lanes staggered by a fraction of it) plus a
    uniform jitter of +-25 % of the gap.  A vehicle that would overlap its
    predecessor is re-jittered, at most 100 times.
    """
    rng = np.random.default_rng(cfg.seed)
    gap = SPAWN_GAP / cfg.density
    jitter = 0.25 * gap
    min_sep = cfg.length + 1.0
    nx, ny, lane = [], [], []
    last = {k: None for k in range(cfg.n_lanes)}
    count = {k: 0 for k in range(cfg.n_lanes)}
    for i in range(cfg.n_vehicles):
        k = i % cfg.n_lanes
        base = cfg.first_gap + k * gap / cfg.n_lanes + count[k] * gap
        for _ in range(SPAWN_RETRIES):
            x = base + rng.uniform(-jitter, jitter)
            ok = x >= cfg.length + 1.0 if k == cfg.ego_lane else True
            if last[k] is not None and x - last[k] < min_sep:
                ok = False
            if ok:
                break
        else:
            raise SpawnError(f"could not place vehicle {i} in lane {k} without overlap "
                             f"after {SPAWN_RETRIES} retries (gap {gap:.2f} m)")
        last[k] = x
        count[k] += 1
        nx.append(x)
        ny.append(float(cfg.lane_centre(k)))
        lane.append(k)
    n = cfg.n_vehicles
    v_nom = rng.uniform(0.4, 0.8, n) * cfg.v_max
    nv = v_nom * rng.uniform(0.8, 1.0, n)
    ego = np.array([0.0, float(cfg.lane_centre(cfg.ego_lane)), 0.0, cfg.ego_speed, 0.0])
    return SimState(cfg=cfg, ego=ego, nx=np.array(nx, dtype=float), ny=np.array(ny, dtype=float),
                    nv=nv, lane=np.array(lane, dtype=int), v_nom=v_nom)


def _idm_accel(state: SimState) -> np.ndarray:
    cfg = state.cfg
    p = cfg.idm
    n = state.n_neighbors
    acc = np.empty(n)
    for i in range(n):
        v = state.nv[i]
        free = 1.0 - (max(v, 0.0) / state.v_nom[i]) ** p.delta
        same = (state.lane == state.lane[i]) & (state.nx > state.nx[i])
        inter = 0.0
        if np.any(same):
            j = np.flatnonzero(same)[np.argmin(state.nx[same])]
            s = max(state.nx[j] - state.nx[i] - cfg.length, 0.1)
            dv = v - state.nv[j]
            s_star = p.s0 + max(0.0, v * p.headway + v * dv / (2.0 * np.sqrt(p.a_max * p.b_comf)))
            inter = (s_star / s) ** 2
        acc[i] = p.a_max * (free - inter)
    return acc


def _corners(x, y, psi, length, width):
    c, s = np.cos(psi), np.sin(psi)
    hl, hw = length / 2, width / 2
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    R = np.array([[c, -s], [s, c]])
    return local @ R.T + np.array([x, y])


def rectangles_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals given as 4x2 corner arrays."""
    for poly in (a, b):
        for i in range(4):
            edge = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def check_collision(state: SimState) -> bool:
    cfg = state.cfg
    x, y, psi = state.ego[:3]
    if y < 0.0 or y > cfg.road_width:
        return True
    ego = _corners(x, y, psi, cfg.length, cfg.width)
    near = np.flatnonzero((np.abs(state.nx - x) < 2 * cfg.length) & (np.abs(state.ny - y) < 2 * cfg.width))
    for j in near:
        if rectangles_overlap(ego, _corners(state.nx[j], state.ny[j], 0.0, cfg.length, cfg.width)):
            return True
    return False


def step(state: SimState, ego_accel: float, ego_lat_accel: float, dt: float | None = None) -> SimState:
    """Advance by ``dt`` (default ``sim_dt``) with ego accelerations (xdd, ydd)."""
    dt = state.cfg.sim_dt if dt is None else dt
    if not dt > 0:
        raise ParameterError("dt must be positive")
    new = state.copy()
    x, y, _, vx, vy = state.ego
    ax, ay = float(ego_accel), float(ego_lat_accel)
    x += vx * dt + 0.5 * ax * dt * dt
    y += vy * dt + 0.5 * ay * dt * dt
    vx += ax * dt
    vy += ay * dt
    psi = np.arctan2(vy, vx) if (vx or vy) else 0.0
    new.ego = np.array([x, y, psi, vx, vy])
    if state.n_neighbors:
        acc = _idm_accel(state)
        v_new = np.clip(state.nv + acc * dt, 0.0, np.maximum(state.v_nom, state.nv))
        new.nx = state.nx + 0.5 * (state.nv + v_new) * dt
        new.nv = v_new
    new.t = state.t + dt
    new.collided = state.collided or check_collision(new)
    return new


def observe(state: SimState) -> np.ndarray:
    """55 features: (heading, yd, xd), ten nearest neighbours, lane-boundary offsets."""
    cfg = state.cfg
    x, y, psi, vx, vy = state.ego
    o = np.zeros(OBS_DIM)
    o[:3] = psi, vy, vx
    if state.n_neighbors:
        dx = state.nx - x
        dy = state.ny - y
        order = np.lexsort((np.arange(dx.size), np.hypot(dx, dy)))[:N_SLOTS]
        for slot, j in enumerate(order):
            base = 3 + SLOT_WIDTH * slot
            o[base : base + SLOT_WIDTH] = dx[j], dy[j], state.nv[j], 0.0, 1.0
    o[-2] = 0.0 - y
    o[-1] = cfg.road_width - y
    return o


def obstacle_slots(obs) -> np.ndarray:
    """(N_SLOTS, 5) view of the neighbour block."""
    return np.asarray(obs, dtype=float)[3 : 3 + N_SLOTS * SLOT_WIDTH].reshape(N_SLOTS, SLOT_WIDTH)


def predict_obstacles(obs, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Constant-velocity paths of the present neighbours, shape (n_present, n_steps).

    Coordinates are in the frame fixed at the ego centre at planning time,
    so an obstacle at ``dx`` with speed ``xd`` sits at ``dx + xd * t``.
    """
    slots = obstacle_slots(obs)
    present = slots[:, 4] > 0.5
    t = grid.times - grid.t0
    s = slots[present]
    xo = s[:, 0:1] + s[:, 2:3] * t
    yo = s[:, 1:2] + s[:, 3:4] * t
    return xo, yo


def write_trace_csv(path, states: list[SimState]):
    """One row per state: t, ego (x, y, heading, xd, yd), collided, then x/y/xd per neighbour."""
    if not states:
        header = ["t", "ego_x", "ego_y", "ego_heading", "ego_xd", "ego_yd", "collided"]
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(header)
        return
    n = states[0].n_neighbors
    header = ["t", "ego_x", "ego_y", "ego_heading", "ego_xd", "ego_yd", "collided"]
    for j in range(n):
        header += [f"n{j}_x", f"n{j}_y", f"n{j}_xd"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in states:
            row = [f"{s.t:.6f}"] + [f"{v:.9g}" for v in s.ego] + [int(s.collided)]
            for j in range(n):
                row += [f"{s.nx[j]:.9g}", f"{s.ny[j]:.9g}", f"{s.nv[j]:.9g}"]
            w.writerow(row)
